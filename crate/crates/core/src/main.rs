fn main() {
    std::process::exit(excess_deaths::cli::run_from_args(std::env::args_os()));
}
