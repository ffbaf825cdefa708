use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use excess_deaths::simgen::{simulate, write_simulation, AnchorSpec, MovementSpec, PopulationSpec, Scenario};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_excess-deaths"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn d(y: i32, m: u32, day: u32) -> chrono::NaiveDate {
    chrono::NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

/// Population drained by air travel after the emergency, as in the
/// bundled scenario file.
fn migration_scenario(seed: u64) -> Scenario {
    let table = [
        ("2017-09", 194_571, 149_848),
        ("2017-10", 258_662, 159_465),
        ("2017-11", 265_606, 215_356),
        ("2017-12", 354_865, 332_710),
        ("2018-01", 289_231, 359_921),
    ];
    Scenario {
        population: PopulationSpec::Anchored {
            anchors: vec![
                AnchorSpec { date: d(2014, 7, 1), population: 3.53e6 },
                AnchorSpec { date: d(2017, 7, 1), population: 3.337177e6 },
            ],
            movements: table
                .iter()
                .map(|(m, l, a)| MovementSpec { month: m.to_string(), leaving: *l, arriving: *a })
                .collect(),
        },
        ..Scenario::example(seed)
    }
}

fn data_dir(dir: &Path, scenario: &Scenario) -> PathBuf {
    let data = dir.join("data");
    write_simulation(&data, scenario, &simulate(scenario).unwrap()).unwrap();
    data
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn model2_args<'a>(data: &'a Path, out: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = [
        "model2",
        "--deaths",
        s(&data.join("deaths.csv")),
        "--anchors",
        s(&data.join("population_anchors.csv")),
        "--emergency",
        "2017-09-20",
        "--extrapolate",
        "hold",
        "--draws",
        "2000",
        "--seed",
        "9",
        "--out",
        s(out),
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn model2_writes_every_artifact_with_expected_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path(), &migration_scenario(3));
    let out = tmp.path().join("out");
    let movements = data.join("net_movement.csv");
    let o = bin()
        .args(model2_args(&data, &out, &["--movements", s(&movements)]))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "model2_fit.json",
        "excess_daily.csv",
        "excess_cumulative.csv",
        "fit_band.svg",
        "cumulative_band.svg",
        "population.svg",
        "run_manifest.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }

    let fit = json(&out.join("model2_fit.json"));
    for key in [
        "config",
        "coefficients",
        "periods",
        "smoothing",
        "edf",
        "deviance",
        "diagnostics",
        "cumulative_totals",
        "seed",
        "draws",
    ] {
        assert!(fit.get(key).is_some(), "model2_fit.json lacks {key}");
    }
    let periods = fit["periods"].as_array().unwrap();
    assert_eq!(periods.len(), 6);
    for p in periods {
        for key in ["estimate", "se", "multiplicative_effect", "effect_lo", "effect_hi", "z", "p", "p_display"] {
            assert!(p.get(key).is_some(), "period entry lacks {key}");
        }
        let est = p["estimate"].as_f64().unwrap();
        assert!((p["multiplicative_effect"].as_f64().unwrap() - est.exp()).abs() < 1e-12);
    }
    assert_eq!(fit["periods"][0]["p_display"], "<0.0001");
    let diag = &fit["diagnostics"];
    assert_eq!(diag["acf"].as_array().unwrap().len(), 30);
    assert!(diag["dispersion"].as_f64().unwrap() > 0.0);
    assert_eq!(fit["config"]["seed"], 9);
    assert!(fit["config"].get("out").is_none());

    let daily = fs::read_to_string(out.join("excess_daily.csv")).unwrap();
    let mut lines = daily.lines();
    assert_eq!(
        lines.next().unwrap(),
        "date,period,excess,pointwise_lo,pointwise_hi,simultaneous_lo,simultaneous_hi"
    );
    assert_eq!(lines.count(), 162);
    let cumulative = fs::read_to_string(out.join("excess_cumulative.csv")).unwrap();
    let last: Vec<f64> = cumulative
        .lines()
        .last()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    // simultaneous ⊇ pointwise ∋ estimate
    assert!(last[3] <= last[1] && last[1] <= last[0] && last[0] <= last[2] && last[2] <= last[4]);

    let manifest = json(&out.join("run_manifest.json"));
    assert_eq!(manifest["command"], "model2");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 3);
    assert!(inputs.iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));
    assert!(fs::read_to_string(out.join("fit_band.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn rerun_from_manifest_reproduces_data_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path(), &Scenario::example(5));
    let first = tmp.path().join("first");
    assert!(bin().args(model2_args(&data, &first, &[])).output().unwrap().status.success());
    let second = tmp.path().join("second");
    let o = run(&["model2", "--config", s(&first.join("run_manifest.json")), "--out", s(&second)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model2_fit.json", "excess_daily.csv", "excess_cumulative.csv", "run_manifest.json"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn population_adjustment_raises_late_effects() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path(), &migration_scenario(21));
    let (on, off) = (tmp.path().join("on"), tmp.path().join("off"));
    let movements = data.join("net_movement.csv");
    assert!(bin()
        .args(model2_args(&data, &on, &["--movements", s(&movements)]))
        .output()
        .unwrap()
        .status
        .success());
    assert!(bin()
        .args(model2_args(&data, &off, &["--movements", s(&movements), "--adjust-population", "false"]))
        .output()
        .unwrap()
        .status
        .success());
    let est = |dir: &Path, l: usize| json(&dir.join("model2_fit.json"))["periods"][l - 1]["estimate"].as_f64().unwrap();
    // By the end of December the adjusted population is 6.5% below the
    // vintage path, so the unadjusted fit attributes that many fewer deaths
    // per person to the period.
    let displacement = (3_337_177.0f64 / (3_337_177.0 - 216_325.0)).ln();
    let gap = est(&on, 4) - est(&off, 4);
    assert!(gap > 0.5 * displacement && gap < 1.5 * displacement, "gap {gap}");
    assert!(est(&on, 1) - est(&off, 1) > 0.0);
}

#[test]
fn missing_input_exits_one_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "model1",
        "--deaths",
        "/no/such/deaths.csv",
        "--emergency",
        "2017-09-20",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/no/such/deaths.csv"), "{err}");
    assert!(!err.contains("panicked"));
}

#[test]
fn missing_setting_and_bad_flag_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["model2", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    assert_eq!(run(&["model1", "--alpha", "lots"]).status.code(), Some(1));
}

#[test]
fn model1_without_effect_straddles_zero_and_defaults_alpha() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = Scenario {
        effects: Vec::new(),
        seasonal_amplitude: 0.0,
        ..Scenario::example(8)
    };
    let data = data_dir(tmp.path(), &scenario);
    let out = tmp.path().join("m1");
    let o = run(&[
        "model1",
        "--deaths",
        s(&data.join("deaths.csv")),
        "--emergency",
        "2017-09-20",
        "--pre-start",
        "2017-01-01",
        "--post-end",
        "2017-12-31",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("model1_result.json"));
    assert_eq!(r["alpha"], 0.05);
    let ci = r["ci_rho"].as_array().unwrap();
    assert!(ci[0].as_f64().unwrap() < 0.0 && ci[1].as_f64().unwrap() > 0.0);
    assert!(r["profile"].as_array().unwrap().len() > 100);
    let cum = fs::read_to_string(out.join("model1_cumulative.csv")).unwrap();
    assert_eq!(cum.lines().count(), 1 + 103);
    assert!(out.join("model1_profile.svg").exists());
}

#[test]
fn glrt_prints_and_records_the_test() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path(), &Scenario::example(12));
    let out = tmp.path().join("g");
    let o = run(&[
        "glrt",
        "--deaths",
        s(&data.join("deaths.csv")),
        "--anchors",
        s(&data.join("population_anchors.csv")),
        "--emergency",
        "2017-09-20",
        "--null-periods",
        "1,2",
        "--alt-periods",
        "1,2,3",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("statistic") && stdout.contains("df 1"), "{stdout}");
    let r = json(&out.join("glrt.json"));
    assert_eq!(r["df"], 1);
    assert_eq!(r["smoothing"], "pinned");
    assert!(r["statistic"].as_f64().unwrap() >= 0.0);

    let o = run(&[
        "glrt",
        "--deaths",
        s(&data.join("deaths.csv")),
        "--anchors",
        s(&data.join("population_anchors.csv")),
        "--emergency",
        "2017-09-20",
        "--null-periods",
        "1,4",
        "--alt-periods",
        "1,2,3",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not nested"));
}

#[test]
fn population_reports_month_end_declines() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("anchors.csv"), "date,population,kind\n2017-07-01,3337177,census_vintage\n").unwrap();
    fs::write(
        tmp.path().join("movements.csv"),
        "month,leaving,arriving\n2017-09,194571,149848\n2017-10,258662,159465\n2017-11,265606,215356\n2017-12,354865,332710\n2018-01,289231,359921\n",
    )
    .unwrap();
    let out = tmp.path().join("p");
    let o = run(&[
        "population",
        "--anchors",
        s(&tmp.path().join("anchors.csv")),
        "--movements",
        s(&tmp.path().join("movements.csv")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for pct in ["1.34", "4.31", "5.82", "6.48", "4.36"] {
        assert!(stdout.contains(pct), "{stdout}");
    }
    let r = json(&out.join("population.json"));
    assert_eq!(r["monthend_declines"].as_array().unwrap().len(), 5);
    assert!(out.join("population.csv").exists() && out.join("population.svg").exists());
}

#[test]
fn config_file_is_used_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path(), &Scenario::example(2));
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "deaths = \"data/deaths.csv\"\nemergency = \"2017-09-20\"\npre_start = \"2017-01-01\"\nalpha = 0.2\nout = \"from_config\"\n",
    )
    .unwrap();
    let o = run(&["model1", "--config", s(&cfg), "--alpha", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&tmp.path().join("from_config/model1_result.json"));
    assert_eq!(r["alpha"], 0.1);
    assert_eq!(r["config"]["deaths"], s(&data.join("deaths.csv")));
}

#[test]
fn simulate_emits_ingest_files_and_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("scenario.toml");
    fs::write(&scenario, migration_scenario(4).to_toml_string()).unwrap();
    let out = tmp.path().join("sim");
    let o = run(&["simulate", "--scenario", s(&scenario), "--seed", "77", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["deaths.csv", "population_anchors.csv", "net_movement.csv", "truth.json", "run_manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(json(&out.join("truth.json"))["seed"], 77);
    assert_eq!(json(&out.join("run_manifest.json"))["seed"], 77);
}

#[test]
fn bundled_scenario_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/island_emergency.toml");
    let sc = Scenario::load(&path).unwrap();
    assert_eq!(sc.effects.len(), 4);
    assert!(sc.movements().unwrap().len() == 5);
}

#[test]
fn separation_exits_two_with_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path(), &Scenario::example(6));
    // Empty the last period so its indicator coefficient diverges.
    let deaths = fs::read_to_string(data.join("deaths.csv")).unwrap();
    let edited: String = deaths
        .lines()
        .map(|l| if l.starts_with("2018-02") { format!("{},0\n", &l[..10]) } else { format!("{l}\n") })
        .collect();
    fs::write(data.join("deaths.csv"), edited).unwrap();
    let out = tmp.path().join("out");
    let o = bin().args(model2_args(&data, &out, &[])).output().unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("nonconvergence_trace.json").exists());
}
