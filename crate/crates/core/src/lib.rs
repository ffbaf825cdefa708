//! Excess-death estimation after an emergency from daily death counts and
//! population data.
//!
//! Two models are provided:
//!
//! - [`profile`]: a before/after Poisson comparison with a profile-likelihood
//!   interval for the excess death rate, for when only a few days of data are
//!   available.
//! - [`gam`] + [`excess`]: a penalized Poisson log-linear model with a
//!   population offset, post-emergency period indicators, a cyclic seasonal
//!   smooth and a year trend, with excess deaths and their intervals obtained
//!   by simulating from the approximate coefficient posterior.
//!
//! [`ingest`] builds the daily population (optionally adjusted for net
//! migration) and [`simgen`] generates synthetic data with known truth.

pub mod basis;
pub mod cli;
pub mod error;
pub mod excess;
pub mod gam;
pub mod ingest;
pub mod linalg;
pub mod profile;
pub mod simgen;
pub mod svg;
pub mod timeseries;

pub use error::{Error, Result};
pub use timeseries::{DailyCountSeries, PeriodPartition, PopulationSeries};
