//! Monte Carlo checks of the discontinuity geometry of k-WTA layers.
//!
//! Every sweep runs independent trials, trial `t` drawing from
//! `Rng::for_trial(seed, t)`, and aggregates them in trial order, so reports
//! are identical however the trials are spread over threads.

mod bernoulli;
mod dense;
mod disjoint;
mod fit1d;
mod geometry;
mod jump;
mod landscape;
mod region;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::attacks::csv_err;
use crate::error::Result;

pub use bernoulli::{bernoulli_experiment, BernoulliConfig};
pub use dense::{dense_discontinuity_trial, DenseTrialConfig};
pub use disjoint::{
    admissible_points, disjoint_pattern_trial, fit_labels, is_admissible, label_fit_error, DisjointTrialConfig,
};
pub use fit1d::{count_jumps, fit_1d_demo, Fit1dConfig, Fit1dReport};
pub use geometry::{cosine, perpendicular_perturb};
pub use jump::{jump_sweep, measure_jump, JumpConfig, JumpReport, JumpSweep, JumpSweepRow};
pub use landscape::{laplacian_sign_changes, loss_landscape, Landscape};
pub use region::{affine_region_check, RegionCheck};

/// Raw outcome of one Monte Carlo trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub experiment: String,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    /// Experiment-specific statistic (e.g. mean pattern overlap).
    pub statistic: f64,
}

/// Aggregated outcome of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub experiment: String,
    /// `key=value` pairs of the configuration, `;`-separated.
    pub config: String,
    pub trials: usize,
    pub successes: usize,
    pub fraction: f64,
    /// Binomial standard error of `fraction`.
    pub std_err: f64,
    pub mean_statistic: f64,
    pub max_statistic: f64,
    pub seed: u64,
}

impl TrialReport {
    pub fn from_rows(experiment: &str, config: String, seed: u64, rows: &[TrialRow]) -> Self {
        let trials = rows.len();
        let successes = rows.iter().filter(|r| r.success).count();
        let fraction = if trials == 0 {
            0.0
        } else {
            successes as f64 / trials as f64
        };
        let std_err = if trials == 0 {
            0.0
        } else {
            (fraction * (1.0 - fraction) / trials as f64).sqrt()
        };
        let stats = rows.iter().map(|r| r.statistic).filter(|s| s.is_finite());
        let (sum, count, max) = stats.fold((0.0, 0usize, f64::NEG_INFINITY), |(s, c, m), v| {
            (s + v, c + 1, m.max(v))
        });
        TrialReport {
            experiment: experiment.to_string(),
            config,
            trials,
            successes,
            fraction,
            std_err,
            mean_statistic: if count == 0 { f64::NAN } else { sum / count as f64 },
            max_statistic: if count == 0 { f64::NAN } else { max },
            seed,
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{} [{}] seed={}: {}/{} = {:.4} (±{:.4}), statistic mean {:.6} max {:.6}",
            self.experiment,
            self.config,
            self.seed,
            self.successes,
            self.trials,
            self.fraction,
            self.std_err,
            self.mean_statistic,
            self.max_statistic
        )
    }
}

/// A sweep's summary plus its raw trial rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub report: TrialReport,
    pub rows: Vec<TrialRow>,
}

/// Serializes any sequence of rows as CSV with a header.
pub fn write_csv<R: Serialize>(rows: &[R], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv<R: Serialize>(rows: &[R], path: impl AsRef<Path>) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

/// `value` is non-decreasing across `reports` up to `sigmas` combined standard errors.
pub fn non_decreasing_within(reports: &[TrialReport], sigmas: f64) -> bool {
    reports.windows(2).all(|w| {
        let tol = sigmas * (w[0].std_err.powi(2) + w[1].std_err.powi(2)).sqrt();
        w[1].fraction >= w[0].fraction - tol
    })
}
