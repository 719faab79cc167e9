use super::geometry::perpendicular_perturb;
use super::{Sweep, TrialReport, TrialRow};
use crate::error::{config, Result};
use crate::kwta::winners;
use crate::par;
use crate::tensor::{gaussian_matrix, matvec, Rng, Tensor};

/// One point of the dense-layer discontinuity sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrialConfig {
    pub m: usize,
    pub l: usize,
    pub gamma: f64,
    pub beta: f64,
    pub trials: usize,
    pub seed: u64,
}

impl DenseTrialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 0.48) {
            return Err(config(format!("gamma must lie in (0, 0.48), got {}", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if self.m < 2 || self.l < self.m {
            return Err(config(format!("need l >= m >= 2, got m={} l={}", self.m, self.l)));
        }
        if (self.gamma * self.l as f64).floor() < 1.0 {
            return Err(config(format!(
                "gamma * l = {} leaves no winner",
                self.gamma * self.l as f64
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        (self.gamma * self.l as f64).floor() as usize
    }

    fn describe(&self) -> String {
        format!("m={};l={};gamma={};beta={}", self.m, self.l, self.gamma, self.beta)
    }
}

/// Fraction of trials in which a perpendicular move of relative size `beta`
/// changes the activation pattern of `W x` (`W ~ N(0, 1/l)`, `b = 0`).
///
/// The trial statistic is the fraction of winners shared by both patterns.
pub fn dense_discontinuity_trial(cfg: &DenseTrialConfig) -> Result<Sweep> {
    cfg.validate()?;
    let k = cfg.k();
    let rows = par::map_indexed(cfg.trials, |t| -> Result<TrialRow> {
        let mut rng = Rng::for_trial(cfg.seed, t as u64);
        let w = gaussian_matrix(cfg.l, cfg.m, 1.0 / cfg.l as f64, &mut rng)?;
        let x = rng.unit_vector(cfg.m);
        let xp = perpendicular_perturb(&x, cfg.beta, &mut rng)?;
        let a = winners(matvec(&w, &Tensor::vector(x))?.data(), k)?;
        let b = winners(matvec(&w, &Tensor::vector(xp))?.data(), k)?;
        let shared = a.iter().filter(|i| b.binary_search(i).is_ok()).count();
        Ok(TrialRow {
            experiment: "dense".into(),
            trial: t,
            seed: cfg.seed.wrapping_add(t as u64),
            success: a != b,
            statistic: shared as f64 / k as f64,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Sweep {
        report: TrialReport::from_rows("dense", cfg.describe(), cfg.seed, &rows),
        rows,
    })
}
