use super::{Sweep, TrialReport, TrialRow};
use crate::error::{config, Result};
use crate::kwta::{k_from_gamma, winners};
use crate::par;
use crate::tensor::{dot, gaussian_matrix, Rng};

/// Binary data points whose entries are 1 with probability `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliConfig {
    pub n_points: usize,
    pub m: usize,
    pub p: f64,
    pub l: usize,
    pub gamma: f64,
    pub trials: usize,
    pub seed: u64,
}

impl BernoulliConfig {
    /// Admissible `p` is `(ln N / m, 0.5]`: the proof's constant factor on the
    /// lower end is dropped so desk-sized `m` leaves a nonempty range.
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 || self.m < 2 {
            return Err(config(format!(
                "need N >= 2 points in m >= 2 dimensions, got N={} m={}",
                self.n_points, self.m
            )));
        }
        let lo = (self.n_points as f64).ln() / self.m as f64;
        if !(self.p > lo && self.p <= 0.5) {
            return Err(config(format!(
                "p must lie in ({lo:.4}, 0.5] for N={} m={}, got {}",
                self.n_points, self.m, self.p
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 0.48) {
            return Err(config(format!("gamma must lie in (0, 0.48), got {}", self.gamma)));
        }
        if self.l < self.m {
            return Err(config(format!("need l >= m, got l={} m={}", self.l, self.m)));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!(
            "n={};m={};p={};l={};gamma={}",
            self.n_points, self.m, self.p, self.l, self.gamma
        )
    }
}

/// `N` distinct nonzero binary points; duplicates and zero vectors are redrawn.
fn bernoulli_points(n: usize, m: usize, p: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    while pts.len() < n {
        let v: Vec<f64> = (0..m).map(|_| if rng.bernoulli(p) { 1.0 } else { 0.0 }).collect();
        if v.iter().any(|&x| x != 0.0) && !pts.contains(&v) {
            pts.push(v);
        }
    }
    pts
}

/// Fraction of trials in which all `N` Bernoulli points get pairwise distinct
/// activation patterns. Trial statistic: number of colliding pairs.
pub fn bernoulli_experiment(cfg: &BernoulliConfig) -> Result<Sweep> {
    cfg.validate()?;
    let k = k_from_gamma(cfg.gamma, cfg.l)?;
    let rows = par::map_indexed(cfg.trials, |t| -> Result<TrialRow> {
        let mut rng = Rng::for_trial(cfg.seed, t as u64);
        let xs = bernoulli_points(cfg.n_points, cfg.m, cfg.p, &mut rng);
        let w = gaussian_matrix(cfg.l, cfg.m, 1.0 / cfg.l as f64, &mut rng)?;
        let pats = xs
            .iter()
            .map(|x| winners(&w.data().chunks_exact(cfg.m).map(|r| dot(r, x)).collect::<Vec<_>>(), k))
            .collect::<Result<Vec<_>>>()?;
        let collisions = (0..pats.len())
            .flat_map(|i| (i + 1..pats.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| pats[i] == pats[j])
            .count();
        Ok(TrialRow {
            experiment: "bernoulli".into(),
            trial: t,
            seed: cfg.seed.wrapping_add(t as u64),
            success: collisions == 0,
            statistic: collisions as f64,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Sweep {
        report: TrialReport::from_rows("bernoulli", cfg.describe(), cfg.seed, &rows),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> BernoulliConfig {
        BernoulliConfig {
            n_points: 8,
            m: 256,
            p: 0.5,
            l: 1024,
            gamma: 0.2,
            trials: 10,
            seed: 1,
        }
    }

    #[test]
    fn guards() {
        assert!(cfg().validate().is_ok());
        assert!(BernoulliConfig { gamma: 0.48, ..cfg() }.validate().is_err());
        assert!(BernoulliConfig { p: 0.6, ..cfg() }.validate().is_err());
        assert!(BernoulliConfig { p: 0.005, ..cfg() }.validate().is_err());
        assert!(BernoulliConfig { n_points: 1, ..cfg() }.validate().is_err());
    }

    #[test]
    fn points_are_distinct_even_when_collisions_are_likely() {
        let mut rng = Rng::new(0);
        let pts = bernoulli_points(2, 2, 0.5, &mut rng);
        assert_ne!(pts[0], pts[1]);
        let pts = bernoulli_points(3, 2, 0.5, &mut rng);
        assert_eq!(pts.len(), 3);
    }

    #[test]
    fn distinct_points_get_distinct_patterns() {
        let s = bernoulli_experiment(&cfg()).unwrap();
        assert_eq!(s.report.trials, 10);
        assert!(s.report.fraction >= 0.9, "{}", s.report.summary_line());
    }
}
