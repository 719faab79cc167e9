use super::geometry::cosine;
use super::{Sweep, TrialReport, TrialRow};
use crate::error::{arg, config, Error, Result};
use crate::kwta::{winners, ActivationPattern};
use crate::par;
use crate::tensor::{dot, gaussian_matrix, Rng, Tensor};

/// Rejection-sampling attempts allowed per point set.
pub const RETRY_BUDGET: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DisjointTrialConfig {
    pub m: usize,
    pub l: usize,
    pub k: usize,
    pub n_points: usize,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
}

impl DisjointTrialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.5 && self.alpha < 1.0) {
            return Err(config(format!("alpha must lie in [0.5, 1), got {}", self.alpha)));
        }
        if self.n_points == 0 || self.m < 2 {
            return Err(config(format!(
                "need N >= 1 points in m >= 2 dimensions, got N={} m={}",
                self.n_points, self.m
            )));
        }
        if self.k == 0 || self.k * self.n_points > self.l {
            return Err(config(format!(
                "{} disjoint patterns of size {} cannot fit in width {}",
                self.n_points, self.k, self.l
            )));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!(
            "m={};l={};k={};n={};alpha={}",
            self.m, self.l, self.k, self.n_points, self.alpha
        )
    }
}

/// `n` unit vectors in `R^m` with pairwise cosine at most `alpha`, by
/// rejection sampling of uniform unit vectors.
pub fn admissible_points(m: usize, n: usize, alpha: f64, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut attempts = 0;
    while pts.len() < n {
        if attempts == RETRY_BUDGET {
            return Err(config(format!(
                "no {n} points with pairwise cosine <= {alpha} in R^{m} after {RETRY_BUDGET} draws"
            )));
        }
        attempts += 1;
        let v = rng.unit_vector(m);
        if pts.iter().all(|p| cosine(p, &v) <= alpha) {
            pts.push(v);
        }
    }
    Ok(pts)
}

/// Whether every pair of `points` has cosine at most `alpha`.
pub fn is_admissible(points: &[Vec<f64>], alpha: f64) -> bool {
    points
        .iter()
        .enumerate()
        .all(|(i, a)| points[i + 1..].iter().all(|b| cosine(a, b) <= alpha))
}

fn preactivations(w: &Tensor, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = w.shape()[1];
    xs.iter()
        .map(|x| {
            if x.len() != m {
                return Err(arg(format!("point of dimension {} for W with {m} columns", x.len())));
            }
            Ok(w.data().chunks_exact(m).map(|row| dot(row, x)).collect())
        })
        .collect()
}

/// Output vector `v` with `<v, phi_k(W x_i)> = z_i` for every `i`.
///
/// Needs pairwise disjoint activation patterns; `v` is zero except at one
/// representative winner per point, where `v_t = z_i / (W_t x_i)`.
pub fn fit_labels(w: &Tensor, xs: &[Vec<f64>], zs: &[f64], k: usize) -> Result<Vec<f64>> {
    if xs.len() != zs.len() {
        return Err(arg(format!("{} points but {} targets", xs.len(), zs.len())));
    }
    let l = w.shape()[0];
    let ys = preactivations(w, xs)?;
    let pats = ys
        .iter()
        .map(|y| ActivationPattern::new(winners(y, k)?, l))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..pats.len() {
        for j in i + 1..pats.len() {
            if !pats[i].is_disjoint(&pats[j]) {
                return Err(Error::Precondition(format!(
                    "activation patterns of points {i} and {j} overlap"
                )));
            }
        }
    }
    let mut v = vec![0.0; l];
    for ((y, p), &z) in ys.iter().zip(&pats).zip(zs) {
        if z == 0.0 {
            continue;
        }
        let t = p
            .indices()
            .iter()
            .copied()
            .max_by(|&a, &b| y[a].abs().total_cmp(&y[b].abs()))
            .expect("k >= 1");
        if y[t] == 0.0 {
            return Err(Error::Precondition(
                "every winner of a point has zero pre-activation".into(),
            ));
        }
        v[t] = z / y[t];
    }
    Ok(v)
}

/// `max_i |<v, phi_k(W x_i)> - z_i|`.
pub fn label_fit_error(w: &Tensor, xs: &[Vec<f64>], zs: &[f64], k: usize, v: &[f64]) -> Result<f64> {
    let ys = preactivations(w, xs)?;
    let mut worst = 0.0f64;
    for (y, &z) in ys.iter().zip(zs) {
        let out: f64 = winners(y, k)?.into_iter().map(|t| v[t] * y[t]).sum();
        worst = worst.max((out - z).abs());
    }
    Ok(worst)
}

/// Fraction of trials in which `N` well-separated points get pairwise
/// disjoint activation patterns. Trial statistic: mean pairwise overlap.
///
/// On each fully disjoint trial the label-fitting construction is also run
/// with targets drawn from `U[-1, 1]`; its worst error over all those trials
/// is returned alongside the sweep.
pub fn disjoint_pattern_trial(cfg: &DisjointTrialConfig) -> Result<(Sweep, Option<f64>)> {
    cfg.validate()?;
    let outcomes = par::map_indexed(cfg.trials, |t| -> Result<(TrialRow, Option<f64>)> {
        let mut rng = Rng::for_trial(cfg.seed, t as u64);
        let xs = admissible_points(cfg.m, cfg.n_points, cfg.alpha, &mut rng)?;
        let w = gaussian_matrix(cfg.l, cfg.m, 1.0 / cfg.l as f64, &mut rng)?;
        let ys = preactivations(&w, &xs)?;
        let pats = ys
            .iter()
            .map(|y| ActivationPattern::new(winners(y, cfg.k)?, cfg.l))
            .collect::<Result<Vec<_>>>()?;
        let (mut overlap, mut pairs) = (0usize, 0usize);
        for i in 0..pats.len() {
            for j in i + 1..pats.len() {
                overlap += pats[i].intersection_len(&pats[j]);
                pairs += 1;
            }
        }
        let success = overlap == 0;
        let fit = if success {
            let zs: Vec<f64> = (0..cfg.n_points).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let v = fit_labels(&w, &xs, &zs, cfg.k)?;
            Some(label_fit_error(&w, &xs, &zs, cfg.k, &v)?)
        } else {
            None
        };
        let row = TrialRow {
            experiment: "disjoint".into(),
            trial: t,
            seed: cfg.seed.wrapping_add(t as u64),
            success,
            statistic: if pairs == 0 { 0.0 } else { overlap as f64 / pairs as f64 },
        };
        Ok((row, fit))
    });
    let mut rows = Vec::with_capacity(cfg.trials);
    let mut worst: Option<f64> = None;
    for o in outcomes {
        let (row, fit) = o?;
        if let Some(e) = fit {
            worst = Some(worst.map_or(e, |w| w.max(e)));
        }
        rows.push(row);
    }
    let report = TrialReport::from_rows("disjoint", cfg.describe(), cfg.seed, &rows);
    Ok((Sweep { report, rows }, worst))
}
