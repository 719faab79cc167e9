use serde::Serialize;

use super::geometry::{norm, orthogonal_unit};
use crate::error::{arg, config, shape, Result};
use crate::kwta::{k_from_gamma, winners};
use crate::par;
use crate::tensor::{dot, gaussian_matrix, Rng, Tensor};

/// Where a k-WTA pattern first changes along a ray.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpReport {
    /// Ray parameter of the crossing.
    pub t: f64,
    /// Index leaving the winner set.
    pub leaving: usize,
    /// Index entering the winner set.
    pub entering: usize,
    /// Common value of the two swapped pre-activations.
    pub x_star: f64,
    /// `|y_leaving - y_entering|` at the crossing.
    pub gap: f64,
    /// `|(V_entering - V_leaving) x*|`, when a downstream matrix `V` is given.
    pub jump_norm: Option<f64>,
}

/// Grid size of the initial scan before bisection.
const SCAN_CELLS: usize = 1000;

/// Finds the first pattern change of `phi_k(W (x + t u))` for `t` in `(0, t_max]`.
///
/// A grid scan brackets the first change and bisection shrinks the bracket
/// until its two patterns differ by a single swap whose values agree to
/// `1e-10`. Returns `None` when the pattern never changes in range (always
/// the case for `gamma = 1`) or when only a simultaneous multi-swap is found.
pub fn measure_jump(
    w: &Tensor,
    x: &[f64],
    u: &[f64],
    gamma: f64,
    t_max: f64,
    downstream: Option<&Tensor>,
) -> Result<Option<JumpReport>> {
    if w.rank() != 2 || w.shape()[1] != x.len() || u.len() != x.len() {
        return Err(shape(format!(
            "W {:?} with x of length {} and u of length {}",
            w.shape(),
            x.len(),
            u.len()
        )));
    }
    if !(t_max > 0.0) {
        return Err(arg(format!("scan range must be positive, got {t_max}")));
    }
    let (l, m) = (w.shape()[0], w.shape()[1]);
    if let Some(v) = downstream {
        if v.rank() != 2 || v.shape()[1] != l {
            return Err(shape(format!("downstream matrix {:?} for width {l}", v.shape())));
        }
    }
    let k = k_from_gamma(gamma, l)?;
    if k == l {
        return Ok(None);
    }
    let a: Vec<f64> = w.data().chunks_exact(m).map(|r| dot(r, x)).collect();
    let b: Vec<f64> = w.data().chunks_exact(m).map(|r| dot(r, u)).collect();
    let at = |t: f64| -> Vec<f64> { a.iter().zip(&b).map(|(&ai, &bi)| ai + t * bi).collect() };
    let pattern = |t: f64| winners(&at(t), k);
    let start = pattern(0.0)?;

    let mut lo = 0.0;
    let mut hi = None;
    for c in 1..=SCAN_CELLS {
        let t = t_max * c as f64 / SCAN_CELLS as f64;
        if pattern(t)? != start {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let Some(mut hi) = hi else { return Ok(None) };
    // Invariant: pattern(lo) == start != pattern(hi) == p_hi.
    let mut p_hi = pattern(hi)?;
    loop {
        if let Some((i, j)) = single_swap(&start, &p_hi) {
            let t = 0.5 * (lo + hi);
            let y = at(t);
            let gap = (y[i] - y[j]).abs();
            if gap < 1e-10 {
                let x_star = 0.5 * (y[i] + y[j]);
                let jump_norm = downstream.map(|v| {
                    let d: Vec<f64> = v.data().chunks_exact(l).map(|row| (row[j] - row[i]) * x_star).collect();
                    norm(&d)
                });
                return Ok(Some(JumpReport {
                    t,
                    leaving: i,
                    entering: j,
                    x_star,
                    gap,
                    jump_norm,
                }));
            }
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(None);
        }
        let p_mid = pattern(mid)?;
        if p_mid == start {
            lo = mid;
        } else {
            hi = mid;
            p_hi = p_mid;
        }
    }
}

/// `(leaving, entering)` when `after` differs from `before` by exactly one index.
fn single_swap(before: &[usize], after: &[usize]) -> Option<(usize, usize)> {
    let gone: Vec<usize> = before
        .iter()
        .copied()
        .filter(|i| after.binary_search(i).is_err())
        .collect();
    let new: Vec<usize> = after
        .iter()
        .copied()
        .filter(|i| before.binary_search(i).is_err())
        .collect();
    match (gone.as_slice(), new.as_slice()) {
        ([i], [j]) => Some((*i, *j)),
        _ => None,
    }
}

/// Crossings per sparsity ratio for the jump-size sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpConfig {
    pub l: usize,
    pub m: usize,
    pub gammas: Vec<f64>,
    pub crossings: usize,
    pub t_max: f64,
    pub seed: u64,
}

impl JumpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.l < 2 || self.crossings == 0 {
            return Err(config(format!(
                "need m, l >= 2 and crossings >= 1, got m={} l={} crossings={}",
                self.m, self.l, self.crossings
            )));
        }
        if self.gammas.is_empty() {
            return Err(config("no sparsity ratios to sweep"));
        }
        for &g in &self.gammas {
            if !(g > 0.0 && g < 1.0) {
                return Err(config(format!("gamma must lie in (0, 1), got {g}")));
            }
        }
        if !(self.t_max > 0.0) {
            return Err(config(format!("scan range must be positive, got {}", self.t_max)));
        }
        Ok(())
    }
}

/// Mean `|x*|` over the crossings found for one sparsity ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpSweepRow {
    pub gamma: f64,
    pub k: usize,
    pub crossings: usize,
    pub attempts: usize,
    pub mean_abs_x_star: f64,
    pub max_gap: f64,
    pub seed: u64,
}

/// Per-gamma summary rows plus every crossing tagged with its gamma.
pub type JumpSweep = (Vec<JumpSweepRow>, Vec<(f64, JumpReport)>);

/// For every `gamma`, draws `W ~ N(0, 1/l)`, a random unit `x` and a random
/// unit direction `u` orthogonal to `x` until `crossings` crossings are found.
pub fn jump_sweep(cfg: &JumpConfig) -> Result<JumpSweep> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.gammas.len());
    let mut raw = Vec::new();
    for (gi, &gamma) in cfg.gammas.iter().enumerate() {
        let base = cfg.seed.wrapping_add((gi as u64) << 32);
        let mut found: Vec<JumpReport> = Vec::with_capacity(cfg.crossings);
        let mut attempts = 0;
        while found.len() < cfg.crossings {
            if attempts > 100 * cfg.crossings {
                return Err(config(format!(
                    "only {} crossings for gamma={gamma} in {attempts} rays",
                    found.len()
                )));
            }
            let need = cfg.crossings - found.len();
            let batch = par::map_indexed(need, |i| -> Result<Option<JumpReport>> {
                let mut rng = Rng::for_trial(base, (attempts + i) as u64);
                let w = gaussian_matrix(cfg.l, cfg.m, 1.0 / cfg.l as f64, &mut rng)?;
                let x = rng.unit_vector(cfg.m);
                let u = orthogonal_unit(&x, &mut rng);
                measure_jump(&w, &x, &u, gamma, cfg.t_max, None)
            });
            attempts += need;
            for r in batch {
                if let Some(j) = r? {
                    found.push(j);
                }
            }
        }
        let mean = found.iter().map(|j| j.x_star.abs()).sum::<f64>() / found.len() as f64;
        let max_gap = found.iter().map(|j| j.gap).fold(0.0, f64::max);
        rows.push(JumpSweepRow {
            gamma,
            k: k_from_gamma(gamma, cfg.l)?,
            crossings: found.len(),
            attempts,
            mean_abs_x_star: mean,
            max_gap,
            seed: base,
        });
        raw.extend(found.into_iter().map(|j| (gamma, j)));
    }
    Ok((rows, raw))
}
