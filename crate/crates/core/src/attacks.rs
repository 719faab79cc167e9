//! White-box gradient attacks, the Gaussian-noise attack, transfer attacks and
//! robust-accuracy evaluation.
//!
//! Every attack works on a batch `[B, ...input_shape]` at once; example `i` of
//! a batch starting at dataset index `first` draws its randomness from
//! `Rng::for_trial(cfg.seed, first + i)`, so results never depend on how a
//! dataset is split into batches.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{arg, shape, Error, Result};
use crate::nn::{cross_entropy_rows, Model};
use crate::par;
use crate::tensor::{Real, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackFamily {
    None,
    Fgsm,
    Pgd,
    MiFgsm,
    GaussianNoise,
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackFamily::None => "none",
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Pgd => "pgd",
            AttackFamily::MiFgsm => "mifgsm",
            AttackFamily::GaussianNoise => "gaussian",
        })
    }
}

impl FromStr for AttackFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AttackFamily::None,
            "fgsm" => AttackFamily::Fgsm,
            "pgd" => AttackFamily::Pgd,
            "mifgsm" => AttackFamily::MiFgsm,
            "gaussian" | "gaussian_noise" => AttackFamily::GaussianNoise,
            other => return Err(arg(format!("unknown attack `{other}`"))),
        })
    }
}

/// Attack family and budget. `epsilon` is an ℓ∞ radius in input units.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub family: AttackFamily,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_init: bool,
    /// Momentum decay of MI-FGSM.
    pub decay: f64,
    /// Draws per example of the Gaussian-noise attack.
    pub n_samples: usize,
    /// Noise standard deviation of the Gaussian-noise attack, before clipping.
    pub sigma: f64,
    /// Valid input range; `None` leaves inputs unclamped.
    pub clamp: Option<(f64, f64)>,
    pub seed: u64,
}

impl AttackConfig {
    fn base(family: AttackFamily, epsilon: f64) -> Self {
        AttackConfig {
            family,
            epsilon,
            steps: 0,
            step_size: 0.0,
            random_init: false,
            decay: 0.0,
            n_samples: 0,
            sigma: 0.0,
            clamp: Some((0.0, 1.0)),
            seed: 0,
        }
    }

    pub fn none() -> Self {
        Self::base(AttackFamily::None, 0.0)
    }

    pub fn fgsm(epsilon: f64) -> Self {
        Self::base(AttackFamily::Fgsm, epsilon)
    }

    /// PGD with random start and step size `epsilon / 10`.
    pub fn pgd(epsilon: f64, steps: usize) -> Self {
        AttackConfig {
            steps,
            step_size: epsilon / 10.0,
            random_init: true,
            ..Self::base(AttackFamily::Pgd, epsilon)
        }
    }

    pub fn mifgsm(epsilon: f64, steps: usize, step_size: f64, decay: f64) -> Self {
        AttackConfig {
            steps,
            step_size,
            decay,
            ..Self::base(AttackFamily::MiFgsm, epsilon)
        }
    }

    /// `n_samples` clipped Gaussian draws with `sigma = epsilon / 2`.
    pub fn gaussian_noise(epsilon: f64, n_samples: usize) -> Self {
        AttackConfig {
            n_samples,
            sigma: epsilon / 2.0,
            ..Self::base(AttackFamily::GaussianNoise, epsilon)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_clamp(mut self, clamp: Option<(f64, f64)>) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(arg(format!(
                "epsilon must be a finite value >= 0, got {}",
                self.epsilon
            )));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return Err(arg(format!("empty clamp range [{lo}, {hi}]")));
            }
        }
        match self.family {
            AttackFamily::Pgd | AttackFamily::MiFgsm => {
                if self.steps == 0 {
                    return Err(arg(format!("{} needs at least one step", self.family)));
                }
                if !(self.step_size > 0.0) && self.epsilon > 0.0 {
                    return Err(arg(format!("step size must be positive, got {}", self.step_size)));
                }
                if !(self.decay >= 0.0) {
                    return Err(arg(format!("decay must be >= 0, got {}", self.decay)));
                }
            }
            AttackFamily::GaussianNoise => {
                if self.n_samples == 0 {
                    return Err(arg("the Gaussian-noise attack needs at least one sample"));
                }
                if !(self.sigma >= 0.0) {
                    return Err(arg(format!("noise sigma must be >= 0, got {}", self.sigma)));
                }
            }
            AttackFamily::None | AttackFamily::Fgsm => {}
        }
        Ok(())
    }
}

/// Outcome of attacking one example.
#[derive(Debug, Clone)]
pub struct AttackResult<T: Real> {
    pub adversarial: Tensor<T>,
    /// The model's prediction on the adversarial input differs from the label.
    pub success: bool,
    pub prediction: usize,
    /// Gradient evaluations (white-box) or forward queries (Gaussian noise).
    pub queries: usize,
    pub loss: f64,
}

/// `sign` with `sign(0) = 0`.
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `[x0 - eps, x0 + eps]` with both ends rounded inward in `T`, so every
/// point of the box lies within `eps` of `x0` exactly (an `f32` `0.3` or
/// `x0 + 0.3` can round past the budget).
#[inline]
fn eps_box<T: Real>(x0: T, eps: f64) -> (T, T) {
    let c = x0.f64();
    let (lo, hi) = (c - eps, c + eps);
    let mut l = T::of(lo);
    if l.f64() < lo {
        l = l.next_up();
    }
    let mut h = T::of(hi);
    if h.f64() > hi {
        h = h.next_down();
    }
    (l, h)
}

/// Projects `v` onto the ε-box around `x0` and the clamp range.
#[inline]
fn project<T: Real>(v: T, x0: T, eps: f64, clamp: Option<(T, T)>) -> T {
    let (lo, hi) = eps_box(x0, eps);
    let v = v.max(lo).min(hi);
    match clamp {
        Some((lo, hi)) => v.max(lo).min(hi),
        None => v,
    }
}

struct Ctx<T: Real> {
    /// The budget stays in `f64`; see [`eps_box`].
    eps: f64,
    step: T,
    clamp: Option<(T, T)>,
}

impl<T: Real> Ctx<T> {
    fn new(cfg: &AttackConfig) -> Self {
        Ctx {
            eps: cfg.epsilon,
            step: T::of(cfg.step_size),
            clamp: cfg.clamp.map(|(a, b)| (T::of(a), T::of(b))),
        }
    }
}

/// Per-example losses, logits gradient already applied: `d(sum of losses)/dx`.
fn loss_gradient<T: Real>(model: &Model<T>, x: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let trace = model.forward(x)?;
    let (_, g) = cross_entropy_rows(trace.logits(), labels)?;
    model.input_gradient(&trace, &g)
}

fn check_batch<T: Real>(model: &Model<T>, x: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    let per: usize = model.input_shape().iter().product();
    if x.len() != labels.len() * per || labels.is_empty() {
        return Err(shape(format!(
            "batch of shape {:?} with {} labels for model input {:?}",
            x.shape(),
            labels.len(),
            model.input_shape()
        )));
    }
    Ok(per)
}

/// Perturbs a batch according to `cfg`; returns the adversarial batch and the
/// number of gradient evaluations or forward queries spent per example.
pub fn perturb_batch<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    first_index: usize,
) -> Result<(Tensor<T>, usize)> {
    cfg.validate()?;
    let per = check_batch(model, x, labels)?;
    let c = Ctx::<T>::new(cfg);
    match cfg.family {
        AttackFamily::None => Ok((x.clone(), 0)),
        AttackFamily::Fgsm => {
            let g = loss_gradient(model, x, labels)?;
            Ok((signed_step(x, x, &g, T::of(c.eps), &c)?, 1))
        }
        AttackFamily::Pgd => {
            let mut cur = x.clone();
            if cfg.random_init {
                let data = cur.data_mut();
                for (b, chunk) in data.chunks_exact_mut(per).enumerate() {
                    let mut rng = Rng::for_trial(cfg.seed, (first_index + b) as u64);
                    for v in chunk {
                        let x0 = *v;
                        *v = project(x0 + T::of(rng.uniform(-cfg.epsilon, cfg.epsilon)), x0, c.eps, c.clamp);
                    }
                }
            }
            for _ in 0..cfg.steps {
                let g = loss_gradient(model, &cur, labels)?;
                cur = signed_step(x, &cur, &g, c.step, &c)?;
            }
            Ok((cur, cfg.steps))
        }
        AttackFamily::MiFgsm => {
            let mut cur = x.clone();
            let mut momentum = vec![T::zero(); x.len()];
            let decay = T::of(cfg.decay);
            for _ in 0..cfg.steps {
                let g = loss_gradient(model, &cur, labels)?;
                for (m, gs) in momentum.chunks_exact_mut(per).zip(g.data().chunks_exact(per)) {
                    let l1: T = gs.iter().map(|v| v.abs()).sum();
                    for (mi, &gi) in m.iter_mut().zip(gs) {
                        let n = if l1 > T::zero() { gi / l1 } else { T::zero() };
                        *mi = decay * *mi + n;
                    }
                }
                let dir = Tensor::new(x.shape().to_vec(), momentum.clone())?;
                cur = signed_step(x, &cur, &dir, c.step, &c)?;
            }
            Ok((cur, cfg.steps))
        }
        AttackFamily::GaussianNoise => gaussian_batch(model, x, labels, cfg, first_index, per),
    }
}

/// `project(cur + step * sign(dir))` around `x0`.
fn signed_step<T: Real>(x0: &Tensor<T>, cur: &Tensor<T>, dir: &Tensor<T>, step: T, c: &Ctx<T>) -> Result<Tensor<T>> {
    let data = x0
        .data()
        .iter()
        .zip(cur.data())
        .zip(dir.data())
        .map(|((&x, &v), &d)| project(v + step * sign(d), x, c.eps, c.clamp))
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

const NOISE_CHUNK: usize = 100;

fn gaussian_batch<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    first_index: usize,
    per: usize,
) -> Result<(Tensor<T>, usize)> {
    let c = Ctx::<T>::new(cfg);
    let mut out = Vec::with_capacity(x.len());
    for (b, (x0, &y)) in x.data().chunks_exact(per).zip(labels).enumerate() {
        let mut rng = Rng::for_trial(cfg.seed, (first_index + b) as u64);
        let mut best: Option<(T, Vec<T>)> = None;
        let mut found = None;
        let mut drawn = 0;
        while drawn < cfg.n_samples && found.is_none() {
            let n = NOISE_CHUNK.min(cfg.n_samples - drawn);
            let mut batch = Vec::with_capacity(n * per);
            for _ in 0..n {
                for &v in x0 {
                    let noise = T::of(cfg.sigma * rng.standard_normal());
                    batch.push(project(v + noise, v, c.eps, c.clamp));
                }
            }
            let mut shape = vec![n];
            shape.extend_from_slice(model.input_shape());
            let bt = Tensor::new(shape, batch)?;
            let logits = model.predict(&bt)?;
            let (losses, _) = cross_entropy_rows(&logits, &vec![y; n])?;
            let preds = crate::nn::argmax_rows(&logits);
            let sample = |i: usize| bt.data()[i * per..(i + 1) * per].to_vec();
            if let Some(i) = preds.iter().position(|&p| p != y) {
                found = Some(sample(i));
            } else {
                let (i, &l) =
                    losses.iter().enumerate().fold(
                        (0, &T::neg_infinity()),
                        |acc, (i, l)| if *l > *acc.1 { (i, l) } else { acc },
                    );
                if best.as_ref().is_none_or(|(bl, _)| l > *bl) {
                    best = Some((l, sample(i)));
                }
            }
            drawn += n;
        }
        out.extend(found.or(best.map(|b| b.1)).expect("at least one sample"));
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, cfg.n_samples))
}

fn single<T: Real>(model: &Model<T>, x: &Tensor<T>, y: usize, cfg: &AttackConfig) -> Result<AttackResult<T>> {
    if x.shape() != model.input_shape() {
        return Err(shape(format!(
            "example of shape {:?} for model input {:?}",
            x.shape(),
            model.input_shape()
        )));
    }
    let (adv, queries) = perturb_batch(model, x, &[y], cfg, 0)?;
    let logits = model.predict(&adv)?;
    let (losses, _) = cross_entropy_rows(&logits, &[y])?;
    let prediction = crate::nn::argmax_rows(&logits)[0];
    Ok(AttackResult {
        adversarial: adv,
        success: prediction != y,
        prediction,
        queries,
        loss: losses[0].f64(),
    })
}

/// `x' = clamp(x + ε·sign(∇ₓL))`, one gradient evaluation.
pub fn fgsm<T: Real>(model: &Model<T>, x: &Tensor<T>, y: usize, cfg: &AttackConfig) -> Result<AttackResult<T>> {
    single(
        model,
        x,
        y,
        &AttackConfig {
            family: AttackFamily::Fgsm,
            ..cfg.clone()
        },
    )
}

/// Projected gradient ascent on the loss inside the ℓ∞ ε-ball.
pub fn pgd<T: Real>(model: &Model<T>, x: &Tensor<T>, y: usize, cfg: &AttackConfig) -> Result<AttackResult<T>> {
    single(
        model,
        x,
        y,
        &AttackConfig {
            family: AttackFamily::Pgd,
            ..cfg.clone()
        },
    )
}

/// Momentum iterative FGSM: `g ← μg + ∇/‖∇‖₁`, steps along `sign(g)`.
pub fn mifgsm<T: Real>(model: &Model<T>, x: &Tensor<T>, y: usize, cfg: &AttackConfig) -> Result<AttackResult<T>> {
    single(
        model,
        x,
        y,
        &AttackConfig {
            family: AttackFamily::MiFgsm,
            ..cfg.clone()
        },
    )
}

/// Brute-force search over clipped Gaussian perturbations.
pub fn gaussian_noise_attack<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult<T>> {
    single(
        model,
        x,
        y,
        &AttackConfig {
            family: AttackFamily::GaussianNoise,
            ..cfg.clone()
        },
    )
}

/// One CSV row of a robustness evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleRow {
    pub example_index: usize,
    pub true_label: usize,
    pub clean_pred: usize,
    pub adv_pred: usize,
    pub linf_norm: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustReport {
    pub family: AttackFamily,
    pub epsilon: f64,
    /// Clean accuracy.
    pub a_std: f64,
    /// Accuracy on attacked inputs; equals `a_std` for [`AttackFamily::None`].
    pub a_rob: f64,
    pub rows: Vec<ExampleRow>,
    /// Largest ℓ∞ distance of any adversarial input from its clean input.
    pub max_linf: f64,
    /// Smallest and largest coordinate of any adversarial input.
    pub value_range: (f64, f64),
}

impl RobustReport {
    /// Every adversarial input is within `ε + tol` and inside `[lo, hi]`.
    pub fn within_budget(&self, tol: f64, range: (f64, f64)) -> bool {
        self.max_linf <= self.epsilon + tol && self.value_range.0 >= range.0 && self.value_range.1 <= range.1
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Batch size used when evaluating attacks over a dataset.
pub const EVAL_BATCH: usize = 50;

/// Crafts adversarial examples on `source` and scores them on `target`.
///
/// `target` is only ever run forward; its gradient counter stays untouched.
fn evaluate_pair<T: Real>(
    source: &Model<T>,
    target: &Model<T>,
    ds: &Dataset<T>,
    cfg: &AttackConfig,
) -> Result<RobustReport> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(arg("cannot evaluate on an empty dataset"));
    }
    if source.input_shape() != ds.example_shape() || target.input_shape() != ds.example_shape() {
        return Err(shape(format!(
            "models take {:?} and {:?}, dataset examples are {:?}",
            source.input_shape(),
            target.input_shape(),
            ds.example_shape()
        )));
    }
    let per: usize = ds.example_shape().iter().product();
    let chunks = ds.len().div_ceil(EVAL_BATCH);
    let parts = par::map_indexed(chunks, |c| -> Result<Vec<(ExampleRow, f64, f64)>> {
        let idx: Vec<usize> = (c * EVAL_BATCH..((c + 1) * EVAL_BATCH).min(ds.len())).collect();
        let (x, labels) = ds.gather(&idx)?;
        let clean = target.classify(&x)?;
        let (adv, _) = perturb_batch(source, &x, &labels, cfg, idx[0])?;
        let adv_pred = target.classify(&adv)?;
        let mut rows = Vec::with_capacity(idx.len());
        for (b, &i) in idx.iter().enumerate() {
            let (xs, xa) = (&x.data()[b * per..(b + 1) * per], &adv.data()[b * per..(b + 1) * per]);
            let linf = xs
                .iter()
                .zip(xa)
                .map(|(&a, &b)| (b.f64() - a.f64()).abs())
                .fold(0.0, f64::max);
            let lo = xa.iter().map(|v| v.f64()).fold(f64::INFINITY, f64::min);
            let hi = xa.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
            rows.push((
                ExampleRow {
                    example_index: i,
                    true_label: labels[b],
                    clean_pred: clean[b],
                    adv_pred: adv_pred[b],
                    linf_norm: linf,
                    success: adv_pred[b] != labels[b],
                },
                lo,
                hi,
            ));
        }
        Ok(rows)
    });
    let mut rows = Vec::with_capacity(ds.len());
    let (mut lo, mut hi, mut max_linf) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for part in parts {
        for (r, l, h) in part? {
            lo = lo.min(l);
            hi = hi.max(h);
            max_linf = max_linf.max(r.linf_norm);
            rows.push(r);
        }
    }
    let n = rows.len() as f64;
    let a_std = rows.iter().filter(|r| r.clean_pred == r.true_label).count() as f64 / n;
    let a_rob = rows.iter().filter(|r| r.adv_pred == r.true_label).count() as f64 / n;
    Ok(RobustReport {
        family: cfg.family,
        epsilon: cfg.epsilon,
        a_std,
        a_rob,
        rows,
        max_linf,
        value_range: (lo, hi),
    })
}

/// Accuracy of `model` on `ds` after attacking every example with `cfg`.
pub fn evaluate_robust_accuracy<T: Real>(
    model: &Model<T>,
    ds: &Dataset<T>,
    cfg: &AttackConfig,
) -> Result<RobustReport> {
    evaluate_pair(model, model, ds, cfg)
}

/// Robust accuracy of `target` on adversarial examples crafted against `source`.
pub fn transfer_attack<T: Real>(
    source: &Model<T>,
    target: &Model<T>,
    ds: &Dataset<T>,
    cfg: &AttackConfig,
) -> Result<RobustReport> {
    evaluate_pair(source, target, ds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, ModelMeta, Params};

    /// Two-logit linear model `f(x) = [0, w·x]`; the loss of label 0 increases in `w·x`.
    fn linear(w: &[f64]) -> Model {
        let d = w.len();
        let mut weight = vec![0.0; d];
        weight.extend_from_slice(w);
        let p = Params {
            weight: Tensor::new(vec![2, d], weight).unwrap(),
            bias: Tensor::zeros(&[2]).unwrap(),
        };
        Model::from_params(
            &[d],
            vec![LayerSpec::Dense { in_dim: d, out_dim: 2 }],
            vec![p],
            ModelMeta::default(),
        )
        .unwrap()
    }

    fn closed_form(x: &[f64], w: &[f64], eps: f64) -> Vec<f64> {
        x.iter()
            .zip(w)
            .map(|(&xi, &wi)| (xi + eps * wi.signum()).clamp(0.0, 1.0))
            .collect()
    }

    const W: [f64; 4] = [0.7, -1.3, 0.2, -0.05];
    const X: [f64; 4] = [0.5, 0.5, 0.95, 0.02];

    #[test]
    fn f32_budget_is_exact() {
        let mut rng = Rng::new(11);
        let d = 64;
        let w: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let model = linear(&w).cast::<f32>();
        let x: Vec<f32> = (0..4 * d).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
        let x = Tensor::new(vec![4, d], x).unwrap();
        for cfg in [
            AttackConfig::fgsm(0.3),
            AttackConfig::pgd(0.3, 5).with_seed(2),
            AttackConfig::gaussian_noise(0.3, 20),
        ] {
            let (adv, _) = perturb_batch(&model, &x, &[0, 1, 0, 1], &cfg, 0).unwrap();
            for (&a, &c) in adv.data().iter().zip(x.data()) {
                assert!((a as f64 - c as f64).abs() <= 0.3, "{} moved {a} from {c}", cfg.family);
                assert!((0.0..=1.0).contains(&a));
            }
        }
        let ds = Dataset::new(x, vec![0, 1, 0, 1], 2, "f32").unwrap();
        let report = evaluate_robust_accuracy(&model, &ds, &AttackConfig::pgd(0.3, 5)).unwrap();
        assert!(report.within_budget(0.0, (0.0, 1.0)), "max |δ|∞ {}", report.max_linf);
    }

    #[test]
    fn fgsm_on_linear_model_is_closed_form() {
        let m = linear(&W);
        let r = fgsm(&m, &Tensor::vector(X.to_vec()), 0, &AttackConfig::fgsm(0.1)).unwrap();
        assert_eq!(r.adversarial.data(), closed_form(&X, &W, 0.1).as_slice());
        assert_eq!(r.queries, 1);
        assert_eq!(m.gradient_calls(), 1);
    }

    #[test]
    fn zero_budget_is_identity() {
        let m = linear(&W);
        let x = Tensor::vector(X.to_vec());
        for cfg in [
            AttackConfig::fgsm(0.0),
            AttackConfig::pgd(0.0, 5),
            AttackConfig::mifgsm(0.0, 5, 0.01, 1.0),
            AttackConfig::gaussian_noise(0.0, 10),
        ] {
            assert_eq!(single(&m, &x, 0, &cfg).unwrap().adversarial, x, "{cfg:?}");
        }
    }

    #[test]
    fn pgd_and_mifgsm_reach_the_linear_fixed_point() {
        let m = linear(&W);
        let x = Tensor::vector(X.to_vec());
        let want = closed_form(&X, &W, 0.1);
        for steps in [10, 25] {
            let r = pgd(&m, &x, 0, &AttackConfig::pgd(0.1, steps).with_seed(4)).unwrap();
            assert!(r
                .adversarial
                .data()
                .iter()
                .zip(&want)
                .all(|(a, b)| (a - b).abs() < 1e-12));
            let r = mifgsm(&m, &x, 0, &AttackConfig::mifgsm(0.1, steps, 0.01, 1.0)).unwrap();
            assert!(r
                .adversarial
                .data()
                .iter()
                .zip(&want)
                .all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    fn small_net() -> Model {
        let specs = vec![
            LayerSpec::Dense { in_dim: 6, out_dim: 16 },
            LayerSpec::Kwta { gamma: 0.25 },
            LayerSpec::Dense { in_dim: 16, out_dim: 3 },
        ];
        Model::build(&[6], specs, &mut Rng::new(8)).unwrap()
    }

    #[test]
    fn single_step_pgd_is_fgsm() {
        let m = small_net();
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let x = Tensor::vector((0..6).map(|_| rng.uniform(0.0, 1.0)).collect());
            let cfg = AttackConfig {
                steps: 1,
                step_size: 0.2,
                random_init: false,
                ..AttackConfig::pgd(0.2, 1)
            };
            let a = pgd(&m, &x, 1, &cfg).unwrap();
            let b = fgsm(&m, &x, 1, &AttackConfig::fgsm(0.2)).unwrap();
            assert_eq!(a.adversarial, b.adversarial);
        }
    }

    #[test]
    fn zero_decay_momentum_equals_plain_pgd() {
        let m = small_net();
        let x = Tensor::vector(vec![0.1, 0.9, 0.4, 0.5, 0.3, 0.7]);
        let a = mifgsm(&m, &x, 2, &AttackConfig::mifgsm(0.3, 7, 0.05, 0.0)).unwrap();
        let cfg = AttackConfig {
            step_size: 0.05,
            random_init: false,
            ..AttackConfig::pgd(0.3, 7)
        };
        let b = pgd(&m, &x, 2, &cfg).unwrap();
        assert_eq!(a.adversarial, b.adversarial);
    }

    #[test]
    fn gaussian_noise_respects_hoelder_bound() {
        // Label 0 wins while w·x' < 0; at x the margin is 2 > ε‖w‖₁ = 0.4.
        let m = linear(&[-1.0; 4]);
        let x = Tensor::vector(vec![0.5; 4]);
        let r = gaussian_noise_attack(&m, &x, 0, &AttackConfig::gaussian_noise(0.1, 1000)).unwrap();
        assert!(!r.success);
        assert_eq!(r.queries, 1000);
        assert!(r.adversarial.sub(&x).unwrap().norm_linf() <= 0.1 + 1e-12);

        // An input-ignoring model never flips.
        let flat = linear(&[0.0; 4]);
        assert!(
            !gaussian_noise_attack(&flat, &x, 0, &AttackConfig::gaussian_noise(0.3, 500))
                .unwrap()
                .success
        );

        // With ε = 0 success is exactly "already misclassified".
        let wrong = gaussian_noise_attack(&linear(&[1.0; 4]), &x, 0, &AttackConfig::gaussian_noise(0.0, 5)).unwrap();
        assert!(wrong.success);
        assert_eq!(wrong.adversarial, x);
    }

    #[test]
    fn configs_are_validated() {
        assert!(AttackConfig::fgsm(-0.1).validate().is_err());
        assert!(AttackConfig::pgd(0.1, 0).validate().is_err());
        assert!(AttackConfig::gaussian_noise(0.1, 0).validate().is_err());
        assert!(AttackConfig::mifgsm(0.1, 3, 0.01, -1.0).validate().is_err());
        assert!("pgd".parse::<AttackFamily>().is_ok());
        assert!("cw".parse::<AttackFamily>().is_err());
    }

    fn toy_dataset(n: usize) -> Dataset {
        let mut rng = Rng::new(3);
        let data = (0..n * 6).map(|_| rng.uniform(0.0, 1.0)).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        Dataset::new(Tensor::new(vec![n, 6], data).unwrap(), labels, 3, "toy").unwrap()
    }

    #[test]
    fn evaluation_contracts() {
        let m = small_net();
        let ds = toy_dataset(120);
        let none = evaluate_robust_accuracy(&m, &ds, &AttackConfig::none()).unwrap();
        assert_eq!(none.a_std, none.a_rob);
        let r = evaluate_robust_accuracy(&m, &ds, &AttackConfig::pgd(0.2, 5).with_seed(3)).unwrap();
        assert!(r.within_budget(1e-9, (0.0, 1.0)));
        assert_eq!(r.rows.len(), 120);
        assert_eq!(
            r,
            evaluate_robust_accuracy(&m, &ds, &AttackConfig::pgd(0.2, 5).with_seed(3)).unwrap()
        );

        let same = transfer_attack(&m, &m, &ds, &AttackConfig::pgd(0.2, 5).with_seed(3)).unwrap();
        assert_eq!(same.a_rob, r.a_rob);

        let target = small_net().with_activation(crate::nn::Activation::Relu);
        let before = target.gradient_calls();
        let t = transfer_attack(&m, &target, &ds, &AttackConfig::pgd(0.2, 5)).unwrap();
        assert_eq!(target.gradient_calls(), before);
        let clean = transfer_attack(&m, &target, &ds, &AttackConfig::pgd(0.0, 5)).unwrap();
        assert_eq!(clean.a_rob, t.a_std);

        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("example_index,true_label,clean_pred,adv_pred,linf_norm,success\n"));
        assert_eq!(text.lines().count(), 121);
    }

    #[test]
    fn input_ignoring_model_scores_class_frequency() {
        let m = linear(&[0.0; 6]);
        let mut ds = toy_dataset(90);
        ds.labels = (0..90).map(|i| usize::from(i % 3 == 0)).collect();
        ds.classes = 2;
        let r = evaluate_robust_accuracy(&m, &ds, &AttackConfig::pgd(0.3, 3)).unwrap();
        assert!((r.a_std - 60.0 / 90.0).abs() < 1e-12);
        assert_eq!(r.a_std, r.a_rob);
    }
}
