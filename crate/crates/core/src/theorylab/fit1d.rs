use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::attacks::csv_err;
use crate::error::{config, Error, Result};
use crate::nn::{build_model, mlp_specs, Activation, Model, Params};
use crate::tensor::{Rng, Tensor};
use crate::training::Sgd;

/// Scalar-in, scalar-out k-WTA regression on a 1-D target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit1dConfig {
    pub gamma: f64,
    pub width: usize,
    pub depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Number of prediction points over the target's domain.
    pub grid: usize,
    /// Jump threshold as a multiple of the median adjacent delta.
    pub jump_factor: f64,
    pub seed: u64,
}

impl Default for Fit1dConfig {
    fn default() -> Self {
        Fit1dConfig {
            gamma: 0.15,
            width: 128,
            depth: 2,
            epochs: 300,
            batch_size: 32,
            lr: 0.002,
            momentum: 0.9,
            grid: 2000,
            jump_factor: 5.0,
            seed: 0,
        }
    }
}

impl Fit1dConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.width == 0 || self.depth == 0 || self.batch_size == 0 || self.grid < 3 {
            return Err(config(
                "width, depth and batch size must be positive and the grid at least 3 points",
            ));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.jump_factor > 1.0) {
            return Err(config(format!(
                "need lr >= 0, momentum in [0, 1) and jump factor > 1, got {} {} {}",
                self.lr, self.momentum, self.jump_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub t: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit1dReport {
    pub predictions: Vec<Prediction>,
    pub jumps: usize,
    pub threshold: f64,
    pub train_mse: f64,
}

impl Fit1dReport {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.predictions {
            w.serialize(p).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn summary_line(&self) -> String {
        format!(
            "fit1d jumps={} threshold={:.3e} train_mse={:.3e}",
            self.jumps, self.threshold, self.train_mse
        )
    }
}

/// Counts adjacent deltas above `max(factor × median delta, floor)`.
///
/// The floor, `1e-9 × (1 + max|v|)`, keeps rounding noise from registering
/// as jumps when the curve is flat. Returns `(jumps, threshold)`.
pub fn count_jumps(values: &[f64], factor: f64) -> (usize, f64) {
    if values.len() < 2 {
        return (0, 0.0);
    }
    let deltas: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-9 * (1.0 + scale);
    let mut sorted = deltas.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let threshold = (factor * median).max(floor);
    (deltas.iter().filter(|&&d| d > threshold).count(), threshold)
}

/// A scalar MLP with `N(0, 1/fan_in)` weights, so the single output unit is
/// not swamped by its 128 inputs, and hidden biases drawn `N(0, 1)` so the
/// breakpoints of the k-WTA patterns spread over the input domain.
fn scalar_mlp(cfg: &Fit1dConfig, rng: &mut Rng) -> Result<Model> {
    let specs = mlp_specs(1, &vec![cfg.width; cfg.depth], 1, Activation::Kwta(cfg.gamma));
    let mut model: Model = build_model(&[1], specs, rng)?;
    let layers: Vec<usize> = model
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.params().is_some())
        .map(|(i, _)| i)
        .collect();
    let last = *layers.last().expect("output layer");
    for i in layers {
        let p = model.layers()[i].params().expect("parametric").clone();
        let fan_in = p.weight.shape()[1] as f64;
        let weight = Tensor::new(
            p.weight.shape().to_vec(),
            (0..p.weight.len())
                .map(|_| rng.standard_normal() / fan_in.sqrt())
                .collect(),
        )?;
        let bias = if i == last {
            p.bias
        } else {
            Tensor::vector((0..p.bias.len()).map(|_| rng.standard_normal()).collect())
        };
        model.set_params(i, Params { weight, bias })?;
    }
    Ok(model)
}

/// Fits `target` (pairs `(t, v)`) with squared loss and scans the fitted
/// curve on a dense grid of the target's domain for discontinuities.
pub fn fit_1d_demo(target: &[(f64, f64)], cfg: &Fit1dConfig) -> Result<Fit1dReport> {
    cfg.validate()?;
    if target.len() < 2 {
        return Err(config("need at least two target samples"));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut model = scalar_mlp(cfg, &mut rng)?;
    let mut sgd = Sgd::new();
    let mut order: Vec<usize> = (0..target.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let x = Tensor::new(vec![batch.len(), 1], batch.iter().map(|&i| target[i].0).collect())?;
            let trace = model.forward(&x)?;
            let scale = 2.0 / batch.len() as f64;
            let g: Vec<f64> = trace
                .logits()
                .data()
                .iter()
                .zip(batch)
                .map(|(&p, &i)| scale * (p - target[i].1))
                .collect();
            let grads = model.backward(&trace, &Tensor::new(vec![batch.len(), 1], g)?)?;
            sgd.step(&mut model, &grads, cfg.lr, cfg.momentum)?;
        }
    }
    let xs = Tensor::new(vec![target.len(), 1], target.iter().map(|p| p.0).collect())?;
    let fitted = model.predict(&xs)?;
    let train_mse = fitted
        .data()
        .iter()
        .zip(target)
        .map(|(&p, &(_, v))| (p - v) * (p - v))
        .sum::<f64>()
        / target.len() as f64;

    if !train_mse.is_finite() {
        return Err(Error::Argument(format!(
            "training diverged at lr {}; lower the learning rate",
            cfg.lr
        )));
    }

    let (lo, hi) = target
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let ts: Vec<f64> = (0..cfg.grid)
        .map(|i| lo + (hi - lo) * i as f64 / (cfg.grid - 1) as f64)
        .collect();
    let preds = model.predict(&Tensor::new(vec![cfg.grid, 1], ts.clone())?)?.into_data();
    let (jumps, threshold) = count_jumps(&preds, cfg.jump_factor);
    Ok(Fit1dReport {
        predictions: ts
            .into_iter()
            .zip(preds)
            .map(|(t, prediction)| Prediction { t, prediction })
            .collect(),
        jumps,
        threshold,
        train_mse,
    })
}
