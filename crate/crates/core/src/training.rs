//! SGD with momentum, standard and adversarial training, and incremental
//! sparsity fine-tuning.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::attacks::{csv_err, perturb_batch, AttackConfig, AttackFamily};
use crate::data::Dataset;
use crate::error::{arg, config, shape, Error, Result};
use crate::nn::{argmax_rows, cross_entropy_rows, Gradients, Model};
use crate::tensor::{Real, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `(first_epoch, lr)` breakpoints; the first must start at epoch 0.
    pub lr_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// lr 0.01, momentum 0.9, 20 epochs, batch 128.
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            lr_schedule: vec![(0, 0.01)],
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn constant(epochs: usize, batch_size: usize, lr: f64, momentum: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            lr_schedule: vec![(0, lr)],
            momentum,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        match self.lr_schedule.first() {
            Some((0, _)) => {}
            _ => return Err(config("learning-rate schedule must start at epoch 0")),
        }
        if self.lr_schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(config("learning-rate breakpoints must be strictly increasing"));
        }
        // lr = 0 is admitted as the frozen-parameter degenerate case.
        if self.lr_schedule.iter().any(|&(_, lr)| !(lr >= 0.0) || !lr.is_finite()) {
            return Err(config("learning rates must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_schedule
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(0.0, |&(_, lr)| lr)
    }
}

/// Lower the sparsity ratio by `delta` every `epochs_per_step` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSchedule {
    pub gamma_start: f64,
    pub gamma_end: f64,
    pub delta: f64,
    pub epochs_per_step: usize,
}

impl FinetuneSchedule {
    pub fn new(gamma_start: f64, gamma_end: f64, delta: f64) -> Self {
        FinetuneSchedule {
            gamma_start,
            gamma_end,
            delta,
            epochs_per_step: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_end > 0.0 && self.gamma_start >= self.gamma_end && self.gamma_start <= 1.0) {
            return Err(config(format!(
                "fine-tuning needs 1 >= gamma_start >= gamma_end > 0, got {} -> {}",
                self.gamma_start, self.gamma_end
            )));
        }
        if !(self.delta > 0.0) {
            return Err(config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.epochs_per_step == 0 {
            return Err(config("epochs per step must be positive"));
        }
        Ok(())
    }

    /// The sparsity ratio of every stage; the last is exactly `gamma_end`.
    pub fn stages(&self) -> Vec<f64> {
        let span = self.gamma_start - self.gamma_end;
        let n = (span / self.delta - 1e-9).ceil().max(0.0) as usize;
        (1..=n)
            .map(|i| {
                if i == n {
                    self.gamma_end
                } else {
                    self.gamma_start - i as f64 * self.delta
                }
            })
            .collect()
    }
}

/// Classical momentum: `v ← μv − lr·g; p ← p + v`. An empty `velocity` starts at zero.
pub fn sgd_step<T: Real>(params: &mut [T], grads: &[T], velocity: &mut Vec<T>, lr: T, momentum: T) -> Result<()> {
    if velocity.is_empty() {
        velocity.resize(params.len(), T::zero());
    }
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(shape(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p = *p + *v;
    }
    Ok(())
}

/// Momentum state for every parameter tensor of a model.
#[derive(Debug, Clone, Default)]
pub struct Sgd<T: Real> {
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new() -> Self {
        Sgd { velocity: Vec::new() }
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>, lr: f64, momentum: f64) -> Result<()> {
        let (lr, mu) = (T::of(lr), T::of(momentum));
        let gs: Vec<_> = grads.params.iter().flatten().collect();
        let mut ps = model.params_mut();
        if gs.len() != ps.len() {
            return Err(shape(format!(
                "{} gradient blocks for {} parameter blocks",
                gs.len(),
                ps.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = vec![Vec::new(); 2 * ps.len()];
        }
        for (i, (p, g)) in ps.iter_mut().zip(gs).enumerate() {
            sgd_step(p.weight.data_mut(), g.weight.data(), &mut self.velocity[2 * i], lr, mu)?;
            sgd_step(p.bias.data_mut(), g.bias.data(), &mut self.velocity[2 * i + 1], lr, mu)?;
        }
        Ok(())
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    /// Sparsity ratio of the k-WTA layers during the epoch; empty for ReLU models.
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    /// Mean loss of every minibatch, in update order.
    pub batch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn extend(&mut self, other: TrainReport) {
        self.metrics.extend(other.metrics);
        self.batch_losses.extend(other.batch_losses);
    }
}

pub fn write_metrics_csv(metrics: &[EpochMetrics], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in metrics {
        w.serialize(m).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_metrics_csv(metrics: &[EpochMetrics], path: impl AsRef<Path>) -> Result<()> {
    write_metrics_csv(metrics, std::fs::File::create(path)?)
}

/// Training state that persists across calls: shuffling stream, momentum
/// buffers and the global epoch counter.
pub struct Trainer<T: Real> {
    cfg: TrainConfig,
    rng: Rng,
    sgd: Sgd<T>,
    epoch: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = Rng::new(cfg.seed);
        Ok(Trainer {
            cfg,
            rng,
            sgd: Sgd::new(),
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Runs `epochs` epochs; `attack`, if given, replaces every minibatch by
    /// its perturbation against the current weights.
    pub fn run(
        &mut self,
        model: &mut Model<T>,
        ds: &Dataset<T>,
        epochs: usize,
        attack: Option<&AttackConfig>,
    ) -> Result<TrainReport> {
        if ds.is_empty() {
            return Err(arg("cannot train on an empty dataset"));
        }
        if model.input_shape() != ds.example_shape() {
            return Err(shape(format!(
                "model takes {:?}, dataset examples are {:?}",
                model.input_shape(),
                ds.example_shape()
            )));
        }
        if let Some(a) = attack {
            a.validate()?;
        }
        let mut report = TrainReport::default();
        let mut order: Vec<usize> = (0..ds.len()).collect();
        for _ in 0..epochs {
            let lr = self.cfg.lr_at(self.epoch);
            self.rng.shuffle(&mut order);
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for (bi, batch) in order.chunks(self.cfg.batch_size).enumerate() {
                let (mut x, labels) = ds.gather(batch)?;
                if let Some(a) = attack.filter(|a| a.family != AttackFamily::None) {
                    // Fresh attack randomness for every epoch and batch.
                    let stream = AttackConfig {
                        seed: a.seed.wrapping_add(((self.epoch as u64) << 32) ^ bi as u64),
                        ..a.clone()
                    };
                    x = perturb_batch(model, &x, &labels, &stream, 0)?.0;
                }
                let trace = model.forward(&x)?;
                let (losses, mut g) = cross_entropy_rows(trace.logits(), &labels)?;
                let scale = T::one() / T::of(labels.len() as f64);
                g.data_mut().iter_mut().for_each(|v| *v = *v * scale);
                let grads = model.backward(&trace, &g)?;
                let batch_loss: f64 = losses.iter().map(|l| l.f64()).sum();
                correct += argmax_rows(trace.logits())
                    .iter()
                    .zip(&labels)
                    .filter(|(p, y)| p == y)
                    .count();
                loss_sum += batch_loss;
                report.batch_losses.push(batch_loss / labels.len() as f64);
                self.sgd.step(model, &grads, lr, self.cfg.momentum)?;
            }
            report.metrics.push(EpochMetrics {
                epoch: self.epoch,
                split: "train".into(),
                loss: loss_sum / ds.len() as f64,
                accuracy: correct as f64 / ds.len() as f64,
                gamma: model.kwta_gammas().first().copied(),
            });
            self.epoch += 1;
        }
        Ok(report)
    }
}

/// Mean cross-entropy and accuracy of `model` on `ds`.
pub fn evaluate<T: Real>(model: &Model<T>, ds: &Dataset<T>) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(arg("cannot evaluate on an empty dataset"));
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for batch in idx.chunks(256) {
        let (x, labels) = ds.gather(batch)?;
        let logits = model.predict(&x)?;
        let (losses, _) = cross_entropy_rows(&logits, &labels)?;
        loss += losses.iter().map(|l| l.f64()).sum::<f64>();
        correct += argmax_rows(&logits).iter().zip(&labels).filter(|(p, y)| p == y).count();
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// Plain minibatch SGD for `cfg.epochs` epochs.
pub fn train_standard<T: Real>(model: &mut Model<T>, ds: &Dataset<T>, cfg: &TrainConfig) -> Result<TrainReport> {
    Trainer::new(cfg.clone())?.run(model, ds, cfg.epochs, None)
}

/// Min-max training: every minibatch is replaced by `attack`'s perturbation
/// before the gradient step.
pub fn train_adversarial<T: Real>(
    model: &mut Model<T>,
    ds: &Dataset<T>,
    attack: &AttackConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    attack.validate()?;
    Trainer::new(cfg.clone())?.run(model, ds, cfg.epochs, Some(attack))
}

/// Incremental fine-tuning: lowers every k-WTA layer's ratio in lock-step by
/// `delta` and trains `epochs_per_step` epochs at each stage.
pub fn finetune_sparsity<T: Real>(
    model: &mut Model<T>,
    ds: &Dataset<T>,
    sched: &FinetuneSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(cfg.clone())?;
    finetune_with(&mut trainer, model, ds, sched, None)
}

/// [`finetune_sparsity`] continuing an existing trainer (and optionally adversarial).
pub fn finetune_with<T: Real>(
    trainer: &mut Trainer<T>,
    model: &mut Model<T>,
    ds: &Dataset<T>,
    sched: &FinetuneSchedule,
    attack: Option<&AttackConfig>,
) -> Result<TrainReport> {
    sched.validate()?;
    let gammas = model.kwta_gammas();
    if gammas.is_empty() {
        return Err(Error::Usage("model has no k-WTA layers to fine-tune".into()));
    }
    if gammas.iter().any(|&g| (g - sched.gamma_start).abs() > 1e-12) {
        return Err(config(format!(
            "model sparsity {gammas:?} does not match gamma_start {}",
            sched.gamma_start
        )));
    }
    let mut report = TrainReport::default();
    for gamma in sched.stages() {
        model.set_kwta_gamma(gamma)?;
        report.extend(trainer.run(model, ds, sched.epochs_per_step, attack)?);
    }
    Ok(report)
}

/// Fraction of step-to-step loss changes within `factor` interquartile ranges.
pub fn smooth_step_fraction(losses: &[f64], factor: f64) -> f64 {
    let deltas: Vec<f64> = losses.windows(2).map(|w| w[1] - w[0]).collect();
    if deltas.is_empty() {
        return 1.0;
    }
    let mut sorted = deltas.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    let iqr = q(0.75) - q(0.25);
    deltas.iter().filter(|d| d.abs() <= factor * iqr).count() as f64 / deltas.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::nn::{mlp_specs, Activation, Params};

    #[test]
    fn sgd_step_examples() {
        let mut p = vec![1.0f64];
        let mut v = Vec::new();
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.0).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);

        let mut p = vec![0.0f64, 0.0];
        let mut v = Vec::new();
        sgd_step(&mut p, &[1.0, 1.0], &mut v, 1.0, 0.9).unwrap();
        sgd_step(&mut p, &[1.0, 1.0], &mut v, 1.0, 0.9).unwrap();
        assert!(p.iter().all(|&x| (x + 2.9).abs() < 1e-12));

        let mut p = vec![5.0];
        let mut v = vec![2.0];
        for i in 1..=3 {
            sgd_step(&mut p, &[0.0], &mut v, 0.5, 0.5).unwrap();
            assert!((v[0] - 2.0 * 0.5f64.powi(i)).abs() < 1e-15);
        }
        assert!(sgd_step(&mut p, &[0.0, 1.0], &mut v, 0.5, 0.5).is_err());
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = vec![3.0, -1.0];
        let mut v = Vec::new();
        for _ in 0..5 {
            sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9).unwrap();
        }
        assert_eq!(p, vec![3.0, -1.0]);
    }

    #[test]
    fn config_validation_and_schedule() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.lr_schedule = vec![(0, 0.1), (5, 0.01), (5, 0.001)];
        assert!(c.validate().is_err());
        c.lr_schedule = vec![(0, 0.1), (5, 0.01)];
        assert_eq!(c.lr_at(4), 0.1);
        assert_eq!(c.lr_at(5), 0.01);
        c.momentum = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn finetune_stage_arithmetic() {
        assert_eq!(FinetuneSchedule::new(0.2, 0.19, 0.005).stages(), vec![0.195, 0.19]);
        assert!(FinetuneSchedule::new(0.2, 0.2, 0.005).stages().is_empty());
        let s = FinetuneSchedule::new(0.2, 0.08, 0.005).stages();
        assert_eq!(s.len(), 24);
        assert_eq!(*s.last().unwrap(), 0.08);
        assert!(FinetuneSchedule::new(0.1, 0.2, 0.005).validate().is_err());
        assert!(FinetuneSchedule::new(0.2, 0.1, 0.0).validate().is_err());
    }

    fn blob_model(act: Activation, seed: u64) -> Model {
        Model::build(&[2], mlp_specs(2, &[16], 2, act), &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn separable_blobs_are_learned() {
        let ds = synthetic_blobs(200, [3.0, 0.0], 0.5, 1.0, &mut Rng::new(1)).unwrap();
        let mut linear = Model::build(&[2], mlp_specs(2, &[], 2, Activation::Relu), &mut Rng::new(2)).unwrap();
        let cfg = TrainConfig::constant(20, 16, 0.05, 0.9, 3);
        let r = train_standard(&mut linear, &ds, &cfg).unwrap();
        assert_eq!(r.metrics.len(), 20);
        assert_eq!(evaluate(&linear, &ds).unwrap().1, 1.0);

        let mut kw = blob_model(Activation::Kwta(0.3), 4);
        train_standard(&mut kw, &ds, &cfg).unwrap();
        assert_eq!(evaluate(&kw, &ds).unwrap().1, 1.0);
    }

    fn bits(m: &Model) -> Vec<u64> {
        m.params()
            .flat_map(|p: &Params<f64>| {
                p.weight
                    .data()
                    .iter()
                    .chain(p.bias.data())
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let ds = synthetic_blobs(50, [3.0, 0.0], 0.5, 1.0, &mut Rng::new(1)).unwrap();
        let mut m = blob_model(Activation::Relu, 0);
        let before = bits(&m);
        train_standard(&mut m, &ds, &TrainConfig::constant(3, 8, 0.0, 0.9, 0)).unwrap();
        assert_eq!(before, bits(&m));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = synthetic_blobs(64, [2.0, 1.0], 0.7, 0.5, &mut Rng::new(9)).unwrap();
        let cfg = TrainConfig::constant(4, 8, 0.05, 0.9, 11);
        let run = || {
            let mut m = blob_model(Activation::Kwta(0.25), 5);
            train_standard(&mut m, &ds, &cfg).unwrap();
            bits(&m)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_budget_adversarial_training_matches_standard() {
        let ds = synthetic_blobs(64, [3.0, 0.0], 0.5, 1.0, &mut Rng::new(2)).unwrap();
        let cfg = TrainConfig::constant(3, 16, 0.05, 0.9, 1);
        let mut a = blob_model(Activation::Relu, 6);
        let mut b = a.clone();
        train_standard(&mut a, &ds, &cfg).unwrap();
        let attack = AttackConfig::pgd(0.0, 3).with_clamp(None);
        train_adversarial(&mut b, &ds, &attack, &cfg).unwrap();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn adversarial_training_on_margin_blobs_is_robust() {
        // Class gap at least 2 (each point >= 1 from the separator); ε = 0.3 < 1.
        let ds = synthetic_blobs(200, [3.0, 0.0], 0.5, 1.0, &mut Rng::new(3)).unwrap();
        let mut m = Model::build(&[2], mlp_specs(2, &[], 2, Activation::Relu), &mut Rng::new(2)).unwrap();
        let attack = AttackConfig::pgd(0.3, 10).with_clamp(None).with_seed(4);
        train_adversarial(&mut m, &ds, &attack, &TrainConfig::constant(20, 16, 0.05, 0.9, 5)).unwrap();
        let r = crate::attacks::evaluate_robust_accuracy(&m, &ds, &attack).unwrap();
        assert_eq!(r.a_rob, 1.0);
    }

    #[test]
    fn finetune_requires_kwta_and_matching_start() {
        let ds = synthetic_blobs(32, [3.0, 0.0], 0.5, 1.0, &mut Rng::new(2)).unwrap();
        let cfg = TrainConfig::constant(1, 16, 0.05, 0.9, 1);
        let mut relu = blob_model(Activation::Relu, 1);
        assert!(matches!(
            finetune_sparsity(&mut relu, &ds, &FinetuneSchedule::new(0.2, 0.1, 0.05), &cfg),
            Err(Error::Usage(_))
        ));
        let mut kw = blob_model(Activation::Kwta(0.5), 1);
        assert!(finetune_sparsity(&mut kw, &ds, &FinetuneSchedule::new(0.4, 0.3, 0.05), &cfg).is_err());
        let r = finetune_sparsity(&mut kw, &ds, &FinetuneSchedule::new(0.5, 0.25, 0.125), &cfg).unwrap();
        let g: Vec<_> = r.metrics.iter().map(|m| m.gamma.unwrap()).collect();
        assert_eq!(g, vec![0.375, 0.375, 0.25, 0.25]);
        assert_eq!(kw.kwta_gammas(), vec![0.25]);

        let before = bits(&kw);
        let r = finetune_sparsity(&mut kw, &ds, &FinetuneSchedule::new(0.25, 0.25, 0.01), &cfg).unwrap();
        assert!(r.metrics.is_empty());
        assert_eq!(before, bits(&kw));
    }

    #[test]
    fn metrics_csv_layout() {
        let rows = vec![
            EpochMetrics {
                epoch: 0,
                split: "train".into(),
                loss: 0.5,
                accuracy: 0.75,
                gamma: Some(0.2),
            },
            EpochMetrics {
                epoch: 0,
                split: "test".into(),
                loss: 0.6,
                accuracy: 0.7,
                gamma: None,
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,split,loss,accuracy,gamma\n0,train,0.5,0.75,0.2\n0,test,0.6,0.7,\n"
        );
    }

    #[test]
    fn smoothness_statistic() {
        let mut rng = Rng::new(0);
        let mut losses: Vec<f64> = (0..200)
            .map(|i| 2.0 - 0.005 * i as f64 + 0.01 * rng.standard_normal())
            .collect();
        assert!(smooth_step_fraction(&losses, 10.0) > 0.98);
        losses[100] += 5.0;
        let f = smooth_step_fraction(&losses, 10.0);
        assert!((f - 197.0 / 199.0).abs() < 1e-12, "{f}");
    }
}
