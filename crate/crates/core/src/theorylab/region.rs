use serde::Serialize;

use crate::error::{arg, shape, Result};
use crate::nn::Model;
use crate::tensor::{Real, Rng, Tensor};

/// Outcome of probing the linear region around one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionCheck {
    /// Largest relative second difference over retained probes; `None` when
    /// every probe changed some activation pattern (region too thin).
    pub max_defect: Option<f64>,
    pub retained: usize,
    /// Probes discarded because some pattern changed.
    pub discarded: usize,
}

/// Checks that `f` is affine on the linear region containing `x`.
///
/// Each probe draws `h1, h2` with entries uniform in `[-probe_scale,
/// probe_scale]` and is kept only if `x`, `x+h1`, `x+h2` and `x+h1+h2` share
/// one region signature. The defect of a kept probe is
/// `‖f(x+h1+h2) - f(x+h1) - f(x+h2) + f(x)‖∞ / max(1, ‖f(x)‖∞)`.
pub fn affine_region_check<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    n_probes: usize,
    probe_scale: f64,
    rng: &mut Rng,
) -> Result<RegionCheck> {
    if x.shape() != model.input_shape() {
        return Err(shape(format!(
            "point of shape {:?} for model input {:?}",
            x.shape(),
            model.input_shape()
        )));
    }
    if n_probes == 0 || !(probe_scale > 0.0) {
        return Err(arg(format!(
            "need probes >= 1 and a positive scale, got {n_probes} and {probe_scale}"
        )));
    }
    let d = x.len();
    let mut batch_shape = vec![1 + 3 * n_probes];
    batch_shape.extend_from_slice(model.input_shape());
    let mut data = Vec::with_capacity((1 + 3 * n_probes) * d);
    data.extend_from_slice(x.data());
    for _ in 0..n_probes {
        let h1: Vec<f64> = (0..d).map(|_| rng.uniform(-probe_scale, probe_scale)).collect();
        let h2: Vec<f64> = (0..d).map(|_| rng.uniform(-probe_scale, probe_scale)).collect();
        for (a, b) in [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
            data.extend(
                x.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v + T::of(a * h1[i] + b * h2[i])),
            );
        }
    }
    let trace = model.forward(&Tensor::new(batch_shape, data)?)?;
    let logits = trace.logits();
    let c = model.classes();
    let row = |i: usize| -> Vec<f64> { logits.data()[i * c..(i + 1) * c].iter().map(|v| v.f64()).collect() };
    let f0 = row(0);
    let scale = f0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let sig0 = trace.region_signature(0);
    let (mut retained, mut discarded, mut worst) = (0, 0, None::<f64>);
    for p in 0..n_probes {
        let base = 1 + 3 * p;
        if (base..base + 3).any(|i| trace.region_signature(i) != sig0) {
            discarded += 1;
            continue;
        }
        retained += 1;
        let (f1, f2, f12) = (row(base), row(base + 1), row(base + 2));
        let defect = (0..c)
            .map(|j| (f12[j] - f1[j] - f2[j] + f0[j]).abs())
            .fold(0.0, f64::max)
            / scale;
        worst = Some(worst.map_or(defect, |w| w.max(defect)));
    }
    Ok(RegionCheck {
        max_defect: worst,
        retained,
        discarded,
    })
}
