//! Central finite-difference check of [`Model::backward`].

use super::{cross_entropy_rows, Model};
use crate::error::{arg, Result};
use crate::tensor::Tensor;

/// Worst relative disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_param_rel_err: f64,
    pub max_input_rel_err: f64,
    /// Number of scalar derivatives compared.
    pub checked: usize,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.max_param_rel_err.max(self.max_input_rel_err)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`: relative error that stays meaningful
/// for derivatives near zero, where both values are rounding noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn total_loss(model: &Model<f64>, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let (losses, _) = cross_entropy_rows(&model.predict(x)?, labels)?;
    Ok(losses.iter().sum())
}

/// Entry `i` of parameter block `block`: weights at even blocks, biases at odd.
fn param_slot(model: &mut Model<f64>, block: usize, i: usize) -> &mut f64 {
    let p = model.params_mut().swap_remove(block / 2);
    let t = if block.is_multiple_of(2) {
        &mut p.weight
    } else {
        &mut p.bias
    };
    &mut t.data_mut()[i]
}

/// Compares every parameter and input derivative of the summed cross-entropy
/// with `(L(θ+h) - L(θ-h)) / 2h`.
///
/// Only meaningful where no activation pattern flips within `±h`; callers
/// pick points whose [`super::ForwardTrace::min_margin`] is large.
pub fn finite_difference_check(
    model: &Model<f64>,
    x: &Tensor,
    labels: &[usize],
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    if !(h > 0.0 && floor > 0.0) {
        return Err(arg(format!("step and floor must be positive, got {h} and {floor}")));
    }
    let trace = model.forward(x)?;
    let (_, g) = cross_entropy_rows(trace.logits(), labels)?;
    let grads = model.backward(&trace, &g)?;
    let analytic: Vec<&[f64]> = grads
        .params
        .iter()
        .flatten()
        .flat_map(|p| [p.weight.data(), p.bias.data()])
        .collect();

    let mut probe = model.clone();
    let mut max_param = 0.0f64;
    let mut checked = 0;
    for (block, values) in analytic.iter().enumerate() {
        for (i, &a) in values.iter().enumerate() {
            let theta = *param_slot(&mut probe, block, i);
            *param_slot(&mut probe, block, i) = theta + h;
            let up = total_loss(&probe, x, labels)?;
            *param_slot(&mut probe, block, i) = theta - h;
            let down = total_loss(&probe, x, labels)?;
            *param_slot(&mut probe, block, i) = theta;
            let numeric = (up - down) / (2.0 * h);
            max_param = max_param.max(relative_error(a, numeric, floor));
            checked += 1;
        }
    }

    let mut max_input = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp.data_mut()[i] = x.data()[i] + h;
        let up = total_loss(model, &xp, labels)?;
        xp.data_mut()[i] = x.data()[i] - h;
        let down = total_loss(model, &xp, labels)?;
        xp.data_mut()[i] = x.data()[i];
        let numeric = (up - down) / (2.0 * h);
        max_input = max_input.max(relative_error(grads.input.data()[i], numeric, floor));
        checked += 1;
    }
    Ok(GradCheck {
        max_param_rel_err: max_param,
        max_input_rel_err: max_input,
        checked,
    })
}
