use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::geometry::{norm, orthogonal_unit};
use crate::attacks::csv_err;
use crate::error::{arg, shape, Result};
use crate::nn::{cross_entropy_rows, Model};
use crate::tensor::{Real, Rng, Tensor};

/// Loss on the plane `x + e1*g1 + e2*g2`, row-major in `e1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub samples_per_axis: usize,
    pub eps: Vec<f64>,
    /// `loss[i * n + j]` at `(eps[i], eps[j])`.
    pub loss: Vec<f64>,
    /// `true` when the input gradient vanished and `g1` is a random direction.
    pub random_g1: bool,
}

#[derive(Serialize)]
struct Row {
    eps1: f64,
    eps2: f64,
    loss: f64,
}

impl Landscape {
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let n = self.samples_per_axis;
        (0..n * n).map(move |k| (self.eps[k / n], self.eps[k % n], self.loss[k]))
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (eps1, eps2, loss) in self.rows() {
            w.serialize(Row { eps1, eps2, loss }).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn sign_changes(&self) -> usize {
        laplacian_sign_changes(&self.loss, self.samples_per_axis)
    }
}

/// `n` evenly spaced values in `[-r, r]`; `n = 1` gives the single point 0.
fn linspace(r: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -r + 2.0 * r * i as f64 / (n - 1) as f64).collect()
}

const EVAL_BATCH: usize = 250;

/// Samples the loss of `(x, y)` on the plane spanned by the normalized sign
/// of the input gradient (`g1`) and a random unit direction orthogonal to it
/// (`g2`), over an `n × n` grid of `[-range, range]²`.
pub fn loss_landscape<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    y: usize,
    range: f64,
    samples_per_axis: usize,
    rng: &mut Rng,
) -> Result<Landscape> {
    if x.shape() != model.input_shape() {
        return Err(shape(format!(
            "example of shape {:?} for model input {:?}",
            x.shape(),
            model.input_shape()
        )));
    }
    if samples_per_axis == 0 || !(range >= 0.0) {
        return Err(arg(format!(
            "need samples >= 1 and range >= 0, got {samples_per_axis} and {range}"
        )));
    }
    let trace = model.forward(x)?;
    let (_, g) = cross_entropy_rows(trace.logits(), &[y])?;
    let grad = model.input_gradient(&trace, &g)?;
    let signs: Vec<f64> = grad
        .data()
        .iter()
        .map(|v| v.f64().signum() * (v.f64() != 0.0) as u8 as f64)
        .collect();
    let n_sign = norm(&signs);
    let (g1, random_g1) = if n_sign > 0.0 {
        (signs.iter().map(|s| s / n_sign).collect::<Vec<_>>(), false)
    } else {
        (rng.unit_vector(x.len()), true)
    };
    let g2 = orthogonal_unit(&g1, rng);

    let eps = linspace(range, samples_per_axis);
    let n = samples_per_axis;
    let d = x.len();
    let mut loss = Vec::with_capacity(n * n);
    let points: Vec<(f64, f64)> = (0..n * n).map(|k| (eps[k / n], eps[k % n])).collect();
    for chunk in points.chunks(EVAL_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * d);
        for &(e1, e2) in chunk {
            data.extend(
                x.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| T::of(v.f64() + e1 * g1[i] + e2 * g2[i])),
            );
        }
        let mut shape = vec![chunk.len()];
        shape.extend_from_slice(model.input_shape());
        let logits = model.predict(&Tensor::new(shape, data)?)?;
        let (l, _) = cross_entropy_rows(&logits, &vec![y; chunk.len()])?;
        loss.extend(l.into_iter().map(|v| v.f64()));
    }
    Ok(Landscape {
        samples_per_axis: n,
        eps,
        loss,
        random_g1,
    })
}

/// Sign changes of the 5-point discrete Laplacian between horizontally or
/// vertically adjacent interior grid nodes.
///
/// Values within `1e-8 * (1 + max|loss|)` of zero count as zero (flat), and
/// only a strict `+`/`-` pair is a change; an affine surface therefore has none.
pub fn laplacian_sign_changes(loss: &[f64], n: usize) -> usize {
    if n < 4 || loss.len() != n * n {
        return 0;
    }
    let at = |i: usize, j: usize| loss[i * n + j];
    let tol = 1e-8 * (1.0 + loss.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let m = n - 2;
    let sign: Vec<i8> = (0..m * m)
        .map(|k| {
            let (i, j) = (k / m + 1, k % m + 1);
            let lap = at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1) - 4.0 * at(i, j);
            if lap > tol {
                1
            } else if lap < -tol {
                -1
            } else {
                0
            }
        })
        .collect();
    let mut count = 0;
    for i in 0..m {
        for j in 0..m {
            let s = sign[i * m + j];
            if j + 1 < m && s * sign[i * m + j + 1] < 0 {
                count += 1;
            }
            if i + 1 < m && s * sign[(i + 1) * m + j] < 0 {
                count += 1;
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, LayerSpec};

    fn linear() -> Model {
        build_model(&[5], vec![LayerSpec::Dense { in_dim: 5, out_dim: 3 }], &mut Rng::new(4)).unwrap()
    }

    #[test]
    fn default_grid_shape_and_single_sample() {
        let m = linear();
        let x = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let l = loss_landscape(&m, &x, 1, 0.04, 50, &mut Rng::new(0)).unwrap();
        assert_eq!(l.rows().count(), 2500);
        assert_eq!((l.eps[0], l.eps[49]), (-0.04, 0.04));

        let one = loss_landscape(&m, &x, 1, 0.04, 1, &mut Rng::new(0)).unwrap();
        let clean = cross_entropy_rows(&m.predict(&x).unwrap(), &[1]).unwrap().0[0];
        assert_eq!(one.rows().collect::<Vec<_>>(), vec![(0.0, 0.0, clean)]);
    }

    #[test]
    fn linear_logits_give_a_smooth_surface() {
        // Cross-entropy of affine logits is smooth, so its Laplacian is
        // sign-constant at this scale; exact planarity is checked on the logits.
        let m = linear();
        let x = Tensor::vector(vec![0.3, -0.2, 0.1, 0.0, 0.7]);
        let mut rng = Rng::new(1);
        let l = loss_landscape(&m, &x, 0, 0.04, 20, &mut rng).unwrap();
        assert_eq!(l.sign_changes(), 0);
        assert!(!l.random_g1);
    }

    #[test]
    fn plane_has_no_sign_changes_and_kinks_do() {
        let n = 10;
        let plane: Vec<f64> = (0..n * n)
            .map(|k| 0.5 + 0.1 * (k / n) as f64 - 0.3 * (k % n) as f64)
            .collect();
        assert_eq!(laplacian_sign_changes(&plane, n), 0);
        let step: Vec<f64> = (0..n * n).map(|k| if k % n >= 5 { 1.0 } else { 0.0 }).collect();
        assert!(laplacian_sign_changes(&step, n) > 0);
    }

    #[test]
    fn zero_gradient_falls_back_to_random_direction() {
        let mut m = linear();
        let mut p = m.params().next().unwrap().clone();
        p.weight = Tensor::zeros(&[3, 5]).unwrap();
        m.set_params(0, p).unwrap();
        let l = loss_landscape(&m, &Tensor::vector(vec![0.0; 5]), 0, 0.04, 3, &mut Rng::new(0)).unwrap();
        assert!(l.random_g1);
        assert!(l.loss.iter().all(|&v| (v - 3f64.ln()).abs() < 1e-12));
    }
}
