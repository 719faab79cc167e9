use crate::error::{arg, Result};
use crate::tensor::{dot, Rng};

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Uniformly random unit vector orthogonal to `x`.
pub(crate) fn orthogonal_unit(x: &[f64], rng: &mut Rng) -> Vec<f64> {
    let xn = norm(x);
    loop {
        let mut v: Vec<f64> = (0..x.len()).map(|_| rng.standard_normal()).collect();
        // Two Gram-Schmidt passes keep <v, x> at rounding level.
        for _ in 0..2 {
            let c = dot(&v, x) / (xn * xn);
            v.iter_mut().zip(x).for_each(|(vi, &xi)| *vi -= c * xi);
        }
        let n = norm(&v);
        if n > 1e-8 {
            return v.into_iter().map(|vi| vi / n).collect();
        }
    }
}

/// `x + sqrt(beta) * |x| * x_perp` with `x_perp` a uniformly random unit
/// vector orthogonal to `x`, so that `d(x, x')^2 / |x|^2 = beta`.
pub fn perpendicular_perturb(x: &[f64], beta: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(arg("a perpendicular direction needs dimension >= 2"));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(arg(format!("beta must be positive, got {beta}")));
    }
    let xn = norm(x);
    if xn == 0.0 {
        return Err(arg("cannot perturb the zero vector"));
    }
    let perp = orthogonal_unit(x, rng);
    let scale = beta.sqrt() * xn;
    Ok(x.iter().zip(&perp).map(|(&a, &p)| a + scale * p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_identities() {
        let mut rng = Rng::new(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..9).map(|_| rng.standard_normal()).collect();
            let beta = rng.uniform(0.01, 0.99);
            let xp = perpendicular_perturb(&x, beta, &mut rng).unwrap();
            let d: Vec<f64> = xp.iter().zip(&x).map(|(a, b)| a - b).collect();
            assert!(dot(&d, &x).abs() < 1e-12 * norm(&x) * norm(&d));
            assert!((norm(&d) - beta.sqrt() * norm(&x)).abs() < 1e-12 * norm(&x));
            assert!((cosine(&x, &xp) - 1.0 / (1.0 + beta).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_has_one_orthogonal_axis() {
        let mut rng = Rng::new(2);
        let xp = perpendicular_perturb(&[1.0, 0.0], 1.0, &mut rng).unwrap();
        assert!((xp[0] - 1.0).abs() < 1e-15);
        assert!((xp[1].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        let mut rng = Rng::new(0);
        assert!(perpendicular_perturb(&[1.0], 0.5, &mut rng).is_err());
        assert!(perpendicular_perturb(&[0.0, 0.0], 0.5, &mut rng).is_err());
        assert!(perpendicular_perturb(&[1.0, 0.0], 0.0, &mut rng).is_err());
    }
}
