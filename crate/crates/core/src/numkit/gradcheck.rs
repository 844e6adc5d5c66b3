//! Central finite-difference gradient oracle.

use super::linalg::RealVector;
use crate::error::{Error, Result};

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Result<RealVector>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = f(&probe);
        probe[i] = orig - eps;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!("f not finite around coordinate {i}")));
        }
        grad.push((fp - fm) / (2.0 * eps));
    }
    Ok(grad.into())
}

/// Largest `|a - b| / max(|a|, |b|)` over coordinates where `max(|a|, |b|) > floor`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter_map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            (scale > floor).then(|| (a - n).abs() / scale)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm() {
        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function() {
        let g = finite_diff_grad(|_| 7.0, &[1.0, -3.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn product() {
        let g = finite_diff_grad(|x| x[0] * x[1], &[3.0, 5.0], 1e-5).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_eps_and_nan() {
        assert!(finite_diff_grad(|_| 0.0, &[1.0], 0.0).is_err());
        assert!(finite_diff_grad(|x| x[0].ln(), &[0.0], 1e-5).is_err());
    }
}
