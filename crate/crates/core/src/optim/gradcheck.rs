use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Finite-difference comparison of an analytic gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `(row, col, analytic, finite difference)` per checked coordinate.
    pub samples: Vec<(usize, usize, f64, f64)>,
}

/// Relative error `|fd − g| / max(|fd|, |g|, floor·‖g‖∞)`. The floor keeps
/// coordinates whose gradient is many orders below the largest one from
/// being judged on roundoff alone.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Compare `grad` against central differences of `f` at `point` on
/// `n_coords` coordinates drawn without replacement (all of them when fewer
/// exist).
pub fn gradcheck<F>(
    f: F,
    point: &Array2<f64>,
    grad: &Array2<f64>,
    step: f64,
    n_coords: usize,
    seed: u64,
) -> Result<GradcheckReport>
where
    F: Fn(&Array2<f64>) -> Result<f64>,
{
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {step}")));
    }
    if grad.dim() != point.dim() {
        return Err(Error::shape(point.shape(), grad.shape()));
    }
    let (nr, nc) = point.dim();
    let total = nr * nc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, total, n_coords.min(total));
    let gmax = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        samples: Vec::with_capacity(picks.len()),
    };
    for flat in picks.iter() {
        let (i, j) = (flat / nc, flat % nc);
        let mut x = point.clone();
        x[[i, j]] += step;
        let fp = f(&x)?;
        x[[i, j]] = point[[i, j]] - step;
        let fm = f(&x)?;
        let fd = (fp - fm) / (2.0 * step);
        let g = grad[[i, j]];
        let scale = fd.abs().max(g.abs()).max(GRADCHECK_FLOOR * gmax);
        let rel = if scale == 0.0 { 0.0 } else { (fd - g).abs() / scale };
        report.max_rel_error = report.max_rel_error.max(rel);
        report.samples.push((i, j, g, fd));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let a = Array2::from_shape_fn((6, 7), |(i, j)| 0.3 + i as f64 - 0.2 * j as f64);
        let x = Array2::from_shape_fn((6, 7), |(i, j)| (i * j) as f64 * 0.1 - 1.0);
        let f = |x: &Array2<f64>| Ok((&a * x * x).sum());
        let g = &a * &x * 2.0;
        let r = gradcheck(f, &x, &g, 1e-3, 40, 0).unwrap();
        assert_eq!(r.samples.len(), 40);
        assert!(r.max_rel_error < 1e-10, "{}", r.max_rel_error);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let x = Array2::from_elem((2, 2), 1.0);
        let f = |x: &Array2<f64>| Ok(x.mapv(|v| v * v).sum());
        let r = gradcheck(f, &x, &Array2::from_elem((2, 2), 1.0), 1e-4, 32, 0).unwrap();
        assert!(r.max_rel_error > 0.4);
        assert_eq!(r.samples.len(), 4);
    }

    #[test]
    fn zero_step_is_rejected() {
        let x = Array2::zeros((2, 2));
        assert!(gradcheck(|_| Ok(0.0), &x, &x, 0.0, 4, 0).is_err());
    }
}
