use ndarray::{Array3, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::TargetSpec;
use crate::error::{Error, Result};

/// Weights of the auxiliary loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub energy: f64,
    pub balance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            energy: 0.2,
            balance: 0.5,
        }
    }
}

/// One evaluation of the loss stack.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub acc: f64,
    pub energy: f64,
    pub balance: f64,
}

impl LossTerms {
    fn combine(acc: f64, energy: f64, balance: f64, w: &LossWeights) -> Self {
        LossTerms {
            total: acc + w.energy * energy + w.balance * balance,
            acc,
            energy,
            balance,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.acc.is_finite() && self.energy.is_finite() && self.balance.is_finite()
    }
}

fn check(p: &Array3<Complex64>, t: &TargetSpec) -> Result<()> {
    if p.dim() != t.shape() {
        let (a, b, c) = t.shape();
        return Err(Error::shape(&[a, b, c], p.shape()));
    }
    Ok(())
}

/// `(1 − cos, ∂L/∂I)` for the intensity correlation term.
fn acc_parts(p: &Array3<Complex64>, t: &TargetSpec, want_grad: bool) -> (f64, Option<Array3<f64>>) {
    let mut dot = 0.0;
    let mut nn_i = 0.0;
    let mut nn_a = 0.0;
    Zip::from(p).and(&t.a_target).for_each(|p, &a| {
        let i = p.norm_sqr();
        let a2 = a * a;
        dot += a2 * i;
        nn_i += i * i;
        nn_a += a2 * a2;
    });
    if nn_i == 0.0 || nn_a == 0.0 {
        return (1.0, want_grad.then(|| Array3::zeros(p.dim())));
    }
    let (ni, na) = (nn_i.sqrt(), nn_a.sqrt());
    let cos = dot / (ni * na);
    let grad = want_grad.then(|| {
        Zip::from(p)
            .and(&t.a_target)
            .map_collect(|p, &a| -(a * a / (ni * na) - cos * p.norm_sqr() / nn_i))
    });
    (1.0 - cos, grad)
}

fn energy_norm(t: &TargetSpec) -> Result<f64> {
    let s = t.a_target.sum();
    if s <= 0.0 {
        return Err(Error::InvalidParameter("target amplitude sums to zero".into()));
    }
    Ok(s)
}

fn balance_parts(p: &Array3<Complex64>, t: &TargetSpec) -> (f64, f64, f64) {
    let n = t.omega.len() as f64;
    let mean = t.omega.iter().map(|&v| p[v].norm_sqr()).sum::<f64>() / n;
    let var = t
        .omega
        .iter()
        .map(|&v| (p[v].norm_sqr() - mean).powi(2))
        .sum::<f64>()
        / n;
    (var.sqrt(), mean, n)
}

/// `1 − cos(A², |P|²)` over the whole grid; 1 for an all-zero field.
pub fn loss_acc(p: &Array3<Complex64>, t: &TargetSpec) -> Result<f64> {
    check(p, t)?;
    Ok(acc_parts(p, t, false).0)
}

/// `−Σ A·|P| / Σ A`.
pub fn loss_energy(p: &Array3<Complex64>, t: &TargetSpec) -> Result<f64> {
    check(p, t)?;
    let s = energy_norm(t)?;
    let num: f64 = Zip::from(p)
        .and(&t.a_target)
        .fold(0.0, |acc, p, &a| acc + a * p.norm());
    Ok(-num / s)
}

/// Population standard deviation of `|P|²` over `Ω`.
pub fn loss_balance(p: &Array3<Complex64>, t: &TargetSpec) -> Result<f64> {
    check(p, t)?;
    Ok(balance_parts(p, t).0)
}

/// All three terms and the weighted total.
pub fn loss_terms(p: &Array3<Complex64>, t: &TargetSpec, w: &LossWeights) -> Result<LossTerms> {
    Ok(LossTerms::combine(
        loss_acc(p, t)?,
        loss_energy(p, t)?,
        loss_balance(p, t)?,
        w,
    ))
}

/// Loss terms and `∂L/∂Re(P) + i·∂L/∂Im(P)` of the weighted total.
pub fn loss_with_gradient(
    p: &Array3<Complex64>,
    t: &TargetSpec,
    w: &LossWeights,
) -> Result<(LossTerms, Array3<Complex64>)> {
    check(p, t)?;
    let s = energy_norm(t)?;
    let (acc, g_i) = acc_parts(p, t, true);
    let mut g_i = g_i.unwrap_or_else(|| Array3::zeros(p.dim()));
    let (std, mean, n) = balance_parts(p, t);
    if std > 0.0 {
        for &v in &t.omega {
            g_i[v] += w.balance * (p[v].norm_sqr() - mean) / (n * std);
        }
    }
    let mut energy = 0.0;
    let grad = Zip::from(p).and(&t.a_target).and(&g_i).map_collect(|&p, &a, &gi| {
        let amp = p.norm();
        energy -= a * amp / s;
        let mut g = p * (2.0 * gi);
        if a != 0.0 && amp > 0.0 {
            g -= p * (w.energy * a / (s * amp));
        }
        g
    });
    Ok((LossTerms::combine(acc, energy, std, w), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_voxel(a: [f64; 2]) -> TargetSpec {
        let arr = Array3::from_shape_vec((2, 1, 1), a.to_vec()).unwrap();
        TargetSpec::from_amplitude(arr, vec![[0, 0, 0]]).unwrap()
    }

    fn field(v: &[f64]) -> Array3<Complex64> {
        Array3::from_shape_vec((v.len(), 1, 1), v.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .unwrap()
    }

    #[test]
    fn acc_hand_case() {
        let t = two_voxel([1.0, 0.0]);
        assert_abs_diff_eq!(loss_acc(&field(&[1.0, 1.0]), &t).unwrap(), 1.0 - 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss_acc(&field(&[3.0, 0.0]), &t).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(loss_acc(&field(&[0.0, 2.0]), &t).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(loss_acc(&field(&[0.0, 0.0]), &t).unwrap(), 1.0);
    }

    #[test]
    fn energy_and_balance_hand_cases() {
        let t = two_voxel([1.0, 1.0]);
        assert_abs_diff_eq!(loss_energy(&field(&[2.0, 4.0]), &t).unwrap(), -3.0, epsilon = 1e-12);
        assert_eq!(loss_energy(&field(&[0.0, 0.0]), &t).unwrap(), 0.0);
        assert_abs_diff_eq!(loss_balance(&field(&[1.0, 3f64.sqrt()]), &t).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(loss_balance(&field(&[2.0, 2.0]), &t).unwrap(), 0.0);
    }

    #[test]
    fn acc_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Array3::from_shape_fn((4, 4, 4), |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        let t = TargetSpec::from_amplitude(a, vec![[0, 0, 0]]).unwrap_or_else(|_| {
            let mut a = Array3::zeros((4, 4, 4));
            a[[0, 0, 0]] = 1.0;
            TargetSpec::from_amplitude(a, vec![[0, 0, 0]]).unwrap()
        });
        let p = Array3::from_shape_fn((4, 4, 4), |_| Complex64::new(rng.random(), rng.random()));
        let l1 = loss_acc(&p, &t).unwrap();
        let l2 = loss_acc(&p.mapv(|v| v * 7.5), &t).unwrap();
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-14);
    }

    #[test]
    fn total_recombines_and_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = Array3::from_shape_fn((3, 3, 3), |_| rng.random_range(0.0..0.8));
        a[[1, 1, 1]] = 1.0;
        a[[0, 2, 1]] = 1.0;
        a[[2, 0, 0]] = 1.0;
        let t = TargetSpec::from_amplitude(a, vec![[1, 1, 1]]).unwrap();
        let p = Array3::from_shape_fn((3, 3, 3), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let w = LossWeights::default();
        let (terms, g) = loss_with_gradient(&p, &t, &w).unwrap();
        let direct = loss_terms(&p, &t, &w).unwrap();
        assert_abs_diff_eq!(terms.total, direct.total, epsilon = 1e-14);
        assert_eq!(terms.total, terms.acc + w.energy * terms.energy + w.balance * terms.balance);
        let h = 1e-6;
        for idx in [[1, 1, 1], [0, 2, 1], [2, 2, 2]] {
            for (dir, comp) in [(Complex64::new(h, 0.0), g[idx].re), (Complex64::new(0.0, h), g[idx].im)] {
                let mut pp = p.clone();
                pp[idx] += dir;
                let mut pm = p.clone();
                pm[idx] -= dir;
                let fd = (loss_terms(&pp, &t, &w).unwrap().total - loss_terms(&pm, &t, &w).unwrap().total)
                    / (2.0 * h);
                assert_abs_diff_eq!(fd, comp, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn balance_ignores_omega_order() {
        let t = two_voxel([1.0, 1.0]);
        let mut r = t.clone();
        r.omega.reverse();
        let p = field(&[1.0, 2.0]);
        assert_eq!(loss_balance(&p, &t).unwrap(), loss_balance(&p, &r).unwrap());
    }
}
