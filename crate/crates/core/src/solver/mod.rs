//! Steady-state single-frequency propagation through voxel media.
//!
//! The field is marched plane by plane along `z` with a symmetric split step:
//! a half phase/absorption screen, an angular-spectrum diffraction step in the
//! reference medium, and another half screen. Impedance changes between
//! consecutive voxel planes transmit the marching wave with `2Z₂/(Z₁+Z₂)` and
//! spawn a reflected wave with `(Z₂−Z₁)/(Z₁+Z₂)` that is marched in the opposite
//! direction; reflections of reflections are followed up to the configured
//! order and all orders are summed coherently.
//!
//! Plane `k` is the interface between voxel planes `k` and `k + 1`; a step
//! from plane `k` to `k ± 1` crosses voxel plane `max(k, k ± 1)`. The source
//! is the field leaving plane 0.

mod backproject;
mod fft;
mod march;

pub use backproject::backproject;
pub use march::{
    march_backward, propagate, propagate_adjoint, propagate_field, AdjointGradient, SliceCache,
};

use ndarray::{s, Array2, Array3, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::{GridSpec, SourceSpec};

/// Treatment of evanescent spectral components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EvanescentMode {
    /// Exponential decay `exp(−|k_z|·dz)`.
    #[default]
    Decay,
    /// Removed entirely (the propagator is then unitary on what remains).
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Number of interface reflections followed (0 = transmission only).
    pub reflection_order: usize,
    pub evanescent_mode: EvanescentMode,
    /// Propagating components with `k_⊥ > angular_cutoff·k0` are removed.
    pub angular_cutoff: f64,
    /// Width in cells of the lateral absorbing taper (0 = periodic domain).
    pub boundary_cells: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            reflection_order: 4,
            evanescent_mode: EvanescentMode::Decay,
            angular_cutoff: 1.0,
            boundary_cells: 0,
        }
    }
}

pub const MAX_REFLECTION_ORDER: usize = 8;

impl SolverConfig {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.reflection_order > MAX_REFLECTION_ORDER {
            return Err(Error::InvalidParameter(format!(
                "reflection order {} exceeds the limit of {MAX_REFLECTION_ORDER}",
                self.reflection_order
            )));
        }
        if !(self.angular_cutoff > 0.0 && self.angular_cutoff <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "angular cutoff must lie in (0, 1], got {}",
                self.angular_cutoff
            )));
        }
        if 2 * self.boundary_cells >= grid.nx.min(grid.ny) {
            return Err(Error::InvalidParameter(format!(
                "{} boundary cells do not fit a {}x{} plane",
                self.boundary_cells, grid.nx, grid.ny
            )));
        }
        Ok(())
    }
}

/// Complex pressure over a grid, `(nx, ny, nz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub values: Array3<Complex64>,
    pub grid: GridSpec,
}

impl ComplexField {
    pub fn new(values: Array3<Complex64>, grid: GridSpec) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::shape(&[grid.nx, grid.ny, grid.nz], values.shape()));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Numerical("field contains non-finite values".into()));
        }
        Ok(ComplexField { values, grid })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        ComplexField {
            values: Array3::zeros(grid.shape()),
            grid,
        }
    }

    pub fn amplitude(&self) -> Array3<f64> {
        self.values.mapv(|v| v.norm())
    }

    pub fn intensity(&self) -> Array3<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    pub fn plane(&self, k: usize) -> ArrayView2<'_, Complex64> {
        self.values.slice(s![.., .., k])
    }

    pub fn max_amplitude(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Index of the largest amplitude (first occurrence in memory order).
    pub fn argmax(&self) -> [usize; 3] {
        let mut best = (0.0, [0, 0, 0]);
        for ((i, j, k), v) in self.values.indexed_iter() {
            let a = v.norm();
            if a > best.0 {
                best = (a, [i, j, k]);
            }
        }
        best.1
    }

    /// Planes `start..end` as a standalone field.
    pub fn crop_z(&self, start: usize, end: usize) -> Result<ComplexField> {
        if start >= end || end > self.grid.nz {
            return Err(Error::OutOfBounds(format!(
                "plane range {start}..{end} invalid for {} planes",
                self.grid.nz
            )));
        }
        Ok(ComplexField {
            values: self.values.slice(s![.., .., start..end]).to_owned(),
            grid: self.grid.with_nz(end - start),
        })
    }

    pub fn scaled(&self, factor: f64) -> ComplexField {
        ComplexField {
            values: self.values.mapv(|v| v * factor),
            grid: self.grid,
        }
    }
}

/// Source plane `A_source·exp(iφ)`, zero outside the aperture.
pub fn apply_phase_delays(src: &SourceSpec, phase: &Array2<f64>) -> Result<Array2<Complex64>> {
    if phase.dim() != src.aperture_mask.dim() {
        return Err(Error::shape(src.aperture_mask.shape(), phase.shape()));
    }
    let mut out = Array2::zeros(phase.dim());
    ndarray::Zip::from(&mut out)
        .and(&src.aperture_mask)
        .and(phase)
        .for_each(|o, &m, &p| {
            if m != 0.0 {
                *o = Complex64::from_polar(m * src.amplitude, p);
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn src() -> (GridSpec, SourceSpec) {
        let g = GridSpec::new((16, 16, 8), 125e-6, 2e6, 1500.0).unwrap();
        let s = SourceSpec::piston(&g, 1.2e-3, 1.0).unwrap();
        (g, s)
    }

    #[test]
    fn zero_phase_is_real_aperture() {
        let (_, s) = src();
        let p = apply_phase_delays(&s, &Array2::zeros((16, 16))).unwrap();
        for (v, m) in p.iter().zip(s.aperture_mask.iter()) {
            assert_eq!(v.im, 0.0);
            assert_eq!(v.re, *m);
        }
    }

    #[test]
    fn pi_phase_negates() {
        let (_, s) = src();
        let p = apply_phase_delays(&s, &Array2::from_elem((16, 16), std::f64::consts::PI))
            .unwrap();
        for (v, m) in p.iter().zip(s.aperture_mask.iter()) {
            assert!((v + Complex64::new(*m, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn random_phase_has_unit_modulus_on_aperture() {
        let (_, s) = src();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = Array2::from_shape_fn((16, 16), |_| rng.random_range(-10.0..10.0));
        let p = apply_phase_delays(&s, &phi).unwrap();
        for (v, m) in p.iter().zip(s.aperture_mask.iter()) {
            assert!((v.norm() - m).abs() < 1e-15);
        }
        assert!(apply_phase_delays(&s, &Array2::zeros((8, 16))).is_err());
    }

    #[test]
    fn config_limits() {
        let (g, _) = src();
        let cfg = SolverConfig {
            reflection_order: 9,
            ..Default::default()
        };
        assert!(cfg.validate(&g).is_err());
        let cfg = SolverConfig {
            boundary_cells: 8,
            ..Default::default()
        };
        assert!(cfg.validate(&g).is_err());
        assert!(SolverConfig::default().validate(&g).is_ok());
    }
}
