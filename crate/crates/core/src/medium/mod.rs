//! Voxelized heterogeneous acoustic media.
//!
//! A medium stores per-voxel sound speed, density and attenuation over a
//! regular grid. Attenuation is stored already evaluated at the grid
//! frequency (dB/cm), so the solver never needs the per-material power law.

mod embed;
mod hu;
mod phantom;

pub use embed::{
    embed_frustum, embed_lens, embed_lens_soft, occupancy_gradient, PropertyGradient,
    DEFAULT_EMBED_THRESHOLD,
};
pub use hu::{ingest_hu_volume, HuCalibration, HuKnot};
pub use phantom::make_skull_phantom;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neper per meter for one dB per centimeter.
pub const DB_PER_CM_TO_NP_PER_M: f64 = std::f64::consts::LN_10 / 20.0 * 100.0;

/// Regular simulation grid. `x`/`y` are lateral, `z` is the propagation axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub frequency: f64,
    /// Reference (background) sound speed used by the spectral propagator.
    pub c_ref: f64,
}

impl GridSpec {
    pub fn new(
        (nx, ny, nz): (usize, usize, usize),
        spacing: f64,
        frequency: f64,
        c_ref: f64,
    ) -> Result<Self> {
        let grid = GridSpec {
            nx,
            ny,
            nz,
            dx: spacing,
            dy: spacing,
            dz: spacing,
            frequency,
            c_ref,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 || self.nz < 4 {
            return Err(Error::InvalidGrid(format!(
                "all counts must be >= 4, got ({}, {}, {})",
                self.nx, self.ny, self.nz
            )));
        }
        for (name, v) in [
            ("dx", self.dx),
            ("dy", self.dy),
            ("dz", self.dz),
            ("frequency", self.frequency),
            ("c_ref", self.c_ref),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGrid(format!("{name} must be positive, got {v}")));
            }
        }
        if (self.dx - self.dy).abs() > 1e-12 * self.dx.max(self.dy) {
            return Err(Error::InvalidGrid(format!(
                "lateral spacing must be isotropic, dx = {} but dy = {}",
                self.dx, self.dy
            )));
        }
        let ppw = self.points_per_wavelength();
        if ppw < 4.0 {
            return Err(Error::InvalidGrid(format!(
                "{ppw:.2} points per wavelength along z, at least 4 required"
            )));
        }
        if ppw < 6.0 {
            log::warn!("grid resolves only {ppw:.2} points per wavelength (6 recommended)");
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn wavelength(&self) -> f64 {
        self.c_ref / self.frequency
    }

    pub fn points_per_wavelength(&self) -> f64 {
        self.wavelength() / self.dz
    }

    /// Reference wavenumber `2πf / c_ref`.
    pub fn k0(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency / self.c_ref
    }

    pub fn frequency_mhz(&self) -> f64 {
        self.frequency * 1e-6
    }

    pub fn voxel_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    /// Lateral index of the grid axis (`x = 0`).
    pub fn center_index(&self) -> (usize, usize) {
        (self.nx / 2, self.ny / 2)
    }

    /// Physical lateral coordinate of index `i` along x.
    pub fn x_at(&self, i: usize) -> f64 {
        (i as f64 - (self.nx / 2) as f64) * self.dx
    }

    pub fn y_at(&self, j: usize) -> f64 {
        (j as f64 - (self.ny / 2) as f64) * self.dy
    }

    /// Axial coordinate of plane `k`, measured from the source plane.
    pub fn z_at(&self, k: usize) -> f64 {
        k as f64 * self.dz
    }

    /// Nearest voxel to a physical position `(x, y, z)`; lateral coordinates are
    /// relative to the grid axis, `z` to the source plane.
    pub fn index_of(&self, pos: [f64; 3]) -> Option<[usize; 3]> {
        let fi = (pos[0] / self.dx).round() + (self.nx / 2) as f64;
        let fj = (pos[1] / self.dy).round() + (self.ny / 2) as f64;
        let fk = (pos[2] / self.dz).round();
        let inside = |f: f64, n: usize| f >= 0.0 && f < n as f64;
        if inside(fi, self.nx) && inside(fj, self.ny) && inside(fk, self.nz) {
            Some([fi as usize, fj as usize, fk as usize])
        } else {
            None
        }
    }

    pub fn contains(&self, idx: [usize; 3]) -> bool {
        idx[0] < self.nx && idx[1] < self.ny && idx[2] < self.nz
    }

    /// Same lateral layout with a different number of planes along z.
    pub fn with_nz(&self, nz: usize) -> Self {
        GridSpec { nz, ..*self }
    }
}

/// Bulk acoustic properties of a material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialProperties {
    /// m/s
    pub sound_speed: f64,
    /// kg/m³
    pub density: f64,
    /// dB/(MHz^y·cm)
    pub attenuation_coeff: f64,
    pub attenuation_power: f64,
}

impl MaterialProperties {
    pub const WATER: MaterialProperties = MaterialProperties {
        sound_speed: 1500.0,
        density: 1000.0,
        attenuation_coeff: 0.0,
        attenuation_power: 1.0,
    };

    /// Formlabs Clear resin.
    pub const FORM_CLEAR: MaterialProperties = MaterialProperties {
        sound_speed: 2591.0,
        density: 1178.0,
        attenuation_coeff: 2.922,
        attenuation_power: 1.044,
    };

    pub const VERO_CLEAR: MaterialProperties = MaterialProperties {
        sound_speed: 2473.0,
        density: 1181.0,
        attenuation_coeff: 3.696,
        attenuation_power: 0.9958,
    };

    pub const AGILUS30: MaterialProperties = MaterialProperties {
        sound_speed: 2035.0,
        density: 1128.0,
        attenuation_coeff: 9.109,
        attenuation_power: 1.017,
    };

    /// Cortical bone end point of the default HU calibration.
    pub const BONE: MaterialProperties = MaterialProperties {
        sound_speed: 2800.0,
        density: 1850.0,
        attenuation_coeff: 8.0,
        attenuation_power: 1.0,
    };

    pub fn new(
        sound_speed: f64,
        density: f64,
        attenuation_coeff: f64,
        attenuation_power: f64,
    ) -> Result<Self> {
        let m = MaterialProperties {
            sound_speed,
            density,
            attenuation_coeff,
            attenuation_power,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sound_speed.is_finite() && self.sound_speed > 0.0) {
            return Err(Error::InvalidMaterial(format!(
                "sound speed must be positive, got {}",
                self.sound_speed
            )));
        }
        if !(self.density.is_finite() && self.density > 0.0) {
            return Err(Error::InvalidMaterial(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        if !(self.attenuation_coeff.is_finite() && self.attenuation_coeff >= 0.0) {
            return Err(Error::InvalidMaterial(format!(
                "attenuation must be non-negative, got {}",
                self.attenuation_coeff
            )));
        }
        if !(0.5..=2.0).contains(&self.attenuation_power) {
            return Err(Error::InvalidMaterial(format!(
                "attenuation power must lie in [0.5, 2], got {}",
                self.attenuation_power
            )));
        }
        Ok(())
    }

    /// Attenuation in dB/cm at `frequency` (Hz).
    pub fn attenuation_db_cm(&self, frequency: f64) -> f64 {
        self.attenuation_coeff * (frequency * 1e-6).powf(self.attenuation_power)
    }

    pub fn impedance(&self) -> f64 {
        self.sound_speed * self.density
    }

    /// Same material with replaced sound speed and density (attenuation kept).
    pub fn with_speed_density(&self, sound_speed: f64, density: f64) -> Self {
        MaterialProperties {
            sound_speed,
            density,
            ..*self
        }
    }
}

/// Per-voxel acoustic properties over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticMedium {
    pub grid: GridSpec,
    /// Sound speed, m/s.
    pub c: Array3<f64>,
    /// Density, kg/m³.
    pub rho: Array3<f64>,
    /// Attenuation at the grid frequency, dB/cm.
    pub att: Array3<f64>,
}

impl AcousticMedium {
    pub fn from_arrays(
        grid: GridSpec,
        c: Array3<f64>,
        rho: Array3<f64>,
        att: Array3<f64>,
    ) -> Result<Self> {
        let m = AcousticMedium { grid, c, rho, att };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let shape = [self.grid.nx, self.grid.ny, self.grid.nz];
        for a in [&self.c, &self.rho, &self.att] {
            if a.shape() != shape {
                return Err(Error::shape(&shape, a.shape()));
            }
        }
        if self.c.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidMaterial(
                "sound speed must be finite and positive in every voxel".into(),
            ));
        }
        if self.rho.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidMaterial(
                "density must be finite and positive in every voxel".into(),
            ));
        }
        if self.att.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidMaterial(
                "attenuation must be finite and non-negative in every voxel".into(),
            ));
        }
        Ok(())
    }

    /// Attenuation in Np/m at voxel `(i, j, k)`.
    pub fn att_np(&self, i: usize, j: usize, k: usize) -> f64 {
        self.att[[i, j, k]] * DB_PER_CM_TO_NP_PER_M
    }

    pub fn set_voxel(&mut self, idx: [usize; 3], mat: &MaterialProperties) {
        self.c[idx] = mat.sound_speed;
        self.rho[idx] = mat.density;
        self.att[idx] = mat.attenuation_db_cm(self.grid.frequency);
    }

    /// Number of voxels whose properties differ from `other`.
    pub fn count_differences(&self, other: &AcousticMedium) -> usize {
        ndarray::Zip::from(&self.c)
            .and(&self.rho)
            .and(&self.att)
            .and(&other.c)
            .and(&other.rho)
            .and(&other.att)
            .fold(0, |n, a, b, c, d, e, f| {
                n + usize::from(a != d || b != e || c != f)
            })
    }
}

/// Fill the whole grid with one material.
pub fn make_homogeneous(grid: GridSpec, mat: &MaterialProperties) -> Result<AcousticMedium> {
    grid.validate()?;
    mat.validate()?;
    let shape = grid.shape();
    Ok(AcousticMedium {
        grid,
        c: Array3::from_elem(shape, mat.sound_speed),
        rho: Array3::from_elem(shape, mat.density),
        att: Array3::from_elem(shape, mat.attenuation_db_cm(grid.frequency)),
    })
}

/// Planar single-element source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub frequency: f64,
    pub aperture_diameter: f64,
    /// Binary aperture over `(nx, ny)`.
    pub aperture_mask: Array2<f64>,
    pub amplitude: f64,
}

impl SourceSpec {
    /// Hard-edged circular piston centered on the grid axis.
    pub fn piston(grid: &GridSpec, aperture_diameter: f64, amplitude: f64) -> Result<Self> {
        if !(aperture_diameter.is_finite() && aperture_diameter > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "aperture diameter must be positive, got {aperture_diameter}"
            )));
        }
        let r2 = (aperture_diameter / 2.0).powi(2);
        let mask = Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
            let (x, y) = (grid.x_at(i), grid.y_at(j));
            if x * x + y * y <= r2 * (1.0 + 1e-12) {
                1.0
            } else {
                0.0
            }
        });
        Ok(SourceSpec {
            frequency: grid.frequency,
            aperture_diameter,
            aperture_mask: mask,
            amplitude,
        })
    }

    /// Uniform excitation of every lateral sample (periodic plane wave).
    pub fn plane_wave(grid: &GridSpec, amplitude: f64) -> Self {
        SourceSpec {
            frequency: grid.frequency,
            aperture_diameter: f64::INFINITY,
            aperture_mask: Array2::ones((grid.nx, grid.ny)),
            amplitude,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.aperture_mask.dim() != (grid.nx, grid.ny) {
            return Err(Error::shape(
                &[grid.nx, grid.ny],
                self.aperture_mask.shape(),
            ));
        }
        if (self.frequency - grid.frequency).abs() > 1e-9 * grid.frequency {
            return Err(Error::InvalidParameter(format!(
                "source frequency {} Hz differs from grid frequency {} Hz",
                self.frequency, grid.frequency
            )));
        }
        if self.aperture_diameter.is_finite() {
            let r2 = (self.aperture_diameter / 2.0).powi(2) * (1.0 + 1e-9);
            for ((i, j), &m) in self.aperture_mask.indexed_iter() {
                let (x, y) = (grid.x_at(i), grid.y_at(j));
                if m != 0.0 && x * x + y * y > r2 {
                    return Err(Error::InvalidParameter(format!(
                        "aperture mask is nonzero outside the {} m disk at ({i}, {j})",
                        self.aperture_diameter
                    )));
                }
            }
        }
        Ok(())
    }

    /// Complex source plane `A_source`.
    pub fn plane(&self) -> Array2<Complex64> {
        self.aperture_mask
            .mapv(|m| Complex64::new(m * self.amplitude, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid8() -> GridSpec {
        GridSpec::new((8, 8, 8), 125e-6, 2e6, 1500.0).unwrap()
    }

    #[test]
    fn homogeneous_water_fill() {
        let m = make_homogeneous(grid8(), &MaterialProperties::WATER).unwrap();
        assert!(m.c.iter().all(|&c| c == 1500.0));
        assert!(m.att.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn homogeneous_form_clear_density() {
        let m = make_homogeneous(grid8(), &MaterialProperties::FORM_CLEAR).unwrap();
        assert!(m.rho.iter().all(|&r| r == 1178.0));
        let expected = 2.922 * 2f64.powf(1.044);
        assert!((m.att[[0, 0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_size_grid_rejected() {
        let g = GridSpec {
            nx: 0,
            ..grid8()
        };
        assert!(make_homogeneous(g, &MaterialProperties::WATER).is_err());
    }

    #[test]
    fn anisotropic_lateral_spacing_rejected() {
        let g = GridSpec {
            dy: 2.0 * 125e-6,
            ..grid8()
        };
        assert!(matches!(g.validate(), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn coarse_axial_sampling_rejected() {
        // 1500 / 2e6 = 750 um wavelength, 250 um step gives 3 ppw.
        assert!(GridSpec::new((8, 8, 8), 250e-6, 2e6, 1500.0).is_err());
        // 5 ppw is accepted with a warning.
        assert!(GridSpec::new((8, 8, 8), 150e-6, 2e6, 1500.0).is_ok());
    }

    #[test]
    fn invalid_materials() {
        assert!(MaterialProperties::new(-1.0, 1000.0, 0.0, 1.0).is_err());
        assert!(MaterialProperties::new(1500.0, 0.0, 0.0, 1.0).is_err());
        assert!(MaterialProperties::new(1500.0, 1000.0, -0.1, 1.0).is_err());
        assert!(MaterialProperties::new(1500.0, 1000.0, 0.1, 2.5).is_err());
    }

    #[test]
    fn piston_mask_is_centered_disk() {
        let g = GridSpec::new((32, 32, 8), 125e-6, 2e6, 1500.0).unwrap();
        let src = SourceSpec::piston(&g, 2e-3, 1.0).unwrap();
        src.validate(&g).unwrap();
        let (ci, cj) = g.center_index();
        assert_eq!(src.aperture_mask[[ci, cj]], 1.0);
        assert_eq!(src.aperture_mask[[ci + 8, cj]], 1.0);
        assert_eq!(src.aperture_mask[[ci + 9, cj]], 0.0);
        // mirror symmetric about the axis
        for i in 1..32 {
            for j in 1..32 {
                assert_eq!(src.aperture_mask[[i, j]], src.aperture_mask[[32 - i, j]]);
            }
        }
    }

    #[test]
    fn index_of_round_trips() {
        let g = grid8();
        assert_eq!(g.index_of([0.0, 0.0, 0.0]), Some([4, 4, 0]));
        assert_eq!(g.index_of([g.x_at(1), g.y_at(6), g.z_at(3)]), Some([1, 6, 3]));
        assert_eq!(g.index_of([0.0, 0.0, 1.0]), None);
    }
}
