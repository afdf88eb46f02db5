use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use super::{AcousticMedium, GridSpec, MaterialProperties};
use crate::error::{Error, Result};

/// One node of the piecewise-linear HU calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuKnot {
    pub hu: f64,
    pub sound_speed: f64,
    pub density: f64,
    /// dB/(MHz^y·cm)
    pub attenuation_coeff: f64,
}

/// Piecewise-linear map from Hounsfield units to acoustic properties.
///
/// Values at or below the first knot take the first knot's properties (water
/// by default), values above the last knot are clamped to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuCalibration {
    pub knots: Vec<HuKnot>,
    pub attenuation_power: f64,
}

impl Default for HuCalibration {
    fn default() -> Self {
        let w = MaterialProperties::WATER;
        let b = MaterialProperties::BONE;
        HuCalibration {
            knots: vec![
                HuKnot {
                    hu: 0.0,
                    sound_speed: w.sound_speed,
                    density: w.density,
                    attenuation_coeff: w.attenuation_coeff,
                },
                HuKnot {
                    hu: 1000.0,
                    sound_speed: b.sound_speed,
                    density: b.density,
                    attenuation_coeff: b.attenuation_coeff,
                },
            ],
            attenuation_power: 1.0,
        }
    }
}

impl HuCalibration {
    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(Error::InvalidCalibration(
                "at least two knots are required".into(),
            ));
        }
        for w in self.knots.windows(2) {
            if !(w[1].hu > w[0].hu) {
                return Err(Error::InvalidCalibration(format!(
                    "knot HU values must increase strictly ({} then {})",
                    w[0].hu, w[1].hu
                )));
            }
            if w[1].sound_speed < w[0].sound_speed || w[1].density < w[0].density {
                return Err(Error::InvalidCalibration(format!(
                    "sound speed and density must not decrease between HU {} and {}",
                    w[0].hu, w[1].hu
                )));
            }
        }
        for k in &self.knots {
            MaterialProperties {
                sound_speed: k.sound_speed,
                density: k.density,
                attenuation_coeff: k.attenuation_coeff,
                attenuation_power: self.attenuation_power,
            }
            .validate()
            .map_err(|e| Error::InvalidCalibration(e.to_string()))?;
        }
        Ok(())
    }

    /// Material at a given HU value.
    pub fn evaluate(&self, hu: f64) -> MaterialProperties {
        let knots = &self.knots;
        let (c, rho, att) = if hu <= knots[0].hu {
            let k = &knots[0];
            (k.sound_speed, k.density, k.attenuation_coeff)
        } else if hu >= knots[knots.len() - 1].hu {
            let k = &knots[knots.len() - 1];
            (k.sound_speed, k.density, k.attenuation_coeff)
        } else {
            let seg = knots.windows(2).find(|w| hu <= w[1].hu).unwrap();
            let t = (hu - seg[0].hu) / (seg[1].hu - seg[0].hu);
            let lerp = |a: f64, b: f64| a + t * (b - a);
            (
                lerp(seg[0].sound_speed, seg[1].sound_speed),
                lerp(seg[0].density, seg[1].density),
                lerp(seg[0].attenuation_coeff, seg[1].attenuation_coeff),
            )
        };
        MaterialProperties {
            sound_speed: c,
            density: rho,
            attenuation_coeff: att,
            attenuation_power: self.attenuation_power,
        }
    }

    /// Inverse of the sound-speed branch; `None` outside the strictly
    /// increasing part of the calibration.
    pub fn invert_sound_speed(&self, c: f64) -> Option<f64> {
        self.knots.windows(2).find_map(|w| {
            let (c0, c1) = (w[0].sound_speed, w[1].sound_speed);
            (c1 > c0 && c >= c0 && c <= c1)
                .then(|| w[0].hu + (c - c0) / (c1 - c0) * (w[1].hu - w[0].hu))
        })
    }
}

/// Map an HU volume to an acoustic medium voxel by voxel.
pub fn ingest_hu_volume(
    hu: &Array3<i16>,
    grid: GridSpec,
    calib: &HuCalibration,
) -> Result<AcousticMedium> {
    grid.validate()?;
    calib.validate()?;
    let shape = [grid.nx, grid.ny, grid.nz];
    if hu.shape() != shape {
        return Err(Error::shape(&shape, hu.shape()));
    }
    let dims = grid.shape();
    let mut c = Array3::zeros(dims);
    let mut rho = Array3::zeros(dims);
    let mut att = Array3::zeros(dims);
    Zip::from(hu)
        .and(&mut c)
        .and(&mut rho)
        .and(&mut att)
        .for_each(|&h, c, r, a| {
            let m = calib.evaluate(h as f64);
            *c = m.sound_speed;
            *r = m.density;
            *a = m.attenuation_db_cm(grid.frequency);
        });
    Ok(AcousticMedium { grid, c, rho, att })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::make_homogeneous;
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::new((6, 6, 6), 125e-6, 2e6, 1500.0).unwrap()
    }

    #[test]
    fn zero_hu_is_water() {
        let hu = Array3::<i16>::zeros((6, 6, 6));
        let m = ingest_hu_volume(&hu, grid(), &HuCalibration::default()).unwrap();
        let water = make_homogeneous(grid(), &MaterialProperties::WATER).unwrap();
        assert_eq!(m, water);
    }

    #[test]
    fn negative_hu_clamps_to_water() {
        let hu = Array3::<i16>::from_elem((6, 6, 6), -1000);
        let m = ingest_hu_volume(&hu, grid(), &HuCalibration::default()).unwrap();
        assert!(m.c.iter().all(|&c| c == 1500.0));
    }

    #[test]
    fn hu_1000_maps_to_bone_speed() {
        let mut hu = Array3::<i16>::zeros((6, 6, 6));
        hu[[1, 2, 3]] = 1000;
        let m = ingest_hu_volume(&hu, grid(), &HuCalibration::default()).unwrap();
        assert_eq!(m.c[[1, 2, 3]], 2800.0);
        assert_eq!(m.rho[[1, 2, 3]], 1850.0);
        // 8 dB/(MHz cm) at 2 MHz with y = 1
        assert!((m.att[[1, 2, 3]] - 16.0).abs() < 1e-12);
        let water = make_homogeneous(grid(), &MaterialProperties::WATER).unwrap();
        assert_eq!(m.count_differences(&water), 1);
    }

    #[test]
    fn midpoint_interpolates() {
        let m = HuCalibration::default().evaluate(500.0);
        assert!((m.sound_speed - 2150.0).abs() < 1e-12);
        assert!((m.density - 1425.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let hu = Array3::<i16>::zeros((6, 6, 5));
        assert!(matches!(
            ingest_hu_volume(&hu, grid(), &HuCalibration::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_monotone_calibration_rejected() {
        let mut cal = HuCalibration::default();
        cal.knots[1].hu = -10.0;
        assert!(matches!(cal.validate(), Err(Error::InvalidCalibration(_))));
        let mut cal = HuCalibration::default();
        cal.knots[1].sound_speed = 1400.0;
        assert!(cal.validate().is_err());
    }

    proptest! {
        #[test]
        fn inverse_calibration_recovers_hu(h in 0i16..=1000) {
            let cal = HuCalibration::default();
            let c = cal.evaluate(h as f64).sound_speed;
            let back = cal.invert_sound_speed(c).unwrap();
            prop_assert_eq!(back.round() as i16, h);
        }
    }
}
