use ndarray::{s, Array3, Zip};

use super::{AcousticMedium, MaterialProperties};
use crate::dhla::LensVolume;
use crate::error::{Error, Result};

/// Occupancy above which a voxel is considered lens material.
pub const DEFAULT_EMBED_THRESHOLD: f64 = 0.9;

fn check_lens_fits(base: &AcousticMedium, lens: &LensVolume, z_offset: usize) -> Result<()> {
    let (nx, ny, nv) = lens.occupancy.dim();
    let g = &base.grid;
    if (nx, ny) != (g.nx, g.ny) {
        return Err(Error::shape(&[g.nx, g.ny], &[nx, ny]));
    }
    if z_offset + nv > g.nz {
        return Err(Error::OutOfBounds(format!(
            "lens spans planes {z_offset}..{} but the grid has {} planes",
            z_offset + nv,
            g.nz
        )));
    }
    Ok(())
}

/// Replace every voxel with occupancy above `threshold` by the lens material.
/// Lens voxel `k` lands on medium plane `z_offset + k`.
pub fn embed_lens(
    base: &AcousticMedium,
    lens: &LensVolume,
    mat: &MaterialProperties,
    z_offset: usize,
    threshold: f64,
) -> Result<AcousticMedium> {
    mat.validate()?;
    check_lens_fits(base, lens, z_offset)?;
    let mut out = base.clone();
    let nv = lens.depth();
    let att = mat.attenuation_db_cm(base.grid.frequency);
    let region = s![.., .., z_offset..z_offset + nv];
    Zip::from(&lens.occupancy)
        .and(out.c.slice_mut(region))
        .and(out.rho.slice_mut(region))
        .and(out.att.slice_mut(region))
        .for_each(|&v, c, r, a| {
            if v > threshold {
                *c = mat.sound_speed;
                *r = mat.density;
                *a = att;
            }
        });
    Ok(out)
}

/// Differentiable embedding: properties interpolate linearly between the
/// background and the lens material with the occupancy.
pub fn embed_lens_soft(
    base: &AcousticMedium,
    lens: &LensVolume,
    mat: &MaterialProperties,
    z_offset: usize,
) -> Result<AcousticMedium> {
    mat.validate()?;
    check_lens_fits(base, lens, z_offset)?;
    let mut out = base.clone();
    let nv = lens.depth();
    let att = mat.attenuation_db_cm(base.grid.frequency);
    let region = s![.., .., z_offset..z_offset + nv];
    Zip::from(&lens.occupancy)
        .and(out.c.slice_mut(region))
        .and(out.rho.slice_mut(region))
        .and(out.att.slice_mut(region))
        .for_each(|&v, c, r, a| {
            *c += v * (mat.sound_speed - *c);
            *r += v * (mat.density - *r);
            *a += v * (att - *a);
        });
    Ok(out)
}

/// Gradient of a scalar loss with respect to every voxel property.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyGradient {
    pub c: Array3<f64>,
    pub rho: Array3<f64>,
    pub att: Array3<f64>,
}

impl PropertyGradient {
    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        PropertyGradient {
            c: Array3::zeros(shape),
            rho: Array3::zeros(shape),
            att: Array3::zeros(shape),
        }
    }
}

/// Chain a property gradient through [`embed_lens_soft`] to the lens
/// occupancy. `base` must be the medium the lens was embedded into.
pub fn occupancy_gradient(
    grad: &PropertyGradient,
    base: &AcousticMedium,
    mat: &MaterialProperties,
    z_offset: usize,
    depth: usize,
) -> Result<Array3<f64>> {
    let g = &base.grid;
    if z_offset + depth > g.nz {
        return Err(Error::OutOfBounds(format!(
            "lens region {z_offset}..{} exceeds {} planes",
            z_offset + depth,
            g.nz
        )));
    }
    if grad.c.dim() != g.shape() {
        return Err(Error::shape(&[g.nx, g.ny, g.nz], grad.c.shape()));
    }
    let att = mat.attenuation_db_cm(g.frequency);
    let region = s![.., .., z_offset..z_offset + depth];
    let mut out = Array3::zeros((g.nx, g.ny, depth));
    Zip::from(&mut out)
        .and(grad.c.slice(region))
        .and(base.c.slice(region))
        .for_each(|o, &gc, &c| *o = gc * (mat.sound_speed - c));
    Zip::from(&mut out)
        .and(grad.rho.slice(region))
        .and(base.rho.slice(region))
        .for_each(|o, &gr, &r| *o += gr * (mat.density - r));
    Zip::from(&mut out)
        .and(grad.att.slice(region))
        .and(base.att.slice(region))
        .for_each(|o, &ga, &a| *o += ga * (att - a));
    Ok(out)
}

/// Fill a conical frustum around the grid axis with `mat`, spanning planes
/// `z_start..z_end` with radius varying linearly from `radius_start` to
/// `radius_end`. With `wall = Some(w)` only a shell of thickness `w` inside
/// the frustum surface is filled.
pub fn embed_frustum(
    base: &AcousticMedium,
    z_start: usize,
    z_end: usize,
    radius_start: f64,
    radius_end: f64,
    wall: Option<f64>,
    mat: &MaterialProperties,
) -> Result<AcousticMedium> {
    mat.validate()?;
    let g = base.grid;
    if z_start >= z_end || z_end > g.nz {
        return Err(Error::OutOfBounds(format!(
            "frustum planes {z_start}..{z_end} invalid for {} planes",
            g.nz
        )));
    }
    let mut out = base.clone();
    let span = (z_end - z_start).max(2) as f64 - 1.0;
    for k in z_start..z_end {
        let t = (k - z_start) as f64 / span;
        let outer = radius_start + t * (radius_end - radius_start);
        let inner = wall.map_or(-1.0, |w| outer - w);
        for i in 0..g.nx {
            for j in 0..g.ny {
                let r = g.x_at(i).hypot(g.y_at(j));
                if r <= outer && r > inner {
                    out.set_voxel([i, j, k], mat);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{make_homogeneous, GridSpec};
    use ndarray::Array2;

    fn setup() -> (AcousticMedium, GridSpec) {
        let g = GridSpec::new((6, 5, 10), 125e-6, 2e6, 1500.0).unwrap();
        (make_homogeneous(g, &MaterialProperties::WATER).unwrap(), g)
    }

    fn lens_from(occ: Array3<f64>) -> LensVolume {
        let thickness = occ.sum_axis(ndarray::Axis(2));
        LensVolume {
            occupancy: occ,
            thickness_map: thickness,
            v_min: 0.0,
            v_max: 4.0,
        }
    }

    #[test]
    fn empty_lens_leaves_base() {
        let (base, _) = setup();
        let lens = lens_from(Array3::zeros((6, 5, 4)));
        let out = embed_lens(&base, &lens, &MaterialProperties::FORM_CLEAR, 2, 0.9).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn full_slab_replaces_every_lens_voxel() {
        let (base, _) = setup();
        let lens = lens_from(Array3::ones((6, 5, 3)));
        let out = embed_lens(&base, &lens, &MaterialProperties::FORM_CLEAR, 1, 0.9).unwrap();
        assert_eq!(out.count_differences(&base), 6 * 5 * 3);
        assert!(out.c.slice(s![.., .., 1..4]).iter().all(|&c| c == 2591.0));
    }

    #[test]
    fn threshold_selects_columns() {
        let (base, _) = setup();
        let mut occ = Array3::zeros((6, 5, 2));
        occ[[1, 1, 0]] = 0.95;
        occ[[2, 2, 0]] = 0.85;
        let out = embed_lens(&base, &lens_from(occ), &MaterialProperties::FORM_CLEAR, 0, 0.9)
            .unwrap();
        assert_eq!(out.c[[1, 1, 0]], 2591.0);
        assert_eq!(out.c[[2, 2, 0]], 1500.0);
        assert_eq!(out.count_differences(&base), 1);
    }

    #[test]
    fn embedding_is_idempotent() {
        let (base, _) = setup();
        let occ = Array3::from_shape_fn((6, 5, 4), |(i, j, k)| {
            if k < (i + j) % 4 { 1.0 } else { 0.0 }
        });
        let lens = lens_from(occ);
        let once = embed_lens(&base, &lens, &MaterialProperties::FORM_CLEAR, 3, 0.9).unwrap();
        let twice = embed_lens(&once, &lens, &MaterialProperties::FORM_CLEAR, 3, 0.9).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn lens_out_of_axial_bounds() {
        let (base, _) = setup();
        let lens = lens_from(Array3::ones((6, 5, 4)));
        assert!(matches!(
            embed_lens(&base, &lens, &MaterialProperties::FORM_CLEAR, 7, 0.9),
            Err(Error::OutOfBounds(_))
        ));
        let lens = LensVolume {
            occupancy: Array3::ones((5, 5, 2)),
            thickness_map: Array2::zeros((5, 5)),
            v_min: 0.0,
            v_max: 2.0,
        };
        assert!(embed_lens(&base, &lens, &MaterialProperties::FORM_CLEAR, 0, 0.9).is_err());
    }

    #[test]
    fn soft_embedding_interpolates_and_chains() {
        let (base, _) = setup();
        let mut occ = Array3::zeros((6, 5, 2));
        occ[[0, 0, 1]] = 0.25;
        let mat = MaterialProperties::FORM_CLEAR;
        let out = embed_lens_soft(&base, &lens_from(occ), &mat, 4).unwrap();
        assert!((out.c[[0, 0, 5]] - (1500.0 + 0.25 * 1091.0)).abs() < 1e-9);
        let mut grad = PropertyGradient::zeros((6, 5, 10));
        grad.c[[0, 0, 5]] = 2.0;
        grad.rho[[0, 0, 5]] = 1.0;
        let g = occupancy_gradient(&grad, &base, &mat, 4, 2).unwrap();
        assert!((g[[0, 0, 1]] - (2.0 * 1091.0 + 178.0)).abs() < 1e-9);
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn frustum_fill_and_shell() {
        let g = GridSpec::new((16, 16, 8), 125e-6, 2e6, 1500.0).unwrap();
        let base = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
        let solid = embed_frustum(&base, 1, 5, 0.8e-3, 0.4e-3, None, &MaterialProperties::FORM_CLEAR)
            .unwrap();
        assert_eq!(solid.c[[8, 8, 1]], 2591.0);
        let shell = embed_frustum(
            &base,
            1,
            5,
            0.8e-3,
            0.4e-3,
            Some(0.2e-3),
            &MaterialProperties::FORM_CLEAR,
        )
        .unwrap();
        assert_eq!(shell.c[[8, 8, 1]], 1500.0);
        assert!(shell.count_differences(&base) < solid.count_differences(&base));
        assert!(shell.count_differences(&base) > 0);
    }
}
