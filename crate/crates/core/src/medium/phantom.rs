use super::{make_homogeneous, AcousticMedium, GridSpec, MaterialProperties};
use crate::error::{Error, Result};

/// Water-filled domain containing a spherical bone shell, a stand-in for a
/// CT-derived skull cap.
///
/// `shell_center` is a physical position (lateral relative to the grid axis,
/// axial from the source plane); voxels whose center lies at a distance in
/// `[inner_radius, inner_radius + thickness)` become bone. The shell may be
/// clipped by the domain, but its center must lie inside the grid box and the
/// inner radius must not exceed the farthest grid corner.
pub fn make_skull_phantom(
    grid: GridSpec,
    shell_center: [f64; 3],
    inner_radius: f64,
    thickness: f64,
    bone: &MaterialProperties,
) -> Result<AcousticMedium> {
    bone.validate()?;
    let mut medium = make_homogeneous(grid, &MaterialProperties::WATER)?;
    if !(inner_radius >= 0.0 && thickness >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shell radius and thickness must be non-negative, got {inner_radius} and {thickness}"
        )));
    }
    // Center in fractional index units.
    let ci = shell_center[0] / grid.dx + (grid.nx / 2) as f64;
    let cj = shell_center[1] / grid.dy + (grid.ny / 2) as f64;
    let ck = shell_center[2] / grid.dz;
    let inside = |c: f64, n: usize| c >= -0.5 && c <= n as f64 - 0.5;
    if !(inside(ci, grid.nx) && inside(cj, grid.ny) && inside(ck, grid.nz)) {
        return Err(Error::OutOfBounds(format!(
            "shell center {shell_center:?} lies outside the grid"
        )));
    }
    let far = |c: f64, n: usize, d: f64| c.max(n as f64 - 1.0 - c) * d;
    let farthest = (far(ci, grid.nx, grid.dx).powi(2)
        + far(cj, grid.ny, grid.dy).powi(2)
        + far(ck, grid.nz, grid.dz).powi(2))
    .sqrt();
    if inner_radius > farthest {
        return Err(Error::OutOfBounds(format!(
            "inner radius {inner_radius} m exceeds the domain (farthest voxel at {farthest} m)"
        )));
    }
    let outer = inner_radius + thickness;
    let (r0sq, r1sq) = (inner_radius * inner_radius, outer * outer);
    for i in 0..grid.nx {
        let x = (i as f64 - ci) * grid.dx;
        for j in 0..grid.ny {
            let y = (j as f64 - cj) * grid.dy;
            for k in 0..grid.nz {
                let z = (k as f64 - ck) * grid.dz;
                let d2 = x * x + y * y + z * z;
                if d2 >= r0sq && d2 < r1sq {
                    medium.set_voxel([i, j, k], bone);
                }
            }
        }
    }
    Ok(medium)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new((n, n, n), 125e-6, 2e6, 1500.0).unwrap()
    }

    fn bone_count(m: &AcousticMedium) -> usize {
        m.c.iter().filter(|&&c| c != 1500.0).count()
    }

    #[test]
    fn zero_thickness_is_water() {
        let g = grid(16);
        let m = make_skull_phantom(g, [0.0, 0.0, 1e-3], 0.5e-3, 0.0, &MaterialProperties::BONE)
            .unwrap();
        assert_eq!(bone_count(&m), 0);
    }

    #[test]
    fn enclosed_shell_matches_analytic_volume() {
        let g = grid(48);
        let (r, t) = (1.5e-3, 0.5e-3);
        let m = make_skull_phantom(g, [0.0, 0.0, 3e-3], r, t, &MaterialProperties::BONE).unwrap();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * ((r + t).powi(3) - r.powi(3))
            / g.voxel_volume();
        let n = bone_count(&m) as f64;
        assert!((n - analytic).abs() / analytic < 0.10, "{n} vs {analytic}");
    }

    #[test]
    fn radius_beyond_domain_rejected() {
        let g = grid(16);
        let res = make_skull_phantom(g, [0.0, 0.0, 1e-3], 1.0, 1e-3, &MaterialProperties::BONE);
        assert!(matches!(res, Err(Error::OutOfBounds(_))));
        let res = make_skull_phantom(g, [0.0, 0.0, 10.0], 1e-3, 1e-3, &MaterialProperties::BONE);
        assert!(matches!(res, Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn mirror_symmetric_about_center_planes() {
        let g = grid(24);
        let center = [g.x_at(12), g.y_at(12), g.z_at(10)];
        let m = make_skull_phantom(g, center, 0.8e-3, 0.3e-3, &MaterialProperties::BONE).unwrap();
        assert!(bone_count(&m) > 0);
        for i in 1..24 {
            for j in 1..24 {
                for k in 0..21 {
                    let v = m.c[[i, j, k]];
                    assert_eq!(v, m.c[[24 - i, j, k]]);
                    assert_eq!(v, m.c[[i, 24 - j, k]]);
                    assert_eq!(v, m.c[[i, j, 20 - k]]);
                }
            }
        }
    }
}
