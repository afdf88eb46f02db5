use ndarray::Array3;

use crate::error::{Error, Result};
use crate::medium::GridSpec;

/// Amplitude target over the grid with its active region `Ω` and the focus
/// each active voxel belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub a_target: Array3<f64>,
    /// Voxels where `a_target == 1`.
    pub omega: Vec<[usize; 3]>,
    /// Focus index of each entry of `omega`.
    pub focus_labels: Vec<usize>,
    pub focus_centers: Vec<[usize; 3]>,
}

impl TargetSpec {
    /// Union of solid spheres. Lateral center coordinates are relative to the
    /// grid axis, `z` is measured from the source plane. Each sphere contains
    /// at least the voxel nearest its center.
    pub fn from_spheres(grid: &GridSpec, centers: &[[f64; 3]], radii: &[f64]) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidParameter("target needs at least one focus".into()));
        }
        if centers.len() != radii.len() {
            return Err(Error::InvalidParameter(format!(
                "{} focus centers but {} radii",
                centers.len(),
                radii.len()
            )));
        }
        let mut idx = Vec::with_capacity(centers.len());
        for (c, &r) in centers.iter().zip(radii) {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidParameter(format!("focus radius {r} is invalid")));
            }
            let i = grid.index_of(*c).ok_or_else(|| {
                Error::OutOfBounds(format!("focus at {c:?} m lies outside the grid"))
            })?;
            idx.push(i);
        }
        let a = Array3::from_shape_fn(grid.shape(), |(i, j, k)| {
            let p = [grid.x_at(i), grid.y_at(j), grid.z_at(k)];
            let inside = centers.iter().zip(radii).zip(&idx).any(|((c, &r), ci)| {
                let d2: f64 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum();
                d2 <= r * r * (1.0 + 1e-12) || *ci == [i, j, k]
            });
            if inside {
                1.0
            } else {
                0.0
            }
        });
        Self::from_amplitude(a, idx)
    }

    /// Target from an explicit amplitude volume. Active voxels are assigned
    /// to the nearest focus center.
    pub fn from_amplitude(a_target: Array3<f64>, focus_centers: Vec<[usize; 3]>) -> Result<Self> {
        if focus_centers.is_empty() {
            return Err(Error::InvalidParameter("target needs at least one focus".into()));
        }
        if a_target.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParameter("target amplitude must lie in [0, 1]".into()));
        }
        let (nx, ny, nz) = a_target.dim();
        for c in &focus_centers {
            if c[0] >= nx || c[1] >= ny || c[2] >= nz {
                return Err(Error::OutOfBounds(format!("focus index {c:?} outside the target")));
            }
        }
        let mut omega = Vec::new();
        let mut labels = Vec::new();
        for ((i, j, k), &v) in a_target.indexed_iter() {
            if v == 1.0 {
                let d2 = |c: &[usize; 3]| {
                    let d = [i as f64 - c[0] as f64, j as f64 - c[1] as f64, k as f64 - c[2] as f64];
                    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
                };
                let label = (0..focus_centers.len())
                    .min_by(|&a, &b| d2(&focus_centers[a]).total_cmp(&d2(&focus_centers[b])))
                    .unwrap_or(0);
                omega.push([i, j, k]);
                labels.push(label);
            }
        }
        if omega.is_empty() {
            return Err(Error::InvalidParameter("target has no voxel at full amplitude".into()));
        }
        Ok(TargetSpec {
            a_target,
            omega,
            focus_labels: labels,
            focus_centers,
        })
    }

    pub fn n_foci(&self) -> usize {
        self.focus_centers.len()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.a_target.dim()
    }
}
