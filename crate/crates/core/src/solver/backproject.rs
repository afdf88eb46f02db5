use ndarray::{s, Array2, Array3};
use num_complex::Complex64;

use super::fft::Fft2;
use super::march::diffraction_kernel;
use super::{ComplexField, SolverConfig};
use crate::error::{Error, Result};
use crate::medium::GridSpec;

/// Angular-spectrum propagation of a measured plane through the reference
/// medium to each signed distance. Negative distances move toward the source.
///
/// Evanescent components are attenuated in both directions, never amplified.
/// Plane `m` of the result holds the field at `distances[m]`.
pub fn backproject(
    plane: &Array2<Complex64>,
    grid: &GridSpec,
    distances: &[f64],
) -> Result<ComplexField> {
    grid.validate()?;
    if plane.dim() != (grid.nx, grid.ny) {
        return Err(Error::shape(&[grid.nx, grid.ny], plane.shape()));
    }
    if distances.is_empty() {
        return Err(Error::InvalidParameter("no backprojection distances".into()));
    }
    let depth = grid.nz as f64 * grid.dz;
    for &d in distances {
        if !d.is_finite() || d.abs() > depth * (1.0 + 1e-12) {
            return Err(Error::OutOfBounds(format!(
                "distance {d} m exceeds the {depth} m domain"
            )));
        }
    }
    let cfg = SolverConfig::default();
    let mut fft = Fft2::new(grid.nx, grid.ny);
    let mut spectrum = plane.clone();
    fft.forward(&mut spectrum);
    let out_grid = grid.with_nz(distances.len());
    let mut values = Array3::zeros(out_grid.shape());
    for (m, &d) in distances.iter().enumerate() {
        let kernel = diffraction_kernel(grid, &cfg, d);
        let mut p = &spectrum * &kernel;
        fft.inverse(&mut p);
        values.slice_mut(s![.., .., m]).assign(&p);
    }
    ComplexField::new(values, out_grid)
}
