use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// In-place 2D FFT over row-major `(nx, ny)` planes.
pub(crate) struct Fft2 {
    nx: usize,
    ny: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    transposed: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(ny);
        let row_inv = planner.plan_fft_inverse(ny);
        let col_fwd = planner.plan_fft_forward(nx);
        let col_inv = planner.plan_fft_inverse(nx);
        let scratch_len = [&row_fwd, &row_inv, &col_fwd, &col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Fft2 {
            nx,
            ny,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            transposed: vec![Complex64::default(); nx * ny],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    fn run(&mut self, data: &mut [Complex64], inverse: bool) {
        let (nx, ny) = (self.nx, self.ny);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process_with_scratch(data, &mut self.scratch);
        for i in 0..nx {
            for j in 0..ny {
                self.transposed[j * nx + i] = data[i * ny + j];
            }
        }
        col.process_with_scratch(&mut self.transposed, &mut self.scratch);
        for i in 0..nx {
            for j in 0..ny {
                data[i * ny + j] = self.transposed[j * nx + i];
            }
        }
    }

    /// Unnormalized forward transform.
    pub fn forward(&mut self, plane: &mut Array2<Complex64>) {
        let data = plane.as_slice_mut().expect("standard layout plane");
        self.run(data, false);
    }

    /// Inverse transform including the `1/(nx·ny)` normalization.
    pub fn inverse(&mut self, plane: &mut Array2<Complex64>) {
        let scale = 1.0 / (self.nx * self.ny) as f64;
        let data = plane.as_slice_mut().expect("standard layout plane");
        self.run(data, true);
        data.iter_mut().for_each(|v| *v *= scale);
    }

    /// `plane ← F⁻¹ (kernel ⊙ F plane)`, or with the conjugate kernel.
    pub fn filter(&mut self, plane: &mut Array2<Complex64>, kernel: &Array2<Complex64>, conj: bool) {
        self.forward(plane);
        if conj {
            plane.zip_mut_with(kernel, |p, k| *p *= k.conj());
        } else {
            plane.zip_mut_with(kernel, |p, k| *p *= k);
        }
        self.inverse(plane);
    }
}

/// Angular wavenumbers in FFT order for `n` samples at spacing `d`.
pub(crate) fn wavenumbers(n: usize, d: f64) -> Vec<f64> {
    let dk = 2.0 * std::f64::consts::PI / (n as f64 * d);
    (0..n)
        .map(|i| {
            let m = if i <= (n - 1) / 2 { i as f64 } else { i as f64 - n as f64 };
            m * dk
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_delta() {
        let mut f = Fft2::new(6, 10);
        let orig = Array2::from_shape_fn((6, 10), |(i, j)| {
            Complex64::new(i as f64 - 2.0 * j as f64, (i * j) as f64 * 0.1)
        });
        let mut p = orig.clone();
        f.forward(&mut p);
        f.inverse(&mut p);
        for (a, b) in p.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        let mut d = Array2::zeros((6, 10));
        d[[0, 0]] = Complex64::new(1.0, 0.0);
        f.forward(&mut d);
        assert!(d.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn wavenumber_ordering() {
        let k = wavenumbers(4, 1.0);
        let dk = std::f64::consts::PI / 2.0;
        assert_eq!(k, vec![0.0, dk, -2.0 * dk, -dk]);
        let k = wavenumbers(5, 1.0);
        assert!(k[2] > 0.0 && k[3] < 0.0);
    }
}
