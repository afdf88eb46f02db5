//! Differentiable lens parameterization.
//!
//! A 2D design map `θ` becomes a continuous thickness map through a bounded
//! sigmoid, is smoothed by a normalized Gaussian, and is lifted into a
//! quasi-binary occupancy volume by a second sigmoid along the thickness axis.
//! Column voxel `k` (0-based) is sampled at its center `z_k = k + 0.5` and is
//! solid where `z_k < t`, i.e. lens material sits against the source plane.

use ndarray::{Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Design parameters plus the constants of the thickness mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignField {
    pub theta: Array2<f64>,
    /// Steepness of the thickness sigmoid.
    pub alpha: f64,
    /// Thickness bounds in voxels.
    pub v_min: f64,
    pub v_max: f64,
}

impl DesignField {
    pub fn new(theta: Array2<f64>, alpha: f64, v_min: f64, v_max: f64) -> Result<Self> {
        let f = DesignField {
            theta,
            alpha,
            v_min,
            v_max,
        };
        f.validate(None)?;
        Ok(f)
    }

    /// Check bounds, optionally against the lens depth `n_v`.
    pub fn validate(&self, depth: Option<usize>) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.v_min >= 1.0 && self.v_min < self.v_max) {
            return Err(Error::InvalidParameter(format!(
                "thickness bounds must satisfy 1 <= v_min < v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        if let Some(nv) = depth {
            if self.v_max > nv as f64 {
                return Err(Error::InvalidParameter(format!(
                    "v_max = {} exceeds the lens depth of {nv} voxels",
                    self.v_max
                )));
            }
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical("design map contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> (usize, usize) {
        self.theta.dim()
    }
}

/// Gaussian smoothing of the thickness map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    pub kernel_size: usize,
    /// Standard deviation in grid units.
    pub sigma: f64,
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing {
            kernel_size: 9,
            sigma: 1.5,
        }
    }
}

/// Geometric sharpness schedule, `β_n = β_start·(β_end/β_start)^(n/N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule {
            beta_start: 1.0,
            beta_end: 20.0,
        }
    }
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_start > 0.0 && self.beta_end > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta schedule endpoints must be positive, got {} -> {}",
                self.beta_start, self.beta_end
            )));
        }
        Ok(())
    }

    /// Sharpness at iteration `n` of a run whose last iterate is `last`.
    pub fn beta_at(&self, n: usize, last: usize) -> f64 {
        if last == 0 {
            return self.beta_end;
        }
        let f = (n.min(last) as f64) / last as f64;
        self.beta_start * (self.beta_end / self.beta_start).powf(f)
    }
}

/// Occupancy volume of a lens over `(nx, ny, n_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LensVolume {
    pub occupancy: Array3<f64>,
    /// Column thickness in voxels (the smoothed thickness for DHLA output).
    pub thickness_map: Array2<f64>,
    pub v_min: f64,
    pub v_max: f64,
}

impl LensVolume {
    pub fn depth(&self) -> usize {
        self.occupancy.dim().2
    }

    /// Hard voxelization of a thickness map (voxels), rounding half up.
    pub fn from_thickness(thickness: &Array2<f64>, depth: usize, v_min: f64, v_max: f64) -> Self {
        let (nx, ny) = thickness.dim();
        let occupancy = Array3::from_shape_fn((nx, ny, depth), |(i, j, k)| {
            if k < solid_count(thickness[[i, j]], depth) {
                1.0
            } else {
                0.0
            }
        });
        LensVolume {
            occupancy,
            thickness_map: thickness.clone(),
            v_min,
            v_max,
        }
    }

    /// Lens from an occupancy volume; the thickness map is the column sum.
    pub fn from_occupancy(occupancy: Array3<f64>) -> Self {
        let thickness_map = occupancy.sum_axis(Axis(2));
        let depth = occupancy.dim().2 as f64;
        LensVolume {
            occupancy,
            thickness_map,
            v_min: 0.0,
            v_max: depth,
        }
    }

    pub fn is_binary(&self) -> bool {
        self.occupancy.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

fn solid_count(t: f64, depth: usize) -> usize {
    let n = (t + 0.5).floor();
    if n <= 0.0 {
        0
    } else {
        (n as usize).min(depth)
    }
}

/// Bounded thickness map `t = σ(α·θ)·(v_max − v_min) + v_min`.
pub fn map_thickness(field: &DesignField) -> Array2<f64> {
    let span = field.v_max - field.v_min;
    field
        .theta
        .mapv(|th| sigmoid(field.alpha * th) * span + field.v_min)
}

/// Normalized `size × size` Gaussian kernel.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Array2<f64>> {
    if size % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "kernel size must be odd, got {size}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "kernel sigma must be positive, got {sigma}"
        )));
    }
    let r = (size / 2) as f64;
    let mut k = Array2::from_shape_fn((size, size), |(a, b)| {
        let (x, y) = (a as f64 - r, b as f64 - r);
        (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
    });
    let total = k.sum();
    k /= total;
    Ok(k)
}

/// Half-sample symmetric reflection of an index into `0..n`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

pub(crate) fn convolve_reflect(input: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (nx, ny) = input.dim();
    let r = (kernel.dim().0 / 2) as isize;
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        let mut acc = 0.0;
        for ((a, b), &w) in kernel.indexed_iter() {
            let ii = reflect(i as isize + a as isize - r, nx);
            let jj = reflect(j as isize + b as isize - r, ny);
            acc += w * input[[ii, jj]];
        }
        acc
    })
}

/// Adjoint of [`convolve_reflect`].
pub(crate) fn convolve_reflect_transpose(grad: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (nx, ny) = grad.dim();
    let r = (kernel.dim().0 / 2) as isize;
    let mut out = Array2::zeros((nx, ny));
    for ((i, j), &g) in grad.indexed_iter() {
        if g == 0.0 {
            continue;
        }
        for ((a, b), &w) in kernel.indexed_iter() {
            let ii = reflect(i as isize + a as isize - r, nx);
            let jj = reflect(j as isize + b as isize - r, ny);
            out[[ii, jj]] += w * g;
        }
    }
    out
}

/// Gaussian smoothing with reflective boundaries.
pub fn smooth_thickness(t: &Array2<f64>, kernel_size: usize, sigma: f64) -> Result<Array2<f64>> {
    let kernel = gaussian_kernel(kernel_size, sigma)?;
    Ok(convolve_reflect(t, &kernel))
}

/// Soft voxelization `occ(i,j,k) = σ(β·(t(i,j) − (k + 0.5)))`.
pub fn voxelize(t_smooth: &Array2<f64>, beta: f64, depth: usize) -> Result<LensVolume> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let (nx, ny) = t_smooth.dim();
    let occupancy = Array3::from_shape_fn((nx, ny, depth), |(i, j, k)| {
        sigmoid(beta * (t_smooth[[i, j]] - (k as f64 + 0.5)))
    });
    Ok(LensVolume {
        occupancy,
        thickness_map: t_smooth.clone(),
        v_min: 0.0,
        v_max: depth as f64,
    })
}

/// Full mapping from design map to quasi-binary lens volume.
pub fn dhla_forward(
    field: &DesignField,
    beta: f64,
    smoothing: &Smoothing,
    depth: usize,
) -> Result<LensVolume> {
    field.validate(Some(depth))?;
    let t = map_thickness(field);
    let ts = smooth_thickness(&t, smoothing.kernel_size, smoothing.sigma)?;
    let mut lens = voxelize(&ts, beta, depth)?;
    lens.v_min = field.v_min;
    lens.v_max = field.v_max;
    Ok(lens)
}

/// Reverse-mode gradient of a scalar loss through [`dhla_forward`], given
/// `∂L/∂occupancy`. Recomputes the forward intermediates from `field`.
pub fn dhla_backward(
    field: &DesignField,
    beta: f64,
    smoothing: &Smoothing,
    upstream: &Array3<f64>,
) -> Result<Array2<f64>> {
    let (nx, ny) = field.dim();
    let depth = upstream.dim().2;
    if upstream.dim() != (nx, ny, depth) {
        return Err(Error::shape(&[nx, ny, depth], upstream.shape()));
    }
    field.validate(Some(depth))?;
    let kernel = gaussian_kernel(smoothing.kernel_size, smoothing.sigma)?;
    let t = map_thickness(field);
    let ts = convolve_reflect(&t, &kernel);

    let mut g_ts = Array2::zeros((nx, ny));
    Zip::indexed(&mut g_ts).for_each(|(i, j), g| {
        let tc = ts[[i, j]];
        let mut acc = 0.0;
        for k in 0..depth {
            let u = upstream[[i, j, k]];
            if u != 0.0 {
                let s = sigmoid(beta * (tc - (k as f64 + 0.5)));
                acc += u * beta * s * (1.0 - s);
            }
        }
        *g = acc;
    });
    let g_t = convolve_reflect_transpose(&g_ts, &kernel);
    let span = field.v_max - field.v_min;
    let mut g_theta = g_t;
    Zip::from(&mut g_theta)
        .and(&field.theta)
        .for_each(|g, &th| {
            let s = sigmoid(field.alpha * th);
            *g *= span * field.alpha * s * (1.0 - s);
        });
    Ok(g_theta)
}

/// Hard threshold of a lens: `round(thickness)` solid voxels per column,
/// rounding half up.
pub fn binarize(lens: &LensVolume) -> LensVolume {
    LensVolume::from_thickness(&lens.thickness_map, lens.depth(), lens.v_min, lens.v_max)
}

/// Emulate printer resolution: Gaussian low-pass of the thickness map with
/// `σ = cutoff / 2` followed by re-binarization.
pub fn fabrication_filter(lens: &LensVolume, cutoff: f64, dx: f64) -> Result<LensVolume> {
    if !(cutoff.is_finite() && dx > 0.0 && cutoff >= dx * (1.0 - 1e-9)) {
        return Err(Error::InvalidParameter(format!(
            "fabrication cutoff {cutoff} m is below the grid spacing {dx} m"
        )));
    }
    let sigma = cutoff / (2.0 * dx);
    let radius = (3.0 * sigma).ceil() as usize;
    let kernel = gaussian_kernel(2 * radius + 1, sigma)?;
    let depth = lens.depth() as f64;
    let filtered = convolve_reflect(&lens.thickness_map, &kernel).mapv(|t| t.clamp(0.0, depth));
    Ok(LensVolume::from_thickness(
        &filtered,
        lens.depth(),
        lens.v_min,
        lens.v_max,
    ))
}
