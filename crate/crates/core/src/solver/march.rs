use ndarray::{s, Array2, Array3, Zip};
use num_complex::Complex64;

use super::fft::{wavenumbers, Fft2};
use super::{ComplexField, EvanescentMode, SolverConfig};
use crate::error::{Error, Result};
use crate::medium::{AcousticMedium, GridSpec, PropertyGradient, DB_PER_CM_TO_NP_PER_M};

type Plane = Array2<Complex64>;

/// Per-step amplitude factor at the inner edge of the lateral absorber.
const TAPER_STRENGTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn of_order(m: usize) -> Self {
        if m % 2 == 0 {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }
}

/// Everything the marching needs that depends only on the medium.
#[derive(Debug, Clone)]
pub(crate) struct Coefficients {
    pub grid: GridSpec,
    pub cfg: SolverConfig,
    pub kernel: Plane,
    /// Half-step screen per voxel plane.
    pub half_screen: Vec<Plane>,
    /// Pressure transmission at plane k for forward/backward travel.
    pub t_fwd: Vec<Array2<f64>>,
    pub t_bwd: Vec<Array2<f64>>,
    /// Whether any lateral position of plane k sees an impedance change.
    pub interface: Vec<bool>,
    pub impedance: Vec<Array2<f64>>,
    pub c: Array3<f64>,
    pub rho: Array3<f64>,
}

pub(crate) fn diffraction_kernel(grid: &GridSpec, cfg: &SolverConfig, distance: f64) -> Plane {
    let kx = wavenumbers(grid.nx, grid.dx);
    let ky = wavenumbers(grid.ny, grid.dy);
    let k0 = grid.k0();
    let k0sq = k0 * k0;
    let cut2 = (cfg.angular_cutoff * k0).powi(2);
    Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
        let kp2 = kx[i] * kx[i] + ky[j] * ky[j];
        if kp2 <= k0sq {
            if kp2 > cut2 * (1.0 + 1e-12) {
                Complex64::default()
            } else {
                let kz = (k0sq - kp2).sqrt();
                Complex64::from_polar(1.0, kz * distance)
            }
        } else {
            match cfg.evanescent_mode {
                EvanescentMode::Decay => {
                    Complex64::new((-(kp2 - k0sq).sqrt() * distance.abs()).exp(), 0.0)
                }
                EvanescentMode::Truncate => Complex64::default(),
            }
        }
    })
}

fn boundary_taper(grid: &GridSpec, cells: usize) -> Array2<f64> {
    let profile = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let d = i.min(n - 1 - i);
                if d < cells {
                    let f = (cells - d) as f64 / cells as f64;
                    (-TAPER_STRENGTH * f * f).exp()
                } else {
                    1.0
                }
            })
            .collect()
    };
    let (fx, fy) = (profile(grid.nx), profile(grid.ny));
    Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| fx[i] * fy[j])
}

impl Coefficients {
    pub fn new(medium: &AcousticMedium, cfg: &SolverConfig) -> Result<Self> {
        medium.validate().map_err(|e| match e {
            Error::InvalidMaterial(m) => Error::Numerical(m),
            other => other,
        })?;
        let grid = medium.grid;
        cfg.validate(&grid)?;
        let (nx, ny, nz) = grid.shape();
        let k0 = grid.k0();
        let dz = grid.dz;
        let taper = boundary_taper(&grid, cfg.boundary_cells).mapv(f64::sqrt);
        let mut half_screen = Vec::with_capacity(nz);
        let mut impedance = Vec::with_capacity(nz);
        for v in 0..nz {
            let c = medium.c.slice(s![.., .., v]);
            let a = medium.att.slice(s![.., .., v]);
            let mut h = Array2::zeros((nx, ny));
            Zip::from(&mut h).and(&c).and(&a).and(&taper).for_each(|h, &c, &a, &b| {
                let phase = 0.5 * dz * k0 * (grid.c_ref / c - 1.0);
                let decay = 0.5 * dz * a * DB_PER_CM_TO_NP_PER_M;
                *h = Complex64::from_polar(b * (-decay).exp(), phase);
            });
            half_screen.push(h);
            impedance.push(&c * &medium.rho.slice(s![.., .., v]));
        }
        let mut t_fwd = Vec::with_capacity(nz);
        let mut t_bwd = Vec::with_capacity(nz);
        let mut interface = Vec::with_capacity(nz);
        for k in 0..nz {
            if k + 1 == nz {
                t_fwd.push(Array2::ones((nx, ny)));
                t_bwd.push(Array2::ones((nx, ny)));
                interface.push(false);
                continue;
            }
            let (z0, z1) = (&impedance[k], &impedance[k + 1]);
            let tf = Zip::from(z0).and(z1).map_collect(|&a, &b| 2.0 * b / (a + b));
            let tb = Zip::from(z0).and(z1).map_collect(|&a, &b| 2.0 * a / (a + b));
            interface.push(Zip::from(z0).and(z1).any(|a, b| a != b));
            t_fwd.push(tf);
            t_bwd.push(tb);
        }
        Ok(Coefficients {
            grid,
            cfg: *cfg,
            kernel: diffraction_kernel(&grid, cfg, dz),
            half_screen,
            t_fwd,
            t_bwd,
            interface,
            impedance,
            c: medium.c.clone(),
            rho: medium.rho.clone(),
        })
    }

    fn trans(&self, dir: Direction, k: usize) -> &Array2<f64> {
        match dir {
            Direction::Forward => &self.t_fwd[k],
            Direction::Backward => &self.t_bwd[k],
        }
    }

    fn plane_order(&self, dir: Direction, start: usize) -> Vec<usize> {
        match dir {
            Direction::Forward => (start..self.grid.nz).collect(),
            Direction::Backward => (0..=start).rev().collect(),
        }
    }

    /// Voxel plane crossed when leaving plane `k` in direction `dir`.
    fn voxel_after(dir: Direction, k: usize) -> usize {
        match dir {
            Direction::Forward => k + 1,
            Direction::Backward => k,
        }
    }
}

/// Snapshots of one directional sweep, indexed by plane.
#[derive(Debug, Clone)]
struct SweepRecord {
    dir: Direction,
    order: Vec<usize>,
    /// Arriving wave at each plane.
    x: Vec<Option<Plane>>,
    /// Wave leaving each plane (transmitted arrival plus injection).
    u: Vec<Option<Plane>>,
    /// Diffracted wave arriving at each plane, before its last half screen.
    q: Vec<Option<Plane>>,
}

/// Forward-pass state kept for the adjoint sweep: one record per reflection
/// order plus the medium coefficients they were computed with.
#[derive(Debug, Clone)]
pub struct SliceCache {
    coeffs: Coefficients,
    sweeps: Vec<SweepRecord>,
    fingerprint: u64,
}

impl SliceCache {
    pub fn grid(&self) -> &GridSpec {
        &self.coeffs.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.coeffs.cfg
    }

    /// Number of reflection orders that were marched.
    pub fn orders(&self) -> usize {
        self.sweeps.len()
    }

    /// Error unless this cache was produced from `medium`.
    pub fn check_medium(&self, medium: &AcousticMedium) -> Result<()> {
        if fingerprint(medium) != self.fingerprint {
            return Err(Error::StaleCache(
                "medium changed since the forward solve".into(),
            ));
        }
        Ok(())
    }
}

fn fingerprint(medium: &AcousticMedium) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    medium.grid.shape().hash(&mut h);
    for a in [&medium.c, &medium.rho, &medium.att] {
        for v in a.iter() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn scale_real(t: &Array2<f64>, x: &Plane) -> Plane {
    Zip::from(t).and(x).map_collect(|&t, &x| x * t)
}

fn mul(a: &Plane, b: &Plane) -> Plane {
    Zip::from(a).and(b).map_collect(|&a, &b| a * b)
}

fn mul_conj(a: &Plane, b: &Plane) -> Plane {
    Zip::from(a).and(b).map_collect(|&a, &b| a.conj() * b)
}

/// March one directional sweep. Adds the sweep's pressure to `p` and returns
/// the reflected waves it spawns at each plane.
fn run_sweep(
    co: &Coefficients,
    fft: &mut Fft2,
    dir: Direction,
    start_plane: usize,
    start: Option<Plane>,
    inj: &[Option<Plane>],
    p: &mut Array3<Complex64>,
    keep: bool,
) -> (Option<SweepRecord>, Vec<Option<Plane>>) {
    let nz = co.grid.nz;
    let order = co.plane_order(dir, start_plane);
    let mut rec = SweepRecord {
        dir,
        order: order.clone(),
        x: vec![None; nz],
        u: vec![None; nz],
        q: vec![None; nz],
    };
    let mut refl: Vec<Option<Plane>> = vec![None; nz];
    let mut x_cur = start;
    let mut q_cur: Option<Plane> = None;
    for (idx, &k) in order.iter().enumerate() {
        let t = co.trans(dir, k);
        if let Some(x) = &x_cur {
            let tx = scale_real(t, x);
            let mut pk = p.slice_mut(s![.., .., k]);
            pk += &tx;
            if keep || co.interface[k] {
                refl[k] = Some(Zip::from(t).and(x).map_collect(|&t, &x| x * (t - 1.0)));
            }
        }
        let u = match (&x_cur, &inj[k]) {
            (None, None) => None,
            (Some(x), None) => Some(scale_real(t, x)),
            (None, Some(i)) => Some(i.clone()),
            (Some(x), Some(i)) => Some(Zip::from(t).and(x).and(i).map_collect(|&t, &x, &i| x * t + i)),
        };
        let last = idx + 1 == order.len();
        let next = if last {
            None
        } else {
            u.as_ref().map(|u| {
                let h = &co.half_screen[Coefficients::voxel_after(dir, k)];
                let mut y = mul(h, u);
                fft.filter(&mut y, &co.kernel, false);
                let xn = mul(h, &y);
                (y, xn)
            })
        };
        if keep {
            rec.x[k] = x_cur.take();
            rec.u[k] = u;
            rec.q[k] = q_cur.take();
        }
        match next {
            Some((q, xn)) => {
                q_cur = Some(q);
                x_cur = Some(xn);
            }
            None => {
                q_cur = None;
                x_cur = None;
            }
        }
    }
    (keep.then_some(rec), refl)
}

/// Accumulators for the adjoint sweeps.
struct GradAccum {
    /// `Σ conj(adjoint)·input·h` per voxel plane.
    screen: Vec<Plane>,
    /// `∂L/∂T` per plane for forward and backward travel.
    t_fwd: Vec<Array2<f64>>,
    t_bwd: Vec<Array2<f64>>,
}

fn adjoint_sweep(
    co: &Coefficients,
    fft: &mut Fft2,
    rec: &SweepRecord,
    g_p: &Array3<Complex64>,
    g_refl: &[Option<Plane>],
    acc: &mut GradAccum,
) -> (Vec<Option<Plane>>, Option<Plane>) {
    let nz = co.grid.nz;
    let dir = rec.dir;
    let mut g_inj: Vec<Option<Plane>> = vec![None; nz];
    let mut lam_next: Option<Plane> = None;
    let n = rec.order.len();
    for idx in (0..n).rev() {
        let k = rec.order[idx];
        let mut gu: Option<Plane> = None;
        if idx + 1 < n {
            let kn = rec.order[idx + 1];
            if let (Some(lam), Some(u), Some(q)) = (&lam_next, &rec.u[k], &rec.q[kn]) {
                let v = Coefficients::voxel_after(dir, k);
                let h = &co.half_screen[v];
                let mut w = mul_conj(lam, q);
                let mut gy = mul_conj(h, lam);
                fft.filter(&mut gy, &co.kernel, true);
                Zip::from(&mut w).and(&gy).and(u).and(h).for_each(|w, &gy, &u, &h| {
                    *w = (*w + gy.conj() * u) * h;
                });
                acc.screen[v] += &w;
                gu = Some(mul_conj(h, &gy));
            }
        }
        let lam_k = rec.x[k].as_ref().map(|x| {
            let t = co.trans(dir, k);
            let gpk = g_p.slice(s![.., .., k]);
            let mut lam = Array2::zeros(t.dim());
            let gt = match dir {
                Direction::Forward => &mut acc.t_fwd[k],
                Direction::Backward => &mut acc.t_bwd[k],
            };
            Zip::from(&mut lam)
                .and(&mut *gt)
                .and(t)
                .and(x)
                .and(&gpk)
                .for_each(|l, gt, &t, &x, &gp| {
                    *l = gp * t;
                    *gt += (gp.conj() * x).re;
                });
            if let Some(gu) = &gu {
                Zip::from(&mut lam)
                    .and(&mut *gt)
                    .and(t)
                    .and(x)
                    .and(gu)
                    .for_each(|l, gt, &t, &x, &g| {
                        *l += g * t;
                        *gt += (g.conj() * x).re;
                    });
            }
            if let Some(gr) = &g_refl[k] {
                Zip::from(&mut lam)
                    .and(&mut *gt)
                    .and(t)
                    .and(x)
                    .and(gr)
                    .for_each(|l, gt, &t, &x, &g| {
                        *l += g * (t - 1.0);
                        *gt += (g.conj() * x).re;
                    });
            }
            lam
        });
        g_inj[k] = gu;
        lam_next = lam_k;
    }
    (g_inj, lam_next)
}

fn check_source(grid: &GridSpec, source: &Plane) -> Result<()> {
    if source.dim() != (grid.nx, grid.ny) {
        return Err(Error::shape(&[grid.nx, grid.ny], source.shape()));
    }
    if source.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Numerical("source plane contains non-finite values".into()));
    }
    Ok(())
}

fn solve(
    co: &Coefficients,
    source: &Plane,
    keep: bool,
) -> Result<(ComplexField, Vec<SweepRecord>)> {
    check_source(&co.grid, source)?;
    let grid = co.grid;
    let mut fft = Fft2::new(grid.nx, grid.ny);
    let mut p = Array3::zeros(grid.shape());
    let mut records = Vec::new();
    let mut inj: Vec<Option<Plane>> = vec![None; grid.nz];
    for m in 0..=co.cfg.reflection_order {
        let dir = Direction::of_order(m);
        let (start_plane, start) = match dir {
            Direction::Forward => (0, (m == 0).then(|| source.to_owned())),
            Direction::Backward => (grid.nz - 1, None),
        };
        if m > 0 && inj.iter().all(Option::is_none) {
            break;
        }
        let (rec, refl) = run_sweep(co, &mut fft, dir, start_plane, start, &inj, &mut p, keep);
        records.extend(rec);
        inj = refl;
    }
    if p.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Numerical("propagated field is not finite".into()));
    }
    Ok((ComplexField { values: p, grid }, records))
}

/// Propagate a source plane through `medium`, keeping the slice snapshots
/// needed by [`propagate_adjoint`].
pub fn propagate(
    source: &Plane,
    medium: &AcousticMedium,
    cfg: &SolverConfig,
) -> Result<(ComplexField, SliceCache)> {
    let coeffs = Coefficients::new(medium, cfg)?;
    let (field, sweeps) = solve(&coeffs, source, true)?;
    Ok((
        field,
        SliceCache {
            coeffs,
            sweeps,
            fingerprint: fingerprint(medium),
        },
    ))
}

/// Forward solve only, without snapshots.
pub fn propagate_field(
    source: &Plane,
    medium: &AcousticMedium,
    cfg: &SolverConfig,
) -> Result<ComplexField> {
    let coeffs = Coefficients::new(medium, cfg)?;
    Ok(solve(&coeffs, source, false)?.0)
}

/// Gradients of a real loss with respect to the medium and the source plane.
#[derive(Debug, Clone)]
pub struct AdjointGradient {
    pub properties: PropertyGradient,
    /// `∂L/∂Re(s) + i·∂L/∂Im(s)` for the source plane `s`.
    pub source: Plane,
}

/// Reverse sweep through a cached forward solve.
///
/// `upstream` holds `∂L/∂Re(P) + i·∂L/∂Im(P)` over the grid. The returned
/// property gradient is with respect to sound speed, density and attenuation
/// (dB/cm at the grid frequency) of every voxel.
pub fn propagate_adjoint(
    cache: &SliceCache,
    upstream: &Array3<Complex64>,
) -> Result<AdjointGradient> {
    let co = &cache.coeffs;
    let grid = co.grid;
    if upstream.dim() != grid.shape() {
        return Err(Error::shape(&[grid.nx, grid.ny, grid.nz], upstream.shape()));
    }
    if cache.sweeps.is_empty() {
        return Err(Error::StaleCache("cache holds no forward snapshots".into()));
    }
    let (nx, ny, nz) = grid.shape();
    let mut fft = Fft2::new(nx, ny);
    let mut acc = GradAccum {
        screen: vec![Array2::zeros((nx, ny)); nz],
        t_fwd: vec![Array2::zeros((nx, ny)); nz],
        t_bwd: vec![Array2::zeros((nx, ny)); nz],
    };
    let mut g_refl: Vec<Option<Plane>> = vec![None; nz];
    let mut g_source = Array2::zeros((nx, ny));
    for (m, rec) in cache.sweeps.iter().enumerate().rev() {
        let (g_inj, g_start) = adjoint_sweep(co, &mut fft, rec, upstream, &g_refl, &mut acc);
        if m == 0 {
            if let Some(g) = g_start {
                g_source = g;
            }
        }
        g_refl = g_inj;
    }

    let mut grad = PropertyGradient::zeros((nx, ny, nz));
    let k0 = grid.k0();
    let half_dz = 0.5 * grid.dz;
    for v in 0..nz {
        let mut gc = grad.c.slice_mut(s![.., .., v]);
        let c = co.c.slice(s![.., .., v]);
        Zip::from(&mut gc).and(&acc.screen[v]).and(&c).for_each(|g, w, &c| {
            *g = w.im * half_dz * k0 * grid.c_ref / (c * c);
        });
        let mut ga = grad.att.slice_mut(s![.., .., v]);
        Zip::from(&mut ga).and(&acc.screen[v]).for_each(|g, w| {
            *g = -w.re * half_dz * DB_PER_CM_TO_NP_PER_M;
        });
    }
    // Transmission/reflection coefficients at plane k depend on Z_k and Z_{k+1};
    // forward and backward reflection share the derivatives of their
    // transmission counterparts.
    let mut g_z = Array3::<f64>::zeros((nx, ny, nz));
    for k in 0..nz.saturating_sub(1) {
        let (z0, z1) = (&co.impedance[k], &co.impedance[k + 1]);
        for ((i, j), &a) in z0.indexed_iter() {
            let b = z1[[i, j]];
            let s2 = (a + b) * (a + b);
            let d = acc.t_bwd[k][[i, j]] - acc.t_fwd[k][[i, j]];
            g_z[[i, j, k]] += d * 2.0 * b / s2;
            g_z[[i, j, k + 1]] -= d * 2.0 * a / s2;
        }
    }
    Zip::from(&mut grad.c)
        .and(&mut grad.rho)
        .and(&g_z)
        .and(&co.c)
        .and(&co.rho)
        .for_each(|gc, gr, &gz, &c, &r| {
            *gc += gz * r;
            *gr += gz * c;
        });
    Ok(AdjointGradient {
        properties: grad,
        source: g_source,
    })
}

/// March a wave launched at plane `start_plane` toward the source plane
/// (transmission only). Planes beyond `start_plane` stay zero.
pub fn march_backward(
    medium: &AcousticMedium,
    cfg: &SolverConfig,
    start_plane: usize,
    field: &Plane,
) -> Result<ComplexField> {
    let co = Coefficients::new(medium, cfg)?;
    check_source(&co.grid, field)?;
    if start_plane >= co.grid.nz {
        return Err(Error::OutOfBounds(format!(
            "start plane {start_plane} outside {} planes",
            co.grid.nz
        )));
    }
    let mut fft = Fft2::new(co.grid.nx, co.grid.ny);
    let mut p = Array3::zeros(co.grid.shape());
    let inj = vec![None; co.grid.nz];
    run_sweep(
        &co,
        &mut fft,
        Direction::Backward,
        start_plane,
        Some(field.clone()),
        &inj,
        &mut p,
        false,
    );
    Ok(ComplexField {
        values: p,
        grid: co.grid,
    })
}
