//! Field metrics, thermal post-processing and robustness sweeps.

use std::collections::VecDeque;

use ndarray::{Array2, Array3, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dhla::LensVolume;
use crate::error::{Error, Result};
use crate::medium::{embed_lens, AcousticMedium, GridSpec, MaterialProperties, DB_PER_CM_TO_NP_PER_M, DEFAULT_EMBED_THRESHOLD};
use crate::solver::{propagate_field, ComplexField, SolverConfig};

/// PSNR reported for identical fields.
pub const PSNR_IDENTICAL_DB: f64 = 300.0;

/// Default region-growing threshold relative to the global peak.
pub const DEFAULT_THRESHOLD_DB: f64 = -6.0;

fn peak_normalized(p: &ComplexField) -> Array3<f64> {
    let a = p.amplitude();
    let m = a.iter().fold(0.0f64, |m, &v| m.max(v));
    if m > 0.0 {
        a / m
    } else {
        a
    }
}

/// PSNR in dB between peak-normalized amplitude volumes, `p_opt` being the
/// reference.
pub fn cross_domain_psnr(p_opt: &ComplexField, p_fab: &ComplexField) -> Result<f64> {
    if p_opt.values.dim() != p_fab.values.dim() {
        let (a, b, c) = p_opt.values.dim();
        return Err(Error::shape(&[a, b, c], p_fab.values.shape()));
    }
    if p_opt.max_amplitude() == 0.0 {
        return Err(Error::InvalidParameter("reference field is zero".into()));
    }
    let r = peak_normalized(p_opt);
    let f = peak_normalized(p_fab);
    let mse = Zip::from(&r).and(&f).fold(0.0, |acc, a, b| acc + (a - b) * (a - b)) / r.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_IDENTICAL_DB))
}

/// Region-grown focal volumes, one entry per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Voxels of the component reached from each seed, sorted; seeds that
    /// share a component carry the same set.
    pub segments: Vec<Vec<[usize; 3]>>,
    pub threshold: f64,
    pub shape: (usize, usize, usize),
}

impl Segmentation {
    /// Number of distinct non-empty components.
    pub fn n_components(&self) -> usize {
        let mut firsts: Vec<[usize; 3]> = self.segments.iter().filter_map(|s| s.first().copied()).collect();
        firsts.sort_unstable();
        firsts.dedup();
        firsts.len()
    }

    /// Union of all segments.
    pub fn mask(&self) -> Array3<bool> {
        let mut m = Array3::from_elem(self.shape, false);
        for s in &self.segments {
            for &v in s {
                m[v] = true;
            }
        }
        m
    }
}

const NEIGHBORS: [[isize; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

/// Threshold at `threshold_db` below the global amplitude peak and grow a
/// 6-connected region from each seed. Seeds below threshold get an empty set.
pub fn segment_foci(p: &ComplexField, seeds: &[[usize; 3]], threshold_db: f64) -> Result<Segmentation> {
    let shape = p.values.dim();
    for s in seeds {
        if s[0] >= shape.0 || s[1] >= shape.1 || s[2] >= shape.2 {
            return Err(Error::OutOfBounds(format!("seed {s:?} outside the field")));
        }
    }
    let amp = p.amplitude();
    let peak = amp.iter().fold(0.0f64, |m, &v| m.max(v));
    let threshold = peak * 10f64.powf(threshold_db / 20.0);
    let above = |v: [usize; 3]| peak > 0.0 && amp[v] >= threshold;
    let mut comp = Array3::<usize>::zeros(shape);
    let mut found: Vec<Vec<[usize; 3]>> = Vec::new();
    let mut segments = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        if !above(seed) {
            segments.push(Vec::new());
            continue;
        }
        if comp[seed] == 0 {
            let id = found.len() + 1;
            let mut voxels = vec![seed];
            comp[seed] = id;
            let mut queue = VecDeque::from([seed]);
            while let Some(v) = queue.pop_front() {
                for d in NEIGHBORS {
                    let n = [v[0] as isize + d[0], v[1] as isize + d[1], v[2] as isize + d[2]];
                    if n.iter().any(|&c| c < 0) {
                        continue;
                    }
                    let n = [n[0] as usize, n[1] as usize, n[2] as usize];
                    if n[0] >= shape.0 || n[1] >= shape.1 || n[2] >= shape.2 {
                        continue;
                    }
                    if comp[n] == 0 && above(n) {
                        comp[n] = id;
                        voxels.push(n);
                        queue.push_back(n);
                    }
                }
            }
            voxels.sort_unstable();
            found.push(voxels);
        }
        segments.push(found[comp[seed] - 1].clone());
    }
    Ok(Segmentation {
        segments,
        threshold,
        shape,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusMetrics {
    pub peak_pressure: f64,
    pub peak_index: [usize; 3],
    pub fwhm_lateral_x: f64,
    pub fwhm_lateral_y: f64,
    pub fwhm_axial: f64,
    pub n_voxels: usize,
    pub volume_m3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalReport {
    pub foci: Vec<FocusMetrics>,
    pub psnr_cross_domain: Option<f64>,
    /// Undefined (`None`) when no focus reaches the threshold.
    pub leakage_ratio: Option<f64>,
    pub uniformity: f64,
    pub n_components: usize,
}

/// Full width at half of `profile[peak]`, linearly interpolated, in samples.
/// A profile that stays above half maximum is measured to the array edge.
pub fn fwhm_samples(profile: &[f64], peak: usize) -> f64 {
    let half = profile[peak] / 2.0;
    let mut left = 0.0;
    let mut k = peak;
    while k > 0 {
        if profile[k - 1] < half {
            let (a, b) = (profile[k - 1], profile[k]);
            left = (k - 1) as f64 + (half - a) / (b - a);
            break;
        }
        k -= 1;
    }
    let last = profile.len() - 1;
    let mut right = last as f64;
    let mut k = peak;
    while k < last {
        if profile[k + 1] < half {
            let (a, b) = (profile[k], profile[k + 1]);
            right = k as f64 + (a - half) / (a - b);
            break;
        }
        k += 1;
    }
    right - left
}

/// Per-focus peak, FWHM and volume plus the global leakage and uniformity.
/// A focus with an empty segment is characterized at its seed.
pub fn focal_metrics(p: &ComplexField, seg: &Segmentation, seeds: &[[usize; 3]]) -> Result<FocalReport> {
    check_segmentation(p, seg, seeds)?;
    if seg.segments.iter().all(Vec::is_empty) {
        return Err(Error::InvalidParameter("segmentation is empty".into()));
    }
    let amp = p.amplitude();
    let foci: Vec<FocusMetrics> = seg
        .segments
        .iter()
        .zip(seeds)
        .map(|(s, &seed)| focus_metrics(&amp, &p.grid, s, seed))
        .collect();
    let mask = seg.mask();
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    Zip::from(&amp).and(&mask).for_each(|&a, &m| {
        if m {
            sin += a;
            nin += 1;
        } else {
            sout += a;
            nout += 1;
        }
    });
    let mean_in = sin / nin as f64;
    let leakage = if nout == 0 || mean_in == 0.0 { 0.0 } else { (sout / nout as f64) / mean_in };
    Ok(FocalReport {
        uniformity: uniformity(&foci),
        foci,
        psnr_cross_domain: None,
        leakage_ratio: Some(leakage),
        n_components: seg.n_components(),
    })
}

fn check_segmentation(p: &ComplexField, seg: &Segmentation, seeds: &[[usize; 3]]) -> Result<()> {
    if seg.shape != p.values.dim() {
        let (a, b, c) = p.values.dim();
        return Err(Error::shape(&[a, b, c], &[seg.shape.0, seg.shape.1, seg.shape.2]));
    }
    if seeds.len() != seg.segments.len() {
        return Err(Error::InvalidParameter(format!(
            "{} seeds for {} segments",
            seeds.len(),
            seg.segments.len()
        )));
    }
    Ok(())
}

fn focus_metrics(amp: &Array3<f64>, g: &GridSpec, segment: &[[usize; 3]], seed: [usize; 3]) -> FocusMetrics {
    let (nx, ny, nz) = amp.dim();
    let peak_index = segment
        .iter()
        .copied()
        .max_by(|&a, &b| amp[a].total_cmp(&amp[b]))
        .unwrap_or(seed);
    let [i, j, k] = peak_index;
    let px: Vec<f64> = (0..nx).map(|x| amp[[x, j, k]]).collect();
    let py: Vec<f64> = (0..ny).map(|y| amp[[i, y, k]]).collect();
    let pz: Vec<f64> = (0..nz).map(|z| amp[[i, j, z]]).collect();
    let peak = amp[peak_index];
    let (fx, fy, fz) = if peak > 0.0 {
        (fwhm_samples(&px, i) * g.dx, fwhm_samples(&py, j) * g.dy, fwhm_samples(&pz, k) * g.dz)
    } else {
        (0.0, 0.0, 0.0)
    };
    FocusMetrics {
        peak_pressure: peak,
        peak_index,
        fwhm_lateral_x: fx,
        fwhm_lateral_y: fy,
        fwhm_axial: fz,
        n_voxels: segment.len(),
        volume_m3: segment.len() as f64 * g.voxel_volume(),
    }
}

fn uniformity(foci: &[FocusMetrics]) -> f64 {
    let peaks: Vec<f64> = foci.iter().map(|f| f.peak_pressure * f.peak_pressure).collect();
    let max = peaks.iter().fold(0.0f64, |m, &v| m.max(v));
    let min = peaks.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if max > 0.0 {
        min / max
    } else {
        0.0
    }
}

/// Segment around `seeds` and compute the focal report in one go. When no
/// seed reaches the threshold the report still lists every focus at its
/// seed, with no components and no leakage ratio.
pub fn evaluate_field(p: &ComplexField, seeds: &[[usize; 3]], threshold_db: f64) -> Result<FocalReport> {
    let seg = segment_foci(p, seeds, threshold_db)?;
    if seg.segments.iter().any(|s| !s.is_empty()) {
        return focal_metrics(p, &seg, seeds);
    }
    let amp = p.amplitude();
    let foci: Vec<FocusMetrics> = seeds.iter().map(|&s| focus_metrics(&amp, &p.grid, &[], s)).collect();
    Ok(FocalReport {
        uniformity: uniformity(&foci),
        foci,
        psnr_cross_domain: None,
        leakage_ratio: None,
        n_components: 0,
    })
}

/// Thermal tissue model and sonication protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThermalConfig {
    pub k_bone: f64,
    pub specific_heat_bone: f64,
    pub k_soft: f64,
    pub specific_heat_soft: f64,
    /// Voxels denser than this (kg/m³) are treated as bone.
    pub bone_density_threshold: f64,
    pub heat_duration: f64,
    pub cool_duration: f64,
    pub n_cycles: usize,
    /// Peak pressure (Pa) the field is scaled to inside the target region.
    pub reference_pressure: f64,
    /// Perfusion heat sink `w·c_b` (W·m⁻³·°C⁻¹).
    pub perfusion: f64,
    /// Explicit time step; `None` picks 90% of the stability limit.
    pub dt: Option<f64>,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        ThermalConfig {
            k_bone: 0.32,
            specific_heat_bone: 1313.0,
            k_soft: 0.51,
            specific_heat_soft: 3630.0,
            bone_density_threshold: 1500.0,
            heat_duration: 0.010,
            cool_duration: 0.190,
            n_cycles: 5,
            reference_pressure: 1e6,
            perfusion: 0.0,
            dt: None,
        }
    }
}

impl ThermalConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.k_bone,
            self.specific_heat_bone,
            self.k_soft,
            self.specific_heat_soft,
            self.reference_pressure,
        ];
        if pos.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::InvalidParameter("thermal properties must be positive".into()));
        }
        if !(self.heat_duration >= 0.0 && self.cool_duration >= 0.0 && self.perfusion >= 0.0) {
            return Err(Error::InvalidParameter("durations and perfusion must be non-negative".into()));
        }
        Ok(())
    }
}

/// Field scale factor bringing the peak amplitude over `region` (whole
/// field when empty) to `reference`.
pub fn pressure_scale(p: &ComplexField, region: &[[usize; 3]], reference: f64) -> Result<f64> {
    let peak = if region.is_empty() {
        p.max_amplitude()
    } else {
        region.iter().map(|&v| p.values[v].norm()).fold(0.0, f64::max)
    };
    if peak == 0.0 {
        return Ok(0.0);
    }
    Ok(reference / peak)
}

/// Temperature rise after the pulsed sonication. The field is first scaled
/// so its peak over `region` equals the configured reference pressure; the
/// heat source is `α·p²/(ρc)` and the boundaries are insulated.
pub fn bioheat_simulate(
    p: &ComplexField,
    medium: &AcousticMedium,
    cfg: &ThermalConfig,
    region: &[[usize; 3]],
) -> Result<Array3<f64>> {
    cfg.validate()?;
    let g = medium.grid;
    if p.values.dim() != g.shape() {
        return Err(Error::shape(&[g.nx, g.ny, g.nz], p.values.shape()));
    }
    let scale = pressure_scale(p, region, cfg.reference_pressure)?;
    let q = Zip::from(&p.values)
        .and(&medium.att)
        .and(&medium.rho)
        .and(&medium.c)
        .map_collect(|v, &a, &r, &c| a * DB_PER_CM_TO_NP_PER_M * (v.norm() * scale).powi(2) / (r * c));
    bioheat_from_source(&q, medium, cfg)
}

/// [`bioheat_simulate`] with an explicit heat source `q` (W/m³).
pub fn bioheat_from_source(q: &Array3<f64>, medium: &AcousticMedium, cfg: &ThermalConfig) -> Result<Array3<f64>> {
    cfg.validate()?;
    let g = medium.grid;
    let shape = g.shape();
    if q.dim() != shape {
        return Err(Error::shape(&[g.nx, g.ny, g.nz], q.shape()));
    }
    let bone = medium.rho.mapv(|r| r > cfg.bone_density_threshold);
    let k = bone.mapv(|b| if b { cfg.k_bone } else { cfg.k_soft });
    let heat_cap = Zip::from(&bone)
        .and(&medium.rho)
        .map_collect(|&b, &r| r * if b { cfg.specific_heat_bone } else { cfg.specific_heat_soft });
    let inv = [1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy), 1.0 / (g.dz * g.dz)];
    let limit = Zip::from(&heat_cap)
        .and(&k)
        .fold(f64::INFINITY, |m, &hc, &k| m.min(hc / (2.0 * k * (inv[0] + inv[1] + inv[2]) + cfg.perfusion)));
    let dt_max = match cfg.dt {
        Some(dt) if dt > limit => {
            return Err(Error::Numerical(format!("time step {dt} s exceeds the stability limit {limit} s")));
        }
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}"))),
        None => 0.9 * limit,
    };
    let harmonic = |a: f64, b: f64| 2.0 * a * b / (a + b);
    let mut t = Array3::<f64>::zeros(shape);
    let mut next = t.clone();
    let (nx, ny, nz) = shape;
    let mut run = |t: &mut Array3<f64>, duration: f64, heating: bool| {
        if duration <= 0.0 {
            return;
        }
        let steps = (duration / dt_max).ceil() as usize;
        let dt = duration / steps as f64;
        for _ in 0..steps {
            for i in 0..nx {
                for j in 0..ny {
                    for l in 0..nz {
                        let tc = t[[i, j, l]];
                        let kc = k[[i, j, l]];
                        let mut flux = 0.0;
                        let mut add = |n: [usize; 3], w: f64| {
                            flux += harmonic(kc, k[n]) * (t[n] - tc) * w;
                        };
                        if i > 0 { add([i - 1, j, l], inv[0]); }
                        if i + 1 < nx { add([i + 1, j, l], inv[0]); }
                        if j > 0 { add([i, j - 1, l], inv[1]); }
                        if j + 1 < ny { add([i, j + 1, l], inv[1]); }
                        if l > 0 { add([i, j, l - 1], inv[2]); }
                        if l + 1 < nz { add([i, j, l + 1], inv[2]); }
                        let src = if heating { q[[i, j, l]] } else { 0.0 };
                        next[[i, j, l]] = tc + dt * (flux + src - cfg.perfusion * tc) / heat_cap[[i, j, l]];
                    }
                }
            }
            std::mem::swap(t, &mut next);
        }
    };
    for _ in 0..cfg.n_cycles {
        run(&mut t, cfg.heat_duration, true);
        run(&mut t, cfg.cool_duration, false);
    }
    Ok(t)
}

/// Add i.i.d. Gaussian noise with standard deviation `sigma` (m) to the
/// thickness map, clamp to the lens bounds and re-binarize.
pub fn perturb_lens(lens: &LensVolume, sigma: f64, dz: f64, seed: u64) -> Result<LensVolume> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("perturbation sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(lens.clone());
    }
    let normal = Normal::new(0.0, sigma / dz).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (lens.v_min, lens.v_max.min(lens.depth() as f64));
    let t: Array2<f64> = lens.thickness_map.mapv(|t| (t + normal.sample(&mut rng)).clamp(lo, hi));
    Ok(LensVolume::from_thickness(&t, lens.depth(), lens.v_min, lens.v_max))
}

/// Sound speed and density combinations with the design resin's attenuation.
pub fn material_cases(base: &MaterialProperties) -> Vec<MaterialProperties> {
    [(2424.0, 1100.0), (2440.0, 1162.0), (2591.0, 1178.0), (2700.0, 1180.0)]
        .iter()
        .map(|&(c, r)| base.with_speed_density(c, r))
        .collect()
}

/// Fabrication-domain evaluation of a fixed lens.
#[derive(Debug, Clone, Copy)]
pub struct SweepSetup<'a> {
    pub lens: &'a LensVolume,
    pub source: &'a ndarray::Array2<num_complex::Complex64>,
    pub medium: &'a AcousticMedium,
    pub z_offset: usize,
    pub solver: SolverConfig,
    pub seeds: &'a [[usize; 3]],
    pub threshold_db: f64,
    /// Planes before this index are excluded from the metrics.
    pub crop_start: usize,
}

impl SweepSetup<'_> {
    pub fn evaluate(&self, lens: &LensVolume, mat: &MaterialProperties) -> Result<FocalReport> {
        let embedded = embed_lens(self.medium, lens, mat, self.z_offset, DEFAULT_EMBED_THRESHOLD)?;
        let p = propagate_field(self.source, &embedded, &self.solver)?;
        let cropped = p.crop_z(self.crop_start, p.grid.nz)?;
        let seeds: Vec<[usize; 3]> = self
            .seeds
            .iter()
            .map(|s| {
                if s[2] < self.crop_start {
                    Err(Error::OutOfBounds(format!("seed {s:?} lies before the evaluation window")))
                } else {
                    Ok([s[0], s[1], s[2] - self.crop_start])
                }
            })
            .collect::<Result<_>>()?;
        evaluate_field(&cropped, &seeds, self.threshold_db)
    }
}

/// Re-embed the lens with each material and evaluate; rows follow `materials`.
pub fn sweep_material(setup: &SweepSetup<'_>, materials: &[MaterialProperties]) -> Result<Vec<FocalReport>> {
    materials
        .par_iter()
        .map(|m| setup.evaluate(setup.lens, m))
        .collect()
}

/// Evaluate `n` seeded surface perturbations of the lens with its design
/// material; rows follow the seeds `seed, seed + 1, …`.
pub fn sweep_perturbation(
    setup: &SweepSetup<'_>,
    material: &MaterialProperties,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<FocalReport>> {
    let dz = setup.medium.grid.dz;
    (0..n as u64)
        .into_par_iter()
        .map(|s| {
            let lens = perturb_lens(setup.lens, sigma, dz, seed + s)?;
            setup.evaluate(&lens, material)
        })
        .collect()
}
