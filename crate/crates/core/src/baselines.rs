//! Phase-only baselines and the fabrication-domain simulation shared by all
//! design methods.

use std::f64::consts::TAU;

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::dhla::{binarize, fabrication_filter, LensVolume};
use crate::error::{Error, Result};
use crate::medium::{embed_lens, AcousticMedium, SourceSpec, DEFAULT_EMBED_THRESHOLD};
use crate::optim::{check_finite, loss_terms, loss_with_gradient, LensSetup, LossReport, LossTerms, LossWeights, OptimConfig, TargetSpec};
use crate::solver::{apply_phase_delays, march_backward, propagate, propagate_adjoint, propagate_field, ComplexField, SolverConfig};

/// Aperture phase delays in radians, wrapped to `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub phi: Array2<f64>,
}

pub fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl PhaseMap {
    pub fn new(phi: Array2<f64>) -> Result<Self> {
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("phase map contains non-finite values".into()));
        }
        Ok(PhaseMap { phi: phi.mapv(wrap_phase) })
    }

    pub fn zeros(dim: (usize, usize)) -> Self {
        PhaseMap { phi: Array2::zeros(dim) }
    }
}

/// Lens thickness giving one full cycle of phase, `1/(f·|1/c0 − 1/cL|)`.
pub fn thickness_per_cycle(frequency: f64, c0: f64, c_lens: f64) -> Result<f64> {
    if !(frequency > 0.0 && c0 > 0.0 && c_lens > 0.0) {
        return Err(Error::InvalidParameter("frequency and sound speeds must be positive".into()));
    }
    let d = 1.0 / c0 - 1.0 / c_lens;
    if d == 0.0 {
        return Err(Error::InvalidParameter("lens sound speed equals the background".into()));
    }
    Ok(1.0 / (frequency * d.abs()))
}

/// Thickness (m) whose transmission phase reproduces `φ` modulo 2π.
///
/// A lens faster than the background advances the phase by `T·2πf(1/c0 − 1/cL)`,
/// so the required thickness is `(2π − φ)` of a cycle: larger delay means a
/// thinner lens. Results are clamped to `[t_min, min(t_max, t_min + T_2π)]`.
pub fn phase_to_thickness(
    phi: &PhaseMap,
    frequency: f64,
    c0: f64,
    c_lens: f64,
    t_min: f64,
    t_max: f64,
) -> Result<Array2<f64>> {
    let period = thickness_per_cycle(frequency, c0, c_lens)?;
    if !(t_min >= 0.0 && t_max > t_min) {
        return Err(Error::InvalidParameter(format!(
            "thickness bounds must satisfy 0 <= t_min < t_max, got [{t_min}, {t_max}]"
        )));
    }
    let faster = c_lens > c0;
    let hi = t_max.min(t_min + period);
    Ok(phi.phi.mapv(|p| {
        let frac = if faster { wrap_phase(TAU - p) } else { wrap_phase(p) };
        (t_min + frac / TAU * period).clamp(t_min, hi)
    }))
}

/// Phase-only design: `φ` is optimized through `apply_phase_delays →
/// propagate` with the same loss stack as the lens optimizer.
#[derive(Debug, Clone)]
pub struct PoahProblem<'a> {
    pub source: &'a SourceSpec,
    pub medium: &'a AcousticMedium,
    pub target: &'a TargetSpec,
    pub solver: SolverConfig,
    pub weights: LossWeights,
}

impl<'a> PoahProblem<'a> {
    pub fn field(&self, phi: &Array2<f64>) -> Result<ComplexField> {
        propagate_field(&apply_phase_delays(self.source, phi)?, self.medium, &self.solver)
    }

    pub fn loss(&self, phi: &Array2<f64>) -> Result<LossTerms> {
        loss_terms(&self.field(phi)?.values, self.target, &self.weights)
    }

    /// Loss and `∂L/∂φ`.
    pub fn loss_and_gradient(&self, phi: &Array2<f64>) -> Result<(LossTerms, Array2<f64>)> {
        let s = apply_phase_delays(self.source, phi)?;
        let (p, cache) = propagate(&s, self.medium, &self.solver)?;
        let (terms, g_p) = loss_with_gradient(&p.values, self.target, &self.weights)?;
        let adj = propagate_adjoint(&cache, &g_p)?;
        // ∂s/∂φ = i·s
        let grad = Zip::from(&adj.source)
            .and(&s)
            .map_collect(|g, s| -(g.conj() * s).im);
        Ok((terms, grad))
    }
}

/// Adam descent on the aperture phase. The history holds
/// `iterations + 1` entries; the β schedule is unused.
pub fn optimize_poah(problem: &PoahProblem<'_>, initial: PhaseMap, cfg: &OptimConfig) -> Result<(PhaseMap, LossReport)> {
    cfg.validate()?;
    problem.solver.validate(&problem.medium.grid)?;
    let mut phi = initial.phi;
    let mut adam = cfg.adam(phi.dim());
    let mut report = LossReport::default();
    for it in 0..cfg.iterations {
        let (terms, grad) = problem.loss_and_gradient(&phi)?;
        check_finite(&terms, it)?;
        report.push(terms);
        adam.step(&mut phi, &grad);
    }
    let terms = problem.loss(&phi)?;
    check_finite(&terms, cfg.iterations)?;
    report.push(terms);
    Ok((PhaseMap::new(phi)?, report))
}

/// Aperture field radiated by unit point sources at `foci`, marched toward
/// the source plane without reflections and summed.
pub fn time_reversal_field(medium: &AcousticMedium, foci: &[[usize; 3]], cfg: &SolverConfig) -> Result<Array2<Complex64>> {
    let g = medium.grid;
    if foci.is_empty() {
        return Err(Error::InvalidParameter("time reversal needs at least one focus".into()));
    }
    let cfg = SolverConfig {
        reflection_order: 0,
        ..*cfg
    };
    let mut sum = Array2::zeros((g.nx, g.ny));
    for f in foci {
        if !g.contains(*f) {
            return Err(Error::OutOfBounds(format!("focus {f:?} outside the grid")));
        }
        if f[2] == 0 {
            return Err(Error::InvalidParameter(format!("focus {f:?} lies on the source plane")));
        }
        let mut point = Array2::zeros((g.nx, g.ny));
        point[[f[0], f[1]]] = Complex64::new(1.0, 0.0);
        let field = march_backward(medium, &cfg, f[2], &point)?;
        sum += &field.plane(0);
    }
    Ok(sum)
}

/// Conjugate phase of [`time_reversal_field`] on the aperture, zero elsewhere.
pub fn time_reversal(source: &SourceSpec, medium: &AcousticMedium, foci: &[[usize; 3]], cfg: &SolverConfig) -> Result<PhaseMap> {
    source.validate(&medium.grid)?;
    let sum = time_reversal_field(medium, foci, cfg)?;
    let phi = Zip::from(&sum)
        .and(&source.aperture_mask)
        .map_collect(|v, &m| if m != 0.0 { wrap_phase(-v.arg()) } else { 0.0 });
    PhaseMap::new(phi)
}

/// What gets fabricated.
#[derive(Debug, Clone, Copy)]
pub enum Hologram<'a> {
    Phase(&'a PhaseMap),
    Lens(&'a LensVolume),
}

/// Printable lens for a design: phase maps go through [`phase_to_thickness`]
/// and hard voxelization, lenses are binarized; both are then
/// fabrication-filtered.
pub fn fabricate_lens(holo: Hologram<'_>, medium: &AcousticMedium, setup: &LensSetup) -> Result<LensVolume> {
    let g = medium.grid;
    setup.validate(&g)?;
    let lens = match holo {
        Hologram::Phase(phi) => {
            if phi.phi.dim() != (g.nx, g.ny) {
                return Err(Error::shape(&[g.nx, g.ny], phi.phi.shape()));
            }
            let t = phase_to_thickness(
                phi,
                g.frequency,
                g.c_ref,
                setup.material.sound_speed,
                setup.v_min * g.dz,
                setup.v_max * g.dz,
            )?;
            LensVolume::from_thickness(&t.mapv(|t| t / g.dz), setup.depth, setup.v_min, setup.v_max)
        }
        Hologram::Lens(lens) => binarize(lens),
    };
    fabrication_filter(&lens, setup.fabrication_cutoff, g.dx)
}

/// Fabrication-domain field: the printable lens embedded with the hard
/// threshold in front of an unmodulated source.
pub fn fabricate_and_simulate(
    holo: Hologram<'_>,
    source: &SourceSpec,
    medium: &AcousticMedium,
    setup: &LensSetup,
    cfg: &SolverConfig,
) -> Result<(ComplexField, LensVolume)> {
    source.validate(&medium.grid)?;
    let lens = fabricate_lens(holo, medium, setup)?;
    let embedded = embed_lens(medium, &lens, &setup.material, setup.z_offset, DEFAULT_EMBED_THRESHOLD)?;
    let field = propagate_field(&source.plane(), &embedded, cfg)?;
    Ok((field, lens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::MaterialProperties;

    #[test]
    fn thickness_conversion_matches_design_values() {
        let t2pi = thickness_per_cycle(2e6, 1500.0, 2591.0).unwrap();
        assert!((t2pi - 1.78e-3).abs() < 0.01e-3, "{t2pi}");
        let phi = PhaseMap::new(Array2::from_shape_vec((1, 3), vec![0.0, std::f64::consts::PI, TAU]).unwrap()).unwrap();
        let t = phase_to_thickness(&phi, 2e6, 1500.0, 2591.0, 250e-6, 1.9e-3).unwrap();
        assert!((t[[0, 0]] - 250e-6).abs() < 1e-12);
        assert!((t[[0, 1]] - (250e-6 + t2pi / 2.0)).abs() < 1e-12);
        assert!((t[[0, 2]] - 250e-6).abs() < 1e-12);
        assert!(phase_to_thickness(&phi, 2e6, 1500.0, 1500.0, 250e-6, 1.9e-3).is_err());
    }

    #[test]
    fn thickness_clamp_and_round_trip() {
        let (f, c0, cl) = (2e6, 1500.0, 2591.0);
        let n = 400;
        let phi = PhaseMap::new(Array2::from_shape_fn((1, n), |(_, j)| TAU * j as f64 / n as f64)).unwrap();
        let t = phase_to_thickness(&phi, f, c0, cl, 250e-6, 1.9e-3).unwrap();
        let delta = TAU * f * (1.0 / c0 - 1.0 / cl);
        for (&p, &t) in phi.phi.iter().zip(t.iter()) {
            assert!((250e-6..=1.9e-3).contains(&t));
            if t < 1.9e-3 {
                // Transmission phase relative to the t_min slab.
                let back = wrap_phase(-(t - 250e-6) * delta);
                let d = (back - p).abs();
                assert!(d.min(TAU - d) < 1e-9, "{p} -> {back}");
            }
        }
    }

    #[test]
    fn slower_lens_uses_direct_phase() {
        let phi = PhaseMap::new(Array2::from_elem((1, 1), 1.0)).unwrap();
        let t = phase_to_thickness(&phi, 2e6, 1500.0, 1000.0, 0.0, 1.0).unwrap();
        let period = thickness_per_cycle(2e6, 1500.0, 1000.0).unwrap();
        assert!((t[[0, 0]] - period / TAU).abs() < 1e-15);
    }

    #[test]
    fn wrapped_phase_range() {
        for p in [-7.0, -TAU, -1e-18, 0.0, 3.0, TAU, 20.0] {
            let w = wrap_phase(p);
            assert!((0.0..TAU).contains(&w), "{p} -> {w}");
        }
        assert!(PhaseMap::new(Array2::from_elem((1, 1), f64::NAN)).is_err());
        let _ = MaterialProperties::WATER;
    }
}
