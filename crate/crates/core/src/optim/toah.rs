use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, loss_terms, loss_with_gradient, LossReport, LossTerms, LossWeights, OptimConfig, TargetSpec};
use crate::dhla::{binarize, dhla_backward, dhla_forward, fabrication_filter, DesignField, LensVolume, Smoothing};
use crate::error::{Error, Result};
use crate::medium::{embed_lens_soft, occupancy_gradient, AcousticMedium, GridSpec, MaterialProperties};
use crate::solver::{propagate, propagate_adjoint, propagate_field, ComplexField, SolverConfig};

/// Lens material, placement and parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensSetup {
    pub material: MaterialProperties,
    /// First medium plane occupied by the lens.
    pub z_offset: usize,
    /// Lens volume depth in voxels.
    pub depth: usize,
    pub alpha: f64,
    /// Thickness bounds in voxels.
    pub v_min: f64,
    pub v_max: f64,
    pub smoothing: Smoothing,
    /// Fabrication low-pass cutoff in meters.
    pub fabrication_cutoff: f64,
}

impl LensSetup {
    /// Setup from physical thickness bounds (meters) on `grid`.
    pub fn from_thickness(grid: &GridSpec, material: MaterialProperties, t_min: f64, t_max: f64) -> Result<Self> {
        let v_min = t_min / grid.dz;
        let v_max = t_max / grid.dz;
        let s = LensSetup {
            material,
            z_offset: 1,
            depth: v_max.ceil().max(1.0) as usize,
            alpha: 0.1,
            v_min,
            v_max,
            smoothing: Smoothing::default(),
            fabrication_cutoff: 2.0 * grid.dx,
        };
        s.validate(grid)?;
        Ok(s)
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        self.material.validate()?;
        if self.z_offset + self.depth > grid.nz {
            return Err(Error::OutOfBounds(format!(
                "lens planes {}..{} exceed the {} grid planes",
                self.z_offset,
                self.z_offset + self.depth,
                grid.nz
            )));
        }
        if self.fabrication_cutoff < grid.dx * (1.0 - 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "fabrication cutoff {} m is below the grid spacing",
                self.fabrication_cutoff
            )));
        }
        DesignField {
            theta: Array2::zeros((1, 1)),
            alpha: self.alpha,
            v_min: self.v_min,
            v_max: self.v_max,
        }
        .validate(Some(self.depth))
    }
}

/// `θ` drawn i.i.d. uniform in [−1, 1].
pub fn initial_design(setup: &LensSetup, dim: (usize, usize), seed: u64) -> DesignField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DesignField {
        theta: Array2::from_shape_fn(dim, |_| rng.random_range(-1.0..=1.0)),
        alpha: setup.alpha,
        v_min: setup.v_min,
        v_max: setup.v_max,
    }
}

/// The differentiable chain `θ → lens → medium → field → loss`.
#[derive(Debug, Clone)]
pub struct ToahProblem<'a> {
    pub source: &'a Array2<Complex64>,
    pub base: &'a AcousticMedium,
    pub target: &'a TargetSpec,
    pub setup: LensSetup,
    pub solver: SolverConfig,
    pub weights: LossWeights,
}

impl<'a> ToahProblem<'a> {
    pub fn validate(&self) -> Result<()> {
        let g = &self.base.grid;
        self.setup.validate(g)?;
        self.solver.validate(g)?;
        if self.target.shape() != g.shape() {
            return Err(Error::shape(&[g.nx, g.ny, g.nz], {
                let (a, b, c) = self.target.shape();
                &[a, b, c]
            }));
        }
        if self.source.dim() != (g.nx, g.ny) {
            return Err(Error::shape(&[g.nx, g.ny], self.source.shape()));
        }
        Ok(())
    }

    pub fn lens(&self, design: &DesignField, beta: f64) -> Result<LensVolume> {
        dhla_forward(design, beta, &self.setup.smoothing, self.setup.depth)
    }

    /// Medium with the soft lens embedded.
    pub fn medium(&self, lens: &LensVolume) -> Result<AcousticMedium> {
        embed_lens_soft(self.base, lens, &self.setup.material, self.setup.z_offset)
    }

    pub fn field(&self, design: &DesignField, beta: f64) -> Result<ComplexField> {
        let medium = self.medium(&self.lens(design, beta)?)?;
        propagate_field(self.source, &medium, &self.solver)
    }

    pub fn loss(&self, design: &DesignField, beta: f64) -> Result<LossTerms> {
        loss_terms(&self.field(design, beta)?.values, self.target, &self.weights)
    }

    /// Loss and `∂L/∂θ`.
    pub fn loss_and_gradient(&self, design: &DesignField, beta: f64) -> Result<(LossTerms, Array2<f64>)> {
        let lens = self.lens(design, beta)?;
        let medium = self.medium(&lens)?;
        let (p, cache) = propagate(self.source, &medium, &self.solver)?;
        let (terms, g_p) = loss_with_gradient(&p.values, self.target, &self.weights)?;
        let adj = propagate_adjoint(&cache, &g_p)?;
        let g_occ = occupancy_gradient(
            &adj.properties,
            self.base,
            &self.setup.material,
            self.setup.z_offset,
            self.setup.depth,
        )?;
        let g_theta = dhla_backward(design, beta, &self.setup.smoothing, &g_occ)?;
        Ok((terms, g_theta))
    }

    /// Printable lens: hard threshold of the smoothed thickness followed by
    /// the fabrication filter.
    pub fn fabricate(&self, design: &DesignField, beta: f64) -> Result<LensVolume> {
        let lens = binarize(&self.lens(design, beta)?);
        fabrication_filter(&lens, self.setup.fabrication_cutoff, self.base.grid.dx)
    }
}

#[derive(Debug, Clone)]
pub struct ToahOutcome {
    pub design: DesignField,
    /// Binarized, fabrication-filtered lens.
    pub lens: LensVolume,
    pub report: LossReport,
}

/// Adam descent on `θ` with the sharpness annealed by the configured
/// schedule. The history holds `iterations + 1` entries.
pub fn optimize_toah(problem: &ToahProblem<'_>, initial: DesignField, cfg: &OptimConfig) -> Result<ToahOutcome> {
    optimize_toah_with(problem, initial, cfg, |_, _, _| Ok(()))
}

/// [`optimize_toah`] with a callback run after each update, given the
/// iteration index, the updated design and the loss that preceded the update.
pub fn optimize_toah_with<F>(
    problem: &ToahProblem<'_>,
    initial: DesignField,
    cfg: &OptimConfig,
    mut on_step: F,
) -> Result<ToahOutcome>
where
    F: FnMut(usize, &DesignField, &LossTerms) -> Result<()>,
{
    problem.validate()?;
    cfg.validate()?;
    initial.validate(Some(problem.setup.depth))?;
    if initial.dim() != (problem.base.grid.nx, problem.base.grid.ny) {
        return Err(Error::shape(
            &[problem.base.grid.nx, problem.base.grid.ny],
            initial.theta.shape(),
        ));
    }
    let n = cfg.iterations;
    let mut design = initial;
    let mut adam = cfg.adam(design.dim());
    let mut report = LossReport::default();
    for it in 0..n {
        let beta = cfg.beta_schedule.beta_at(it, n);
        let (terms, grad) = problem.loss_and_gradient(&design, beta)?;
        check_finite(&terms, it)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                detail: "non-finite gradient".into(),
            });
        }
        log::debug!("iteration {it}: beta {beta:.3} loss {:.6}", terms.total);
        report.push(terms);
        adam.step(&mut design.theta, &grad);
        on_step(it, &design, &terms)?;
    }
    let beta = cfg.beta_schedule.beta_at(n, n);
    let terms = problem.loss(&design, beta)?;
    check_finite(&terms, n)?;
    report.push(terms);
    let lens = problem.fabricate(&design, beta)?;
    Ok(ToahOutcome { design, lens, report })
}
