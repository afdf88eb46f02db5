//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use num_complex::Complex64;
use toah_core::dhla::DesignField;
use toah_core::medium::{make_homogeneous, AcousticMedium, GridSpec, MaterialProperties, SourceSpec};
use toah_core::optim::{initial_design, LensSetup, LossWeights, TargetSpec, ToahProblem};
use toah_core::solver::SolverConfig;

pub struct Fixture {
    pub grid: GridSpec,
    pub medium: AcousticMedium,
    pub source: Array2<Complex64>,
    pub target: TargetSpec,
    pub setup: LensSetup,
    pub design: DesignField,
}

/// Water domain of `n × n × nz` voxels at 125 µm with a Form Clear lens
/// setup and a single on-axis focus.
pub fn fixture(n: usize, nz: usize) -> Fixture {
    let grid = GridSpec::new((n, n, nz), 125e-6, 2e6, 1500.0).unwrap();
    let medium = make_homogeneous(grid, &MaterialProperties::WATER).unwrap();
    let source = SourceSpec::piston(&grid, 0.8 * n as f64 * grid.dx, 1.0).unwrap().plane();
    let z = (nz as f64 - 8.0) * grid.dz;
    let target = TargetSpec::from_spheres(&grid, &[[0.0, 0.0, z]], &[0.0]).unwrap();
    let setup = LensSetup::from_thickness(&grid, MaterialProperties::FORM_CLEAR, 250e-6, 1.9e-3).unwrap();
    let design = initial_design(&setup, (n, n), 0);
    Fixture {
        grid,
        medium,
        source,
        target,
        setup,
        design,
    }
}

impl Fixture {
    pub fn problem(&self, solver: SolverConfig) -> ToahProblem<'_> {
        ToahProblem {
            source: &self.source,
            base: &self.medium,
            target: &self.target,
            setup: self.setup,
            solver,
            weights: LossWeights::default(),
        }
    }
}
