use ndarray::Array2;
use toah_core::dhla::DesignField;
use toah_core::medium::{make_homogeneous, GridSpec, MaterialProperties, SourceSpec};
use toah_core::optim::{gradcheck, initial_design, optimize_toah, LensSetup, LossWeights, OptimConfig, TargetSpec, ToahProblem};
use toah_core::solver::SolverConfig;

fn small_grid() -> GridSpec {
    GridSpec::new((16, 16, 24), 125e-6, 2e6, 1500.0).unwrap()
}

fn chain_error(order: usize, seed: u64) -> f64 {
    let g = small_grid();
    let base = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::piston(&g, 1.6e-3, 1.0).unwrap().plane();
    let target = TargetSpec::from_spheres(&g, &[[0.0, 0.0, 2.2e-3]], &[0.2e-3]).unwrap();
    let setup = LensSetup::from_thickness(&g, MaterialProperties::FORM_CLEAR, 250e-6, 1.0e-3).unwrap();
    let problem = ToahProblem {
        source: &src,
        base: &base,
        target: &target,
        setup,
        solver: SolverConfig {
            reflection_order: order,
            ..SolverConfig::default()
        },
        weights: LossWeights::default(),
    };
    let design = initial_design(&setup, (16, 16), seed);
    let beta = 3.0;
    let (_, grad) = problem.loss_and_gradient(&design, beta).unwrap();
    let f = |theta: &Array2<f64>| {
        let d = DesignField {
            theta: theta.clone(),
            ..design.clone()
        };
        Ok(problem.loss(&d, beta)?.total)
    };
    gradcheck(f, &design.theta, &grad, 1e-3, 32, seed).unwrap().max_rel_error
}

#[test]
fn full_chain_gradient_without_reflections() {
    let e = chain_error(0, 1);
    assert!(e < 1e-5, "{e}");
}

#[test]
fn full_chain_gradient_with_reflections() {
    let e = chain_error(4, 2);
    assert!(e < 1e-3, "{e}");
}

#[test]
fn zero_iterations_return_initial_design() {
    let g = small_grid();
    let base = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::piston(&g, 1.6e-3, 1.0).unwrap().plane();
    let target = TargetSpec::from_spheres(&g, &[[0.0, 0.0, 2e-3]], &[0.0]).unwrap();
    let setup = LensSetup::from_thickness(&g, MaterialProperties::FORM_CLEAR, 250e-6, 1.0e-3).unwrap();
    let problem = ToahProblem {
        source: &src,
        base: &base,
        target: &target,
        setup,
        solver: SolverConfig::default(),
        weights: LossWeights::default(),
    };
    let init = initial_design(&setup, (16, 16), 9);
    let cfg = OptimConfig {
        iterations: 0,
        ..OptimConfig::default()
    };
    let out = optimize_toah(&problem, init.clone(), &cfg).unwrap();
    assert_eq!(out.design, init);
    assert_eq!(out.report.len(), 1);
    assert!(out.lens.is_binary());
}

#[test]
fn short_run_reduces_the_loss() {
    let g = GridSpec::new((24, 24, 40), 125e-6, 2e6, 1500.0).unwrap();
    let base = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::piston(&g, 2.5e-3, 1.0).unwrap().plane();
    let target = TargetSpec::from_spheres(&g, &[[0.0, 0.0, 3.5e-3]], &[0.15e-3]).unwrap();
    let setup = LensSetup::from_thickness(&g, MaterialProperties::FORM_CLEAR, 250e-6, 1.9e-3).unwrap();
    let problem = ToahProblem {
        source: &src,
        base: &base,
        target: &target,
        setup,
        solver: SolverConfig {
            reflection_order: 0,
            ..SolverConfig::default()
        },
        weights: LossWeights::default(),
    };
    let cfg = OptimConfig {
        iterations: 15,
        ..OptimConfig::default()
    };
    let out = optimize_toah(&problem, initial_design(&setup, (24, 24), 0), &cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.len(), 16);
    for n in 0..r.len() {
        let t = r.get(n).unwrap();
        assert_eq!(t.total, t.acc + 0.2 * t.energy + 0.5 * t.balance);
    }
    assert!(r.last().unwrap().total < r.first().unwrap().total);
}
