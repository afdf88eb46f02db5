use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use num_complex::Complex64;
use toah_core::analysis::cross_domain_psnr;
use toah_core::baselines::{
    fabricate_and_simulate, optimize_poah, time_reversal, time_reversal_field, Hologram, PhaseMap, PoahProblem,
};
use toah_core::dhla::LensVolume;
use toah_core::medium::{embed_lens, make_homogeneous, GridSpec, MaterialProperties, SourceSpec};
use toah_core::optim::{LensSetup, LossWeights, OptimConfig, TargetSpec};
use toah_core::solver::{apply_phase_delays, backproject, propagate_field, SolverConfig};

fn grid() -> GridSpec {
    GridSpec::new((48, 48, 64), 125e-6, 2e6, 1500.0).unwrap()
}

#[test]
fn time_reversal_matches_spherical_phase() {
    let g = grid();
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::piston(&g, 3e-3, 1.0).unwrap();
    let cfg = SolverConfig {
        reflection_order: 0,
        boundary_cells: 8,
        ..SolverConfig::default()
    };
    let focus = [24, 24, 40];
    let phi = time_reversal(&src, &m, &[focus], &cfg).unwrap();
    let k0 = g.k0();
    let z = g.z_at(focus[2]);
    // Wrapped difference against −(k0·r − atan(1/(k0·r))) of a point source,
    // with the constant offset removed.
    let mut diffs = Vec::new();
    for ((i, j), &m) in src.aperture_mask.indexed_iter() {
        if m == 0.0 {
            continue;
        }
        let r = (g.x_at(i).powi(2) + g.y_at(j).powi(2) + z * z).sqrt();
        let expect = -(k0 * r - (1.0 / (k0 * r)).atan());
        diffs.push(Complex64::from_polar(1.0, phi.phi[[i, j]] - expect));
    }
    let mean: Complex64 = diffs.iter().sum::<Complex64>() / diffs.len() as f64;
    let rot = Complex64::from_polar(1.0, -mean.arg());
    let rms = (diffs.iter().map(|d| (d * rot).arg().powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
    assert!(rms < 0.05, "rms {rms}");
}

#[test]
fn time_reversal_equals_conjugated_backprojection() {
    let g = grid();
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let cfg = SolverConfig::default();
    let foci = [[20, 24, 30], [28, 24, 30]];
    let tr = time_reversal_field(&m, &foci, &cfg).unwrap();
    let mut bp = Array2::<Complex64>::zeros((48, 48));
    for f in foci {
        let mut pt = Array2::zeros((48, 48));
        pt[[f[0], f[1]]] = Complex64::new(1.0, 0.0);
        let b = backproject(&pt, &g, &[-g.z_at(f[2])]).unwrap();
        bp += &b.plane(0);
    }
    let err = tr.iter().zip(bp.iter()).map(|(a, b)| (a - b.conj()).norm()).fold(0.0, f64::max);
    let scale = tr.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(err < 1e-10 * scale, "{err}");
}

#[test]
fn time_reversal_mirror_symmetry_and_errors() {
    let g = grid();
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::piston(&g, 4e-3, 1.0).unwrap();
    let cfg = SolverConfig::default();
    let phi = time_reversal(&src, &m, &[[20, 24, 30], [28, 24, 30]], &cfg).unwrap();
    for i in 1..48 {
        for j in 0..48 {
            let d = (phi.phi[[i, j]] - phi.phi[[48 - i, j]]).rem_euclid(TAU);
            assert!(d.min(TAU - d) < 1e-9);
        }
    }
    assert!(time_reversal(&src, &m, &[[24, 24, 0]], &cfg).is_err());
    assert!(time_reversal(&src, &m, &[[24, 24, 64]], &cfg).is_err());
}

#[test]
fn poah_learns_a_fresnel_profile() {
    let g = GridSpec::new((32, 32, 48), 125e-6, 2e6, 1500.0).unwrap();
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::piston(&g, 3.5e-3, 1.0).unwrap();
    let f = 3e-3;
    let target = TargetSpec::from_spheres(&g, &[[0.0, 0.0, f]], &[0.0]).unwrap();
    let problem = PoahProblem {
        source: &src,
        medium: &m,
        target: &target,
        solver: SolverConfig {
            reflection_order: 0,
            boundary_cells: 4,
            ..SolverConfig::default()
        },
        weights: LossWeights::default(),
    };
    let cfg = OptimConfig {
        learning_rate: 0.1,
        iterations: 100,
        ..OptimConfig::default()
    };
    let (phi, report) = optimize_poah(&problem, PhaseMap::zeros((32, 32)), &cfg).unwrap();
    assert!(report.last().unwrap().total < report.first().unwrap().total);
    // Compare with the analytic lens phase via the circular correlation of
    // unit phasors on the aperture.
    let k0 = g.k0();
    let target_z = g.z_at(target.focus_centers[0][2]);
    let mut acc = Complex64::default();
    let mut n = 0.0;
    for ((i, j), &mask) in src.aperture_mask.indexed_iter() {
        if mask == 0.0 {
            continue;
        }
        let r = (g.x_at(i).powi(2) + g.y_at(j).powi(2) + target_z * target_z).sqrt();
        acc += Complex64::from_polar(1.0, phi.phi[[i, j]] + k0 * r);
        n += 1.0;
    }
    let corr = acc.norm() / n;
    // The periodic images are absorbed, so time reversal agrees as well.
    let tr = time_reversal(&src, &m, &target.focus_centers, &problem.solver).unwrap();
    let mut a2 = Complex64::default();
    for ((i, j), &mask) in src.aperture_mask.indexed_iter() {
        if mask != 0.0 {
            a2 += Complex64::from_polar(1.0, phi.phi[[i, j]] - tr.phi[[i, j]]);
        }
    }
    assert!(a2.norm() / n > 0.95);
    assert!(corr > 0.9, "{corr}");
    let zero = optimize_poah(
        &problem,
        PhaseMap::zeros((32, 32)),
        &OptimConfig {
            iterations: 0,
            ..cfg
        },
    )
    .unwrap();
    assert!(zero.0.phi.iter().all(|&v| v == 0.0));
}

#[test]
fn flat_phase_gives_a_uniform_slab() {
    let g = grid();
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::piston(&g, 4e-3, 1.0).unwrap();
    let setup = LensSetup::from_thickness(&g, MaterialProperties::FORM_CLEAR, 250e-6, 1.9e-3).unwrap();
    let cfg = SolverConfig::default();
    let phi = PhaseMap::zeros((48, 48));
    let (fab, lens) = fabricate_and_simulate(Hologram::Phase(&phi), &src, &m, &setup, &cfg).unwrap();
    assert!(lens.thickness_map.iter().all(|&t| (t - 2.0).abs() < 1e-9));
    let opt = propagate_field(&apply_phase_delays(&src, &phi.phi).unwrap(), &m, &cfg).unwrap();
    let start = setup.z_offset + setup.depth;
    let psnr = cross_domain_psnr(&opt.crop_z(start, 64).unwrap(), &fab.crop_z(start, 64).unwrap()).unwrap();
    assert!(psnr > 40.0, "{psnr}");
}

#[test]
fn binary_lens_fabrication_matches_direct_embedding() {
    let g = grid();
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::piston(&g, 4e-3, 1.0).unwrap();
    let setup = LensSetup::from_thickness(&g, MaterialProperties::FORM_CLEAR, 250e-6, 1.9e-3).unwrap();
    // Smooth profile that the fabrication filter leaves on the same voxels.
    let t = Array2::from_shape_fn((48, 48), |(i, _)| 4.0 + 6.0 * (0.5 + 0.5 * (PI * i as f64 / 47.0).cos()));
    let lens = LensVolume::from_thickness(&t, setup.depth, setup.v_min, setup.v_max);
    let cfg = SolverConfig::default();
    let (fab, printed) = fabricate_and_simulate(Hologram::Lens(&lens), &src, &m, &setup, &cfg).unwrap();
    let direct = propagate_field(
        &src.plane(),
        &embed_lens(&m, &printed, &setup.material, setup.z_offset, 0.9).unwrap(),
        &cfg,
    )
    .unwrap();
    assert_eq!(fab.values, direct.values);
}
