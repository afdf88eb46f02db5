use ndarray::{s, Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toah_core::medium::{make_homogeneous, AcousticMedium, GridSpec, MaterialProperties, SourceSpec};
use toah_core::solver::{
    apply_phase_delays, backproject, march_backward, propagate, propagate_adjoint,
    propagate_field, EvanescentMode, SolverConfig,
};

const C0: f64 = 1500.0;

fn grid(nx: usize, nz: usize, d: f64) -> GridSpec {
    GridSpec::new((nx, nx, nz), d, 2e6, C0).unwrap()
}

fn cfg(order: usize) -> SolverConfig {
    SolverConfig {
        reflection_order: order,
        ..SolverConfig::default()
    }
}

fn random_medium(g: GridSpec, rng: &mut ChaCha8Rng) -> AcousticMedium {
    let mut m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    for k in 2..g.nz - 2 {
        for i in 0..g.nx {
            for j in 0..g.ny {
                m.c[[i, j, k]] = rng.random_range(1400.0..2600.0);
                m.rho[[i, j, k]] = rng.random_range(1000.0..1900.0);
                m.att[[i, j, k]] = rng.random_range(0.5..5.0);
            }
        }
    }
    m
}

fn random_plane(nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
    Array2::from_shape_fn((nx, ny), |_| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

fn inner(a: &Array3<Complex64>, b: &Array3<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

#[test]
fn plane_wave_in_water_has_unit_amplitude() {
    let g = grid(16, 24, 125e-6);
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::plane_wave(&g, 1.0).plane();
    for order in [0, 4] {
        for mode in [EvanescentMode::Decay, EvanescentMode::Truncate] {
            let c = SolverConfig {
                reflection_order: order,
                evanescent_mode: mode,
                ..SolverConfig::default()
            };
            let (p, _) = propagate(&src, &m, &c).unwrap();
            for v in p.values.iter() {
                assert!((v.norm() - 1.0).abs() < 1e-12, "{}", v.norm());
            }
        }
    }
}

#[test]
fn form_clear_slab_attenuation_and_transmission() {
    // 80 voxels of 125 µm = 1 cm of resin between water layers.
    let g = grid(8, 100, 125e-6);
    let mut m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let fc = MaterialProperties::FORM_CLEAR;
    for k in 10..90 {
        for i in 0..8 {
            for j in 0..8 {
                m.set_voxel([i, j, k], &fc);
            }
        }
    }
    let src = SourceSpec::plane_wave(&g, 1.0).plane();
    let p = propagate_field(&src, &m, &cfg(0)).unwrap();
    let db = 2.922 * 2f64.powf(1.044);
    let loss = 10f64.powf(-db / 20.0);
    assert!((db - 6.02).abs() < 0.01);
    assert!((loss - 0.500).abs() < 2e-3);
    let (zw, zl) = (MaterialProperties::WATER.impedance(), fc.impedance());
    let expected = loss * 2.0 * zl / (zw + zl) * 2.0 * zw / (zw + zl);
    let got = p.values[[3, 3, 95]].norm();
    assert!((got - expected).abs() < 1e-9 * expected, "{got} vs {expected}");
}

#[test]
fn phase_focus_matches_rayleigh_sommerfeld_peak() {
    let g = grid(64, 96, 125e-6);
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::piston(&g, 6e-3, 1.0).unwrap();
    let f = 6e-3;
    let k0 = g.k0();
    let phase = Array2::from_shape_fn((64, 64), |(i, j)| {
        let r2 = g.x_at(i).powi(2) + g.y_at(j).powi(2);
        -k0 * ((r2 + f * f).sqrt() - f)
    });
    let plane = apply_phase_delays(&src, &phase).unwrap();
    let p = propagate_field(&plane, &m, &cfg(0)).unwrap();
    let (cx, cy) = g.center_index();
    let axis: Vec<f64> = (0..g.nz).map(|k| p.values[[cx, cy, k]].norm()).collect();
    let k_sim = (0..g.nz).max_by(|&a, &b| axis[a].total_cmp(&axis[b])).unwrap();

    // First Rayleigh–Sommerfeld integral over the aperture samples.
    let rs = |z: f64| -> f64 {
        let mut acc = Complex64::default();
        for ((i, j), v) in plane.indexed_iter() {
            if v.norm() == 0.0 {
                continue;
            }
            let r = (g.x_at(i).powi(2) + g.y_at(j).powi(2) + z * z).sqrt();
            let kern = Complex64::new(1.0, -1.0 / (k0 * r)) * Complex64::from_polar(z / (r * r), k0 * r);
            acc += v * kern;
        }
        acc.norm()
    };
    let k_rs = (1..g.nz)
        .max_by(|&a, &b| rs(g.z_at(a)).total_cmp(&rs(g.z_at(b))))
        .unwrap();
    assert!(k_sim.abs_diff(k_rs) <= 1, "sim {k_sim} vs oracle {k_rs}");
}

#[test]
fn slice_energy_is_conserved_with_truncation() {
    let g = grid(32, 20, 125e-6);
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let src = random_plane(32, 32, &mut rng);
    let c = SolverConfig {
        evanescent_mode: EvanescentMode::Truncate,
        ..cfg(0)
    };
    let p = propagate_field(&src, &m, &c).unwrap();
    let e: Vec<f64> = (1..g.nz)
        .map(|k| p.plane(k).iter().map(|v| v.norm_sqr()).sum())
        .collect();
    for v in &e {
        assert!((v - e[0]).abs() < 1e-9 * e[0]);
    }
}

#[test]
fn reciprocity_in_matched_impedance_medium() {
    let g = grid(24, 20, 125e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let z = MaterialProperties::WATER.impedance();
    for v in m.c.iter_mut() {
        *v = rng.random_range(1450.0..1700.0);
    }
    m.rho = m.c.mapv(|c| z / c);
    let c = cfg(0);
    let (a, b, kb) = ((8, 10), (15, 13), 17);
    let mut src = Array2::zeros((24, 24));
    src[a] = Complex64::new(1.0, 0.0);
    let fwd = propagate_field(&src, &m, &c).unwrap();
    let mut pt = Array2::zeros((24, 24));
    pt[b] = Complex64::new(1.0, 0.0);
    let bwd = march_backward(&m, &c, kb, &pt).unwrap();
    let x = fwd.values[[b.0, b.1, kb]];
    let y = bwd.values[[a.0, a.1, 0]];
    assert!((x - y).norm() < 1e-6 * x.norm(), "{x} vs {y}");
}

#[test]
fn reflection_orders_converge_geometrically() {
    let g = grid(8, 40, 125e-6);
    let mut m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    for k in 12..28 {
        for i in 0..8 {
            for j in 0..8 {
                m.set_voxel([i, j, k], &MaterialProperties::FORM_CLEAR);
            }
        }
    }
    let (zw, zl) = (MaterialProperties::WATER.impedance(), MaterialProperties::FORM_CLEAR.impedance());
    let r = ((zl - zw) / (zl + zw)).abs();
    let src = SourceSpec::plane_wave(&g, 1.0).plane();
    let fields: Vec<_> = (0..=5)
        .map(|o| propagate_field(&src, &m, &cfg(o)).unwrap())
        .collect();
    let p0 = fields[0].max_amplitude();
    for o in 0..5 {
        let diff = (&fields[o + 1].values - &fields[o].values)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.norm()));
        assert!(diff > 0.0);
        assert!(diff < r.powi(o as i32 + 1) * p0, "order {o}: {diff}");
    }
}

#[test]
fn refining_dz_keeps_the_focal_peak() {
    let peak = |nz: usize, dz: f64| -> f64 {
        let g = GridSpec {
            dz,
            ..grid(48, nz, 125e-6)
        };
        let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
        let src = SourceSpec::piston(&g, 5e-3, 1.0).unwrap();
        let k0 = g.k0();
        let phase = Array2::from_shape_fn((48, 48), |(i, j)| {
            -k0 * (g.x_at(i).powi(2) + g.y_at(j).powi(2) + 16e-6).sqrt()
        });
        let p = propagate_field(&apply_phase_delays(&src, &phase).unwrap(), &m, &cfg(0)).unwrap();
        let (cx, cy) = g.center_index();
        let k = (0..nz)
            .max_by(|&a, &b| p.values[[cx, cy, a]].norm().total_cmp(&p.values[[cx, cy, b]].norm()))
            .unwrap();
        g.z_at(k)
    };
    let coarse = peak(64, 125e-6);
    let fine = peak(128, 62.5e-6);
    assert!((coarse - fine).abs() < 62.5e-6 * 1.0001, "{coarse} vs {fine}");
}

#[test]
fn source_adjoint_passes_dot_product_test() {
    let g = grid(12, 16, 125e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = random_medium(g, &mut rng);
    let src = random_plane(12, 12, &mut rng);
    let (_, cache) = propagate(&src, &m, &cfg(3)).unwrap();
    let upstream = Array3::from_shape_fn(g.shape(), |_| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let grad = propagate_adjoint(&cache, &upstream).unwrap();
    let ds = random_plane(12, 12, &mut rng);
    let dp = propagate_field(&ds, &m, &cfg(3)).unwrap();
    let lhs = inner(&upstream, &dp.values);
    let rhs: f64 = grad.source.iter().zip(ds.iter()).map(|(a, b)| (a.conj() * b).re).sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs(), "{lhs} vs {rhs}");
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let g = grid(8, 10, 125e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random_medium(g, &mut rng);
    let (_, cache) = propagate(&SourceSpec::plane_wave(&g, 1.0).plane(), &m, &cfg(2)).unwrap();
    let grad = propagate_adjoint(&cache, &Array3::zeros(g.shape())).unwrap();
    assert!(grad.properties.c.iter().all(|&v| v == 0.0));
    assert!(grad.properties.rho.iter().all(|&v| v == 0.0));
    assert!(grad.properties.att.iter().all(|&v| v == 0.0));
}

#[test]
fn property_gradients_match_finite_differences() {
    let g = grid(10, 14, 125e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = random_medium(g, &mut rng);
    let src = random_plane(10, 10, &mut rng);
    let c = SolverConfig {
        boundary_cells: 2,
        ..cfg(3)
    };
    let weights = Array3::from_shape_fn(g.shape(), |_| rng.random_range(0.0..1.0));
    let loss = |m: &AcousticMedium| -> f64 {
        let p = propagate_field(&src, m, &c).unwrap();
        p.values.iter().zip(weights.iter()).map(|(v, w)| w * v.norm_sqr()).sum()
    };
    let (p, cache) = propagate(&src, &m, &c).unwrap();
    let upstream = ndarray::Zip::from(&p.values)
        .and(&weights)
        .map_collect(|&v, &w| v * (2.0 * w));
    let grad = propagate_adjoint(&cache, &upstream).unwrap().properties;
    for _ in 0..12 {
        let idx = [
            rng.random_range(0..10),
            rng.random_range(0..10),
            rng.random_range(2..12),
        ];
        for (which, h) in [(0, 1e-2), (1, 1e-2), (2, 1e-3)] {
            let mut plus = m.clone();
            let mut minus = m.clone();
            let (a, b, analytic) = match which {
                0 => (&mut plus.c, &mut minus.c, grad.c[idx]),
                1 => (&mut plus.rho, &mut minus.rho, grad.rho[idx]),
                _ => (&mut plus.att, &mut minus.att, grad.att[idx]),
            };
            a[idx] += h;
            b[idx] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let peak = [&grad.c, &grad.rho, &grad.att][which]
                .iter()
                .fold(0.0f64, |x, v| x.max(v.abs()));
            let scale = fd.abs().max(1e-2 * peak);
            assert!(
                (fd - analytic).abs() < 1e-5 * scale,
                "param {which} at {idx:?}: fd {fd} vs adjoint {analytic}"
            );
        }
    }
}

#[test]
fn stale_cache_is_detected() {
    let g = grid(8, 10, 125e-6);
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let (_, cache) = propagate(&SourceSpec::plane_wave(&g, 1.0).plane(), &m, &cfg(0)).unwrap();
    assert!(cache.check_medium(&m).is_ok());
    let mut other = m.clone();
    other.c[[1, 1, 1]] = 1600.0;
    assert!(cache.check_medium(&other).is_err());
    assert!(propagate_adjoint(&cache, &Array3::zeros((8, 8, 9))).is_err());
}

#[test]
fn nan_medium_is_rejected() {
    let g = grid(8, 10, 125e-6);
    let mut m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    m.c[[0, 0, 3]] = f64::NAN;
    assert!(propagate(&SourceSpec::plane_wave(&g, 1.0).plane(), &m, &cfg(0)).is_err());
}

#[test]
fn backproject_recovers_the_source_plane() {
    let g = grid(32, 24, 125e-6);
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let src = random_plane(32, 32, &mut rng);
    let c = SolverConfig {
        evanescent_mode: EvanescentMode::Truncate,
        ..cfg(0)
    };
    let p = propagate_field(&src, &m, &c).unwrap();
    let k = 20;
    let d = g.z_at(k);
    let back = backproject(&p.plane(k).to_owned(), &g, &[-d]).unwrap();
    // Reference: the source with its evanescent content removed.
    let reference = backproject(&src, &g, &[0.0]).unwrap();
    let mut prop_only = reference.plane(0).to_owned();
    {
        let once = propagate_field(&src, &m, &c).unwrap();
        let fwd = backproject(&once.plane(1).to_owned(), &g, &[-g.dz]).unwrap();
        prop_only.assign(&fwd.plane(0));
    }
    let num: f64 = back
        .plane(0)
        .iter()
        .zip(prop_only.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let den: f64 = prop_only.iter().map(|v| v.norm_sqr()).sum();
    assert!((num / den).sqrt() < 1e-6);
}

#[test]
fn backproject_zero_plane_and_range_errors() {
    let g = grid(16, 16, 125e-6);
    let z = backproject(&Array2::zeros((16, 16)), &g, &[-1e-3, 0.5e-3]).unwrap();
    assert_eq!(z.values.dim(), (16, 16, 2));
    assert!(z.values.iter().all(|v| v.norm() == 0.0));
    assert!(backproject(&Array2::zeros((16, 16)), &g, &[-1.0]).is_err());
    assert!(backproject(&Array2::zeros((16, 16)), &g, &[]).is_err());
    assert!(backproject(&Array2::zeros((8, 16)), &g, &[0.0]).is_err());
}

#[test]
fn backproject_finds_the_focal_depth() {
    let g = grid(48, 80, 125e-6);
    let m = make_homogeneous(g, &MaterialProperties::WATER).unwrap();
    let src = SourceSpec::piston(&g, 5e-3, 1.0).unwrap();
    let k0 = g.k0();
    let f = 5e-3;
    let phase = Array2::from_shape_fn((48, 48), |(i, j)| {
        -k0 * (g.x_at(i).powi(2) + g.y_at(j).powi(2) + f * f).sqrt()
    });
    let p = propagate_field(&apply_phase_delays(&src, &phase).unwrap(), &m, &cfg(0)).unwrap();
    let (cx, cy) = g.center_index();
    let kf = (0..80)
        .max_by(|&a, &b| p.values[[cx, cy, a]].norm().total_cmp(&p.values[[cx, cy, b]].norm()))
        .unwrap();
    let kmeas = 75;
    let dists: Vec<f64> = (0..=kmeas).map(|k| g.z_at(k) - g.z_at(kmeas)).collect();
    let back = backproject(&p.plane(kmeas).to_owned(), &g, &dists).unwrap();
    let kb = (0..dists.len())
        .max_by(|&a, &b| back.values[[cx, cy, a]].norm().total_cmp(&back.values[[cx, cy, b]].norm()))
        .unwrap();
    assert!(kb.abs_diff(kf) <= 1, "{kb} vs {kf}");
    let _ = s![.., .., 0];
}
