use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};
use toah_core::analysis::{
    bioheat_simulate, cross_domain_psnr, evaluate_field, material_cases, sweep_material, sweep_perturbation, FocalReport,
    SweepSetup,
};
use toah_core::baselines::{fabricate_and_simulate, optimize_poah, time_reversal, Hologram, PhaseMap, PoahProblem};
use toah_core::dhla::LensVolume;
use toah_core::io::{self, SCHEMA_VERSION};
use toah_core::medium::{embed_lens, AcousticMedium, GridSpec, MaterialProperties, DEFAULT_EMBED_THRESHOLD};
use toah_core::optim::{
    gradcheck, initial_design, loss_terms, optimize_toah_with, LossReport, LossWeights, TargetSpec, ToahProblem,
};
use toah_core::solver::{apply_phase_delays, backproject as bp, propagate_field, ComplexField};

use crate::config::{self, MaterialConfig, Method, RunConfig};
use crate::scenario::Scenario;
use crate::{BackprojectArgs, Cli, CliError, Command, EvaluateArgs, GlobalArgs, GradcheckArgs, Precision, SweepArgs, SweepAxis};

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if g.precision == Precision::F32 && !matches!(cli.command, Command::Gradcheck(_)) {
        log::info!("computing in double precision; exported arrays are single precision either way");
    }
    match &cli.command {
        Command::Design => design(load_config(g)?, &out_dir(g)?).map(|_| ()),
        Command::Evaluate(a) => evaluate(g, a),
        Command::Sweep(a) => sweep(g, a),
        Command::Backproject(a) => backproject(g, a),
        Command::Gradcheck(a) => gradcheck_cmd(g, a),
    }
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let mut cfg = config::load(path)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(g: &GlobalArgs) -> Result<PathBuf, CliError> {
    let out = g.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
    std::fs::create_dir_all(&out)?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(toah_core::Error::from)? + "\n";
    std::fs::write(path, text)?;
    Ok(())
}

fn write_snapshot(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::write(out.join("resolved_config.json"), cfg.to_json())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalSummary {
    pub peak_rise_c: f64,
    /// Over voxels classified as bone; absent without bone.
    pub peak_rise_bone_c: Option<f64>,
    pub peak_rise_target_c: f64,
}

/// Contents of a design's `report.json`: the fabrication-domain metrics at
/// top level, the optimization-domain metrics nested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub method: Method,
    /// Metrics cover planes from here on (past the lens).
    pub evaluation_start_plane: usize,
    pub loss_initial: f64,
    pub loss_final: f64,
    #[serde(flatten)]
    pub fabrication: FocalReport,
    pub optimization: FocalReport,
    pub thermal: Option<ThermalSummary>,
}

pub struct DesignOutcome {
    pub report: DesignReport,
    pub field_opt: ComplexField,
    pub field_fab: ComplexField,
    pub lens: LensVolume,
    pub loss: LossReport,
    pub thermal: Option<Array3<f64>>,
}

/// Runs the configured method end to end and writes every artifact to `out`.
pub fn design(cfg: RunConfig, out: &Path) -> Result<DesignOutcome, CliError> {
    let sc = Scenario::new(cfg)?;
    let target = sc.target()?;
    let setup = sc.lens_setup()?;
    let start = setup.z_offset + setup.depth;
    let seeds = sc.seeds(&target, start)?;
    let g = sc.grid;
    std::fs::create_dir_all(out)?;
    write_snapshot(out, &sc.cfg)?;
    let hash = Some(sc.hash.as_str());
    let optim = sc.cfg.optim_config();
    let weights = optim.map_or_else(LossWeights::default, |o| o.weights());
    let src = sc.source.plane();

    let (field_opt, field_fab, lens, loss) = match sc.cfg.method {
        Method::Toah => {
            let ocfg = optim.expect("validated: optim present");
            let problem = ToahProblem {
                source: &src,
                base: &sc.medium,
                target: &target,
                setup,
                solver: sc.solver,
                weights,
            };
            let every = sc.cfg.optim.as_ref().map_or(0, |o| o.checkpoint_every);
            let ckpt = out.join("checkpoints");
            if every > 0 {
                std::fs::create_dir_all(&ckpt)?;
            }
            let init = initial_design(&setup, (g.nx, g.ny), sc.cfg.seed);
            let outcome = optimize_toah_with(&problem, init, &ocfg, |it, d, t| {
                log::info!("iteration {it}: loss {:.6}", t.total);
                if every > 0 && (it + 1) % every == 0 {
                    io::write_map(&ckpt.join(format!("theta_{:05}.raw", it + 1)), &g, "theta", &d.theta, hash)?;
                }
                Ok(())
            })?;
            io::write_map(&out.join("theta.raw"), &g, "theta", &outcome.design.theta, hash)?;
            let n = ocfg.iterations;
            let p_opt = problem.field(&outcome.design, ocfg.beta_schedule.beta_at(n, n))?;
            let embedded = embed_lens(&sc.medium, &outcome.lens, &setup.material, setup.z_offset, DEFAULT_EMBED_THRESHOLD)?;
            let p_fab = propagate_field(&src, &embedded, &sc.solver)?;
            (p_opt, p_fab, outcome.lens, outcome.report)
        }
        Method::Poah => {
            let ocfg = optim.expect("validated: optim present");
            let problem = PoahProblem {
                source: &sc.source,
                medium: &sc.medium,
                target: &target,
                solver: sc.solver,
                weights,
            };
            let (phase, report) = optimize_poah(&problem, PhaseMap::zeros((g.nx, g.ny)), &ocfg)?;
            write_phase(out, &g, &phase, hash)?;
            let p_opt = problem.field(&phase.phi)?;
            let (p_fab, lens) = fabricate_and_simulate(Hologram::Phase(&phase), &sc.source, &sc.medium, &setup, &sc.solver)?;
            (p_opt, p_fab, lens, report)
        }
        Method::Tr => {
            let phase = time_reversal(&sc.source, &sc.medium, &target.focus_centers, &sc.solver)?;
            write_phase(out, &g, &phase, hash)?;
            let p_opt = propagate_field(&apply_phase_delays(&sc.source, &phase.phi)?, &sc.medium, &sc.solver)?;
            let mut report = LossReport::default();
            report.push(loss_terms(&p_opt.values, &target, &weights)?);
            let (p_fab, lens) = fabricate_and_simulate(Hologram::Phase(&phase), &sc.source, &sc.medium, &setup, &sc.solver)?;
            (p_opt, p_fab, lens, report)
        }
    };

    let opt_c = field_opt.crop_z(start, g.nz)?;
    let fab_c = field_fab.crop_z(start, g.nz)?;
    let mut fabrication = evaluate_field(&fab_c, &seeds, sc.cfg.threshold_db)?;
    fabrication.psnr_cross_domain = Some(cross_domain_psnr(&opt_c, &fab_c)?);
    let optimization = evaluate_field(&opt_c, &seeds, sc.cfg.threshold_db)?;

    let thermal = match sc.cfg.thermal_config() {
        None => None,
        Some(tcfg) => {
            let embedded = embed_lens(&sc.medium, &lens, &setup.material, setup.z_offset, DEFAULT_EMBED_THRESHOLD)?;
            let dt = bioheat_simulate(&field_fab, &embedded, &tcfg, &target.omega)?;
            io::write_volume(&out.join("thermal.raw"), &g, "temperature_rise", &dt, hash)?;
            let summary = summarize_thermal(&dt.view(), &embedded, tcfg.bone_density_threshold, &target);
            Some((dt, summary))
        }
    };

    io::write_field(&out.join("field_opt.raw"), &field_opt, hash)?;
    io::write_field(&out.join("field_fab.raw"), &field_fab, hash)?;
    io::write_plane(&out.join("exit_plane.raw"), &g, field_fab.plane(start), hash)?;
    io::write_plane_csv(&out.join("focal_plane.csv"), &field_fab, target.focus_centers[0][2])?;
    write_lens(out, &g, &lens, hash)?;
    io::write_loss_csv(&out.join("loss.csv"), &loss)?;

    let report = DesignReport {
        schema_version: SCHEMA_VERSION,
        config_hash: sc.hash.clone(),
        method: sc.cfg.method,
        evaluation_start_plane: start,
        loss_initial: loss.first().map_or(f64::NAN, |t| t.total),
        loss_final: loss.last().map_or(f64::NAN, |t| t.total),
        fabrication,
        optimization,
        thermal: thermal.as_ref().map(|(_, s)| s.clone()),
    };
    write_json(&out.join("report.json"), &report)?;
    write_focus_csv(&out.join("report.csv"), &report.fabrication)?;
    Ok(DesignOutcome {
        report,
        field_opt,
        field_fab,
        lens,
        loss,
        thermal: thermal.map(|(t, _)| t),
    })
}

fn summarize_thermal(
    dt: &ndarray::ArrayView3<'_, f64>,
    medium: &AcousticMedium,
    bone_threshold: f64,
    target: &TargetSpec,
) -> ThermalSummary {
    let peak = dt.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut bone: Option<f64> = None;
    Zip::from(dt).and(&medium.rho).for_each(|&t, &r| {
        if r > bone_threshold {
            bone = Some(bone.map_or(t, |b| b.max(t)));
        }
    });
    let in_target = target.omega.iter().map(|&v| dt[v]).fold(0.0f64, f64::max);
    ThermalSummary {
        peak_rise_c: peak,
        peak_rise_bone_c: bone,
        peak_rise_target_c: in_target,
    }
}

fn write_phase(out: &Path, g: &GridSpec, phase: &PhaseMap, hash: Option<&str>) -> Result<(), CliError> {
    io::write_map(&out.join("phase.raw"), g, "phase", &phase.phi, hash)?;
    io::write_matrix_csv(&out.join("phase.csv"), &phase.phi)?;
    io::write_pgm16(&out.join("phase.pgm"), &phase.phi, 0.0, std::f64::consts::TAU)?;
    Ok(())
}

fn write_lens(out: &Path, g: &GridSpec, lens: &LensVolume, hash: Option<&str>) -> Result<(), CliError> {
    io::write_stl(&out.join("lens.stl"), lens, g.dx, g.dy, g.dz)?;
    io::write_thickness_csv(&out.join("thickness.csv"), lens, g.dz)?;
    let heights = io::column_heights(lens).mapv(|n| n as f64);
    io::write_pgm16(&out.join("thickness.pgm"), &heights, lens.v_min, lens.v_max.max(lens.v_min + 1.0))?;
    io::write_volume(&out.join("lens.raw"), &g.with_nz(lens.depth()), "occupancy", &lens.occupancy, hash)?;
    Ok(())
}

/// One row per focus.
pub fn write_focus_csv(path: &Path, r: &FocalReport) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "focus,peak_pressure,peak_i,peak_j,peak_k,fwhm_lateral_x_m,fwhm_lateral_y_m,fwhm_axial_m,n_voxels,volume_m3"
    )?;
    for (n, f) in r.foci.iter().enumerate() {
        writeln!(
            w,
            "{n},{},{},{},{},{},{},{},{},{}",
            f.peak_pressure,
            f.peak_index[0],
            f.peak_index[1],
            f.peak_index[2],
            f.fwhm_lateral_x,
            f.fwhm_lateral_y,
            f.fwhm_axial,
            f.n_voxels,
            f.volume_m3
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub config_hash: Option<String>,
    pub evaluation_start_plane: usize,
    #[serde(flatten)]
    pub metrics: FocalReport,
    pub thermal: Option<ThermalSummary>,
}

fn evaluate(g: &GlobalArgs, a: &EvaluateArgs) -> Result<(), CliError> {
    let out = out_dir(g)?;
    let cfg = match &g.config {
        Some(_) => Some(load_config(g)?),
        None => None,
    };
    if let Some(cfg) = &cfg {
        write_snapshot(&out, cfg)?;
    }
    let report = match (&a.lens, a.fields.as_slice()) {
        (Some(lens_path), []) => {
            let cfg = cfg.ok_or_else(|| CliError::Usage("--lens needs --config".into()))?;
            evaluate_lens(cfg, lens_path, &out)?
        }
        (None, [one]) => evaluate_fields(cfg.as_ref(), one, None, a.crop_start)?,
        (None, [reference, other]) => evaluate_fields(cfg.as_ref(), reference, Some(other), a.crop_start)?,
        (Some(_), _) => return Err(CliError::Usage("give either --lens or --field, not both".into())),
        (None, []) => return Err(CliError::Usage("nothing to evaluate: give --field or --lens".into())),
        (None, _) => return Err(CliError::Usage("at most two --field files".into())),
    };
    write_json(&out.join("report.json"), &report)?;
    write_focus_csv(&out.join("report.csv"), &report.metrics)
}

fn evaluate_fields(
    cfg: Option<&RunConfig>,
    reference: &Path,
    other: Option<&PathBuf>,
    start: usize,
) -> Result<EvaluationReport, CliError> {
    let h_ref = io::read_header(reference)?;
    let p_ref = io::read_field(reference)?;
    let p_other = match other {
        None => None,
        Some(path) => {
            let h = io::read_header(path)?;
            if !h_ref.compatible(&h) {
                return Err(CliError::Usage(format!(
                    "header mismatch: {} has dims {:?} spacing {:?} at {} Hz, {} has dims {:?} spacing {:?} at {} Hz",
                    reference.display(),
                    h_ref.dims,
                    h_ref.spacing_m,
                    h_ref.frequency_hz,
                    path.display(),
                    h.dims,
                    h.spacing_m,
                    h.frequency_hz
                )));
            }
            Some(io::read_field(path)?)
        }
    };
    let nz = p_ref.grid.nz;
    let ref_c = p_ref.crop_z(start, nz)?;
    let seeds = match cfg.and_then(|c| c.target.as_ref()) {
        Some(_) => {
            let cfg = cfg.expect("checked above");
            let grid = cfg.grid_spec();
            if [grid.nx, grid.ny, grid.nz] != h_ref.dims {
                return Err(CliError::Usage(format!(
                    "header mismatch: field dims {:?}, config grid {:?}",
                    h_ref.dims,
                    [grid.nx, grid.ny, grid.nz]
                )));
            }
            let t = config_target(cfg, &grid)?;
            Scenario::seeds_for(&t, start)?
        }
        None => vec![ref_c.argmax()],
    };
    let (metrics, psnr) = match &p_other {
        None => (evaluate_field(&ref_c, &seeds, threshold(cfg))?, None),
        Some(p) => {
            let c = p.crop_z(start, nz)?;
            (evaluate_field(&c, &seeds, threshold(cfg))?, Some(cross_domain_psnr(&ref_c, &c)?))
        }
    };
    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.map(RunConfig::hash),
        evaluation_start_plane: start,
        metrics: FocalReport {
            psnr_cross_domain: psnr,
            ..metrics
        },
        thermal: None,
    })
}

fn threshold(cfg: Option<&RunConfig>) -> f64 {
    cfg.map_or(toah_core::analysis::DEFAULT_THRESHOLD_DB, |c| c.threshold_db)
}

fn config_target(cfg: &RunConfig, grid: &GridSpec) -> Result<TargetSpec, CliError> {
    let t = cfg.target.as_ref().ok_or_else(|| CliError::config("target", "required"))?;
    TargetSpec::from_spheres(grid, &t.foci_m, &t.radii_m).map_err(|e| CliError::config("target", e.to_string()))
}

fn evaluate_lens(cfg: RunConfig, lens_path: &Path, out: &Path) -> Result<EvaluationReport, CliError> {
    let sc = Scenario::new(cfg)?;
    let target = sc.target()?;
    let setup = sc.lens_setup()?;
    let start = setup.z_offset + setup.depth;
    let seeds = sc.seeds(&target, start)?;
    let lens = sc.lens_from_thickness(&io::read_matrix_csv(lens_path)?)?;
    let embedded = embed_lens(&sc.medium, &lens, &setup.material, setup.z_offset, DEFAULT_EMBED_THRESHOLD)?;
    let p = propagate_field(&sc.source.plane(), &embedded, &sc.solver)?;
    let hash = Some(sc.hash.as_str());
    io::write_field(&out.join("field.raw"), &p, hash)?;
    let metrics = evaluate_field(&p.crop_z(start, sc.grid.nz)?, &seeds, sc.cfg.threshold_db)?;
    let thermal = match sc.cfg.thermal_config() {
        None => None,
        Some(tcfg) => {
            let dt = bioheat_simulate(&p, &embedded, &tcfg, &target.omega)?;
            io::write_volume(&out.join("thermal.raw"), &sc.grid, "temperature_rise", &dt, hash)?;
            Some(summarize_thermal(&dt.view(), &embedded, tcfg.bone_density_threshold, &target))
        }
    };
    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION,
        config_hash: Some(sc.hash.clone()),
        evaluation_start_plane: start,
        metrics,
        thermal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCase {
    pub index: usize,
    pub material: MaterialConfig,
    pub sigma_m: f64,
    pub seed: Option<u64>,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub axis: String,
    pub lens: PathBuf,
    pub cases: Vec<SweepCase>,
}

fn sweep(g: &GlobalArgs, a: &SweepArgs) -> Result<(), CliError> {
    let out = out_dir(g)?;
    let sc = Scenario::new(load_config(g)?)?;
    write_snapshot(&out, &sc.cfg)?;
    let target = sc.target()?;
    let setup = sc.lens_setup()?;
    let start = setup.z_offset + setup.depth;
    let seeds = sc.seeds(&target, start)?;
    // SweepSetup wants full-grid seeds and crops itself
    let full_seeds: Vec<[usize; 3]> = seeds.iter().map(|s| [s[0], s[1], s[2] + start]).collect();
    let lens = sc.lens_from_thickness(&io::read_matrix_csv(&a.lens)?)?;
    let src = sc.source.plane();
    let ss = SweepSetup {
        lens: &lens,
        source: &src,
        medium: &sc.medium,
        z_offset: setup.z_offset,
        solver: sc.solver,
        seeds: &full_seeds,
        threshold_db: sc.cfg.threshold_db,
        crop_start: start,
    };
    let (axis, cases, reports): (&str, Vec<SweepCase>, Vec<FocalReport>) = match a.axis {
        SweepAxis::Material => {
            let mats: Vec<MaterialProperties> = if sc.cfg.sweep.materials.is_empty() {
                material_cases(&setup.material)
            } else {
                sc.cfg.sweep.materials.iter().map(MaterialConfig::properties).collect()
            };
            let reports = sweep_material(&ss, &mats)?;
            let cases = mats
                .iter()
                .enumerate()
                .map(|(n, m)| SweepCase {
                    index: n,
                    material: (*m).into(),
                    sigma_m: 0.0,
                    seed: None,
                    report: format!("case_{n:03}.json"),
                })
                .collect();
            ("material", cases, reports)
        }
        SweepAxis::Perturbation => {
            let n = a.n.unwrap_or(sc.cfg.sweep.realizations);
            let sigma = a.sigma_um.map_or(sc.cfg.sweep.sigma_m, |s| s * 1e-6);
            if sigma < 0.0 {
                return Err(CliError::Usage("--sigma-um must be non-negative".into()));
            }
            let reports = sweep_perturbation(&ss, &setup.material, sigma, n, sc.cfg.seed)?;
            let cases = (0..n)
                .map(|k| SweepCase {
                    index: k,
                    material: setup.material.into(),
                    sigma_m: sigma,
                    seed: Some(sc.cfg.seed + k as u64),
                    report: format!("case_{k:03}.json"),
                })
                .collect();
            ("perturbation", cases, reports)
        }
    };
    for (c, r) in cases.iter().zip(&reports) {
        write_json(&out.join(&c.report), r)?;
    }
    write_sweep_csv(&out.join("sweep.csv"), &cases, &reports, full_seeds.len())?;
    write_json(
        &out.join("manifest.json"),
        &SweepManifest {
            schema_version: SCHEMA_VERSION,
            config_hash: sc.hash.clone(),
            axis: axis.into(),
            lens: a.lens.clone(),
            cases,
        },
    )
}

fn write_sweep_csv(path: &Path, cases: &[SweepCase], reports: &[FocalReport], n_foci: usize) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut head = vec!["sound_speed_m_s".to_string(), "density_kg_m3".into(), "sigma_m".into()];
    head.extend((0..n_foci).map(|n| format!("peak_pressure_{n}")));
    head.extend(["leakage_ratio".into(), "uniformity".into(), "n_components".into()]);
    writeln!(w, "{}", head.join(","))?;
    for (c, r) in cases.iter().zip(reports) {
        let mut row = vec![
            c.material.sound_speed_m_s.to_string(),
            c.material.density_kg_m3.to_string(),
            c.sigma_m.to_string(),
        ];
        row.extend(r.foci.iter().map(|f| f.peak_pressure.to_string()));
        row.extend([r.leakage_ratio.map(|v| v.to_string()).unwrap_or_default(), r.uniformity.to_string(), r.n_components.to_string()]);
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackprojectReport {
    pub schema_version: u32,
    pub distances_m: Vec<f64>,
    pub peak_index: [usize; 3],
    pub peak_distance_m: f64,
}

fn backproject(g: &GlobalArgs, a: &BackprojectArgs) -> Result<(), CliError> {
    if a.distances_mm.is_empty() {
        return Err(CliError::Usage("--distances-mm: empty list".into()));
    }
    let out = out_dir(g)?;
    let (h, plane) = io::read_plane(&a.plane)?;
    let distances: Vec<f64> = a.distances_mm.iter().map(|d| d * 1e-3).collect();
    let dz = h.spacing_m[2];
    let depth = match a.domain_mm {
        Some(d) => d * 1e-3,
        None => distances.iter().fold(0.0f64, |m, d| m.max(d.abs())),
    };
    let grid = GridSpec {
        nx: h.dims[0],
        ny: h.dims[1],
        nz: ((depth / dz).ceil() as usize).max(4),
        dx: h.spacing_m[0],
        dy: h.spacing_m[1],
        dz,
        frequency: h.frequency_hz,
        c_ref: h.reference_speed_m_s,
    };
    grid.validate()?;
    if distances.iter().any(|d| d.abs() > depth * (1.0 + 1e-9)) {
        return Err(CliError::Usage(format!("a distance exceeds the {} mm domain", depth * 1e3)));
    }
    let volume = bp(&plane, &grid, &distances)?;
    io::write_field(&out.join("volume.raw"), &volume, h.config_hash.as_deref())?;
    let peak = volume.argmax();
    let report = BackprojectReport {
        schema_version: SCHEMA_VERSION,
        distances_m: distances.clone(),
        peak_index: peak,
        peak_distance_m: distances[peak[2]],
    };
    write_json(&out.join("backproject.json"), &report)?;
    println!("{}", serde_json::to_string(&report).map_err(toah_core::Error::from)?);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOutput {
    pub method: Method,
    pub max_rel_error: f64,
    pub coords: usize,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn gradcheck_cmd(g: &GlobalArgs, a: &GradcheckArgs) -> Result<(), CliError> {
    if g.precision == Precision::F32 {
        return Err(CliError::Usage(
            "gradcheck needs --precision f64: finite differences are meaningless in single precision".into(),
        ));
    }
    let sc = Scenario::new(load_config(g)?)?;
    let target = sc.target()?;
    let weights = sc.cfg.optim_config().map_or_else(LossWeights::default, |o| o.weights());
    let seed = sc.cfg.seed;
    let report = match sc.cfg.method {
        Method::Toah => {
            let setup = sc.lens_setup()?;
            let src = sc.source.plane();
            let problem = ToahProblem {
                source: &src,
                base: &sc.medium,
                target: &target,
                setup,
                solver: sc.solver,
                weights,
            };
            let design = initial_design(&setup, (sc.grid.nx, sc.grid.ny), seed);
            let (_, grad) = problem.loss_and_gradient(&design, a.beta)?;
            let f = |theta: &Array2<f64>| {
                let d = toah_core::dhla::DesignField {
                    theta: theta.clone(),
                    ..design.clone()
                };
                problem.loss(&d, a.beta).map(|t| t.total)
            };
            gradcheck(f, &design.theta, &grad, a.step, a.coords, seed)?
        }
        Method::Poah => {
            let problem = PoahProblem {
                source: &sc.source,
                medium: &sc.medium,
                target: &target,
                solver: sc.solver,
                weights,
            };
            let phi = PhaseMap::zeros((sc.grid.nx, sc.grid.ny)).phi;
            let (_, grad) = problem.loss_and_gradient(&phi)?;
            let f = |p: &Array2<f64>| problem.loss(p).map(|t| t.total);
            gradcheck(f, &phi, &grad, a.step, a.coords, seed)?
        }
        Method::Tr => return Err(CliError::config("method", "time reversal has no gradient to check")),
    };
    let output = GradcheckOutput {
        method: sc.cfg.method,
        max_rel_error: report.max_rel_error,
        coords: a.coords,
        step: a.step,
        tolerance: a.tolerance,
        passed: report.max_rel_error <= a.tolerance,
    };
    println!("{}", serde_json::to_string(&output).map_err(toah_core::Error::from)?);
    if let Some(out) = &g.out {
        std::fs::create_dir_all(out)?;
        write_json(&out.join("gradcheck.json"), &output)?;
    }
    if !output.passed {
        return Err(CliError::Numeric(format!(
            "gradient check failed: relative error {:.3e} above {:.1e}",
            report.max_rel_error, a.tolerance
        )));
    }
    Ok(())
}
