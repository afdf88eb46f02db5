//! Run configuration: JSON with `//` and `/* */` comments, physical
//! quantities keyed with an explicit unit suffix (`spacing_um`,
//! `frequency_mhz`, ...). Parsing resolves everything to SI units; the
//! resolved form serializes back to a config the parser accepts.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use toah_core::analysis::ThermalConfig;
use toah_core::dhla::{BetaSchedule, Smoothing};
use toah_core::medium::{GridSpec, HuCalibration, MaterialProperties};
use toah_core::optim::OptimConfig;
use toah_core::solver::{EvanescentMode, SolverConfig};

/// A config problem located by key path and, when it can be found, line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
    pub line: Option<usize>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Toah,
    Poah,
    Tr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing_m: f64,
    pub frequency_hz: f64,
    pub reference_speed_m_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    Piston { aperture_m: f64, amplitude: f64 },
    PlaneWave { amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialConfig {
    pub sound_speed_m_s: f64,
    pub density_kg_m3: f64,
    pub attenuation_db_mhz_cm: f64,
    pub attenuation_power: f64,
}

impl MaterialConfig {
    pub fn properties(&self) -> MaterialProperties {
        MaterialProperties {
            sound_speed: self.sound_speed_m_s,
            density: self.density_kg_m3,
            attenuation_coeff: self.attenuation_db_mhz_cm,
            attenuation_power: self.attenuation_power,
        }
    }
}

impl From<MaterialProperties> for MaterialConfig {
    fn from(m: MaterialProperties) -> Self {
        MaterialConfig {
            sound_speed_m_s: m.sound_speed,
            density_kg_m3: m.density,
            attenuation_db_mhz_cm: m.attenuation_coeff,
            attenuation_power: m.attenuation_power,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MediumConfig {
    Homogeneous {
        material: MaterialConfig,
    },
    Phantom {
        center_m: [f64; 3],
        inner_radius_m: f64,
        thickness_m: f64,
        bone: MaterialConfig,
    },
    Hu {
        path: PathBuf,
        calibration: HuCalibration,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    /// Focus centers `(x, y, z)`; `x`, `y` relative to the axis, `z` from the source plane.
    pub foci_m: Vec<[f64; 3]>,
    pub radii_m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensConfig {
    pub material: MaterialConfig,
    pub thickness_min_m: f64,
    pub thickness_max_m: f64,
    pub z_offset_voxels: usize,
    pub alpha: f64,
    pub smoothing_kernel_voxels: usize,
    pub smoothing_sigma_voxels: f64,
    pub fabrication_cutoff_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub lambda_energy: f64,
    pub lambda_balance: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Write the design field every this many iterations; 0 disables.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSection {
    pub reflection_order: usize,
    pub evanescent: EvanescentMode,
    pub angular_cutoff: f64,
    pub boundary_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalSection {
    pub k_bone_w_m_c: f64,
    pub specific_heat_bone_j_kg_c: f64,
    pub k_soft_w_m_c: f64,
    pub specific_heat_soft_j_kg_c: f64,
    pub bone_density_threshold_kg_m3: f64,
    pub heat_duration_s: f64,
    pub cool_duration_s: f64,
    pub n_cycles: usize,
    pub reference_pressure_pa: f64,
    pub perfusion_w_m3_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    /// Material cases for the material axis; empty means the standard
    /// sound-speed/density variations of the lens material.
    pub materials: Vec<MaterialConfig>,
    pub sigma_m: f64,
    pub realizations: usize,
}

/// Fully resolved run configuration in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub source: SourceConfig,
    pub medium: MediumConfig,
    pub target: Option<TargetConfig>,
    pub method: Method,
    pub lens: Option<LensConfig>,
    pub optim: Option<OptimSection>,
    pub solver: SolverSection,
    pub thermal: Option<ThermalSection>,
    pub sweep: SweepSection,
    pub threshold_db: f64,
    pub seed: u64,
}

impl RunConfig {
    pub fn grid_spec(&self) -> GridSpec {
        let g = &self.grid;
        GridSpec {
            nx: g.nx,
            ny: g.ny,
            nz: g.nz,
            dx: g.spacing_m,
            dy: g.spacing_m,
            dz: g.spacing_m,
            frequency: g.frequency_hz,
            c_ref: g.reference_speed_m_s,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            reflection_order: self.solver.reflection_order,
            evanescent_mode: self.solver.evanescent,
            angular_cutoff: self.solver.angular_cutoff,
            boundary_cells: self.solver.boundary_cells,
        }
    }

    pub fn optim_config(&self) -> Option<OptimConfig> {
        self.optim.as_ref().map(|o| OptimConfig {
            learning_rate: o.learning_rate,
            iterations: o.iterations,
            lambda_energy: o.lambda_energy,
            lambda_balance: o.lambda_balance,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            beta_schedule: BetaSchedule {
                beta_start: o.beta_start,
                beta_end: o.beta_end,
            },
        })
    }

    pub fn smoothing(&self) -> Option<Smoothing> {
        self.lens.as_ref().map(|l| Smoothing {
            kernel_size: l.smoothing_kernel_voxels,
            sigma: l.smoothing_sigma_voxels,
        })
    }

    pub fn thermal_config(&self) -> Option<ThermalConfig> {
        self.thermal.as_ref().map(|t| ThermalConfig {
            k_bone: t.k_bone_w_m_c,
            specific_heat_bone: t.specific_heat_bone_j_kg_c,
            k_soft: t.k_soft_w_m_c,
            specific_heat_soft: t.specific_heat_soft_j_kg_c,
            bone_density_threshold: t.bone_density_threshold_kg_m3,
            heat_duration: t.heat_duration_s,
            cool_duration: t.cool_duration_s,
            n_cycles: t.n_cycles,
            reference_pressure: t.reference_pressure_pa,
            perfusion: t.perfusion_w_m3_c,
            dt: None,
        })
    }

    /// Canonical JSON of the resolved config.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads and resolves a config file. Relative file references are taken
/// relative to the config's directory.
pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: String::new(),
        message: format!("cannot read {}: {e}", path.display()),
        line: None,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse(&text, base)
}

pub fn parse(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let mut stripped = String::new();
    json_comments::StripComments::new(text.as_bytes())
        .read_to_string(&mut stripped)
        .map_err(|e| ConfigError {
            path: String::new(),
            message: e.to_string(),
            line: None,
        })?;
    let root: Value = serde_json::from_str(&stripped).map_err(|e| ConfigError {
        path: String::new(),
        message: format!("invalid JSON: {e}"),
        line: Some(e.line()),
    })?;
    let obj = root.as_object().ok_or_else(|| ConfigError {
        path: String::new(),
        message: "top level must be an object".into(),
        line: None,
    })?;
    let cx = Ctx { text };
    let mut top = Section::new(&cx, String::new(), obj);
    let cfg = resolve(&cx, &mut top, base_dir)?;
    top.finish()?;
    validate(&cx, &cfg)?;
    Ok(cfg)
}

struct Ctx<'t> {
    text: &'t str,
}

impl Ctx<'_> {
    /// First line mentioning `"key"`, as a best-effort location.
    fn line_of(&self, key: &str) -> Option<usize> {
        let quoted = format!("\"{key}\"");
        self.text.lines().position(|l| l.contains(&quoted)).map(|n| n + 1)
    }

    fn error(&self, path: &str, message: impl Into<String>) -> ConfigError {
        let key = path.rsplit('.').next().unwrap_or(path);
        ConfigError {
            path: path.to_string(),
            message: message.into(),
            line: if key.is_empty() { None } else { self.line_of(key) },
        }
    }
}

const LENGTH_UNITS: [(&str, f64); 4] = [("m", 1.0), ("cm", 1e-2), ("mm", 1e-3), ("um", 1e-6)];
const FREQUENCY_UNITS: [(&str, f64); 3] = [("hz", 1.0), ("khz", 1e3), ("mhz", 1e6)];
const TIME_UNITS: [(&str, f64); 3] = [("s", 1.0), ("ms", 1e-3), ("us", 1e-6)];

struct Section<'a, 't> {
    cx: &'a Ctx<'t>,
    path: String,
    obj: &'a Map<String, Value>,
    used: BTreeSet<String>,
}

impl<'a, 't> Section<'a, 't> {
    fn new(cx: &'a Ctx<'t>, path: String, obj: &'a Map<String, Value>) -> Self {
        Section {
            cx,
            path,
            obj,
            used: BTreeSet::new(),
        }
    }

    fn key_path(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        self.cx.error(&self.key_path(key), message)
    }

    fn get(&mut self, key: &str) -> Option<&'a Value> {
        let v = self.obj.get(key)?;
        self.used.insert(key.to_string());
        (!v.is_null()).then_some(v)
    }

    fn sub(&mut self, key: &str) -> Result<Option<Section<'a, 't>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Object(o)) => Ok(Some(Section::new(self.cx, self.key_path(key), o))),
            Some(_) => Err(self.err(key, "expected an object")),
        }
    }

    fn required_sub(&mut self, key: &str) -> Result<Section<'a, 't>, ConfigError> {
        self.sub(key)?.ok_or_else(|| ConfigError {
            path: self.key_path(key),
            message: "required".into(),
            line: None,
        })
    }

    fn number(&mut self, key: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        match self.get(key) {
            Some(v) => v.as_f64().ok_or_else(|| self.err(key, "expected a number")),
            None => default.ok_or_else(|| self.err(key, "required")),
        }
    }

    fn count(&mut self, key: &str, default: Option<usize>) -> Result<usize, ConfigError> {
        match self.get(key) {
            Some(v) => v
                .as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| self.err(key, "expected a non-negative integer")),
            None => default.ok_or_else(|| self.err(key, "required")),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<&'a str>, ConfigError> {
        match self.get(key) {
            Some(v) => v.as_str().map(Some).ok_or_else(|| self.err(key, "expected a string")),
            None => Ok(None),
        }
    }

    /// `base_<unit>` for one of `units`, converted to SI.
    fn quantity(&mut self, base: &str, units: &[(&str, f64)], default: Option<f64>) -> Result<f64, ConfigError> {
        let present: Vec<(String, f64)> = units
            .iter()
            .map(|(u, s)| (format!("{base}_{u}"), *s))
            .filter(|(k, _)| self.obj.contains_key(k))
            .collect();
        match present.as_slice() {
            [] => {
                let names: Vec<String> = units.iter().map(|(u, _)| format!("{base}_{u}")).collect();
                if self.obj.contains_key(base) {
                    return Err(self.err(base, format!("needs a unit suffix, one of {}", names.join(", "))));
                }
                default.ok_or_else(|| self.err(base, format!("required (as one of {})", names.join(", "))))
            }
            [(k, s)] => Ok(self.number(k, None)? * s),
            _ => Err(self.err(&present[1].0, format!("given more than once with different units ({})", present[0].0))),
        }
    }

    fn length(&mut self, base: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        self.quantity(base, &LENGTH_UNITS, default)
    }

    fn point(&mut self, base: &str) -> Result<[f64; 3], ConfigError> {
        let v = self.lengths(base)?;
        <[f64; 3]>::try_from(v.as_slice()).map_err(|_| self.err(base, "expected three coordinates"))
    }

    /// A list of lengths (or of length triples, flattened) under `base_<unit>`.
    fn lengths(&mut self, base: &str) -> Result<Vec<f64>, ConfigError> {
        let units: Vec<(String, f64)> = LENGTH_UNITS
            .iter()
            .map(|(u, s)| (format!("{base}_{u}"), *s))
            .filter(|(k, _)| self.obj.contains_key(k))
            .collect();
        let (key, scale) = match units.as_slice() {
            [] => return Err(self.err(base, "required")),
            [one] => one.clone(),
            _ => return Err(self.err(&units[1].0, "given more than once with different units")),
        };
        let v = self.get(&key).ok_or_else(|| self.err(&key, "required"))?;
        let mut out = Vec::new();
        flatten_numbers(v, &mut out).map_err(|m| self.err(&key, m))?;
        Ok(out.into_iter().map(|x| x * scale).collect())
    }

    fn finish(&self) -> Result<(), ConfigError> {
        match self.obj.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(self.err(k, "unknown key")),
            None => Ok(()),
        }
    }
}

fn flatten_numbers(v: &Value, out: &mut Vec<f64>) -> Result<(), String> {
    match v {
        Value::Number(n) => {
            out.push(n.as_f64().unwrap());
            Ok(())
        }
        Value::Array(a) => a.iter().try_for_each(|x| flatten_numbers(x, out)),
        _ => Err("expected numbers".into()),
    }
}

fn material(parent: &mut Section<'_, '_>, key: &str, default: MaterialProperties) -> Result<MaterialConfig, ConfigError> {
    match parent.get(key) {
        None => Ok(default.into()),
        Some(v) => material_value(parent.cx, &parent.key_path(key), v),
    }
}

/// A material given by name, or as an object with optional `base` name
/// whose values the other keys override.
fn material_value(cx: &Ctx<'_>, path: &str, v: &Value) -> Result<MaterialConfig, ConfigError> {
    match v {
        Value::String(name) => named_material(name)
            .map(Into::into)
            .ok_or_else(|| cx.error(path, format!("unknown material \"{name}\""))),
        Value::Object(o) => {
            let mut s = Section::new(cx, path.to_string(), o);
            let base = match s.string("base")? {
                Some(name) => Some(named_material(name).ok_or_else(|| s.err("base", format!("unknown material \"{name}\"")))?),
                None => None,
            };
            let m = MaterialConfig {
                sound_speed_m_s: s.number("sound_speed_m_s", base.map(|b| b.sound_speed))?,
                density_kg_m3: s.number("density_kg_m3", base.map(|b| b.density))?,
                attenuation_db_mhz_cm: s.number("attenuation_db_mhz_cm", Some(base.map_or(0.0, |b| b.attenuation_coeff)))?,
                attenuation_power: s.number("attenuation_power", Some(base.map_or(1.0, |b| b.attenuation_power)))?,
            };
            s.finish()?;
            Ok(m)
        }
        _ => Err(cx.error(path, "expected a material name or object")),
    }
}

pub fn named_material(name: &str) -> Option<MaterialProperties> {
    Some(match name {
        "water" => MaterialProperties::WATER,
        "form_clear" => MaterialProperties::FORM_CLEAR,
        "vero_clear" => MaterialProperties::VERO_CLEAR,
        "agilus30" => MaterialProperties::AGILUS30,
        "bone" => MaterialProperties::BONE,
        _ => return None,
    })
}

fn resolve(cx: &Ctx<'_>, top: &mut Section<'_, '_>, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let mut g = top.required_sub("grid")?;
    let grid = GridConfig {
        nx: g.count("nx", None)?,
        ny: g.count("ny", None)?,
        nz: g.count("nz", None)?,
        spacing_m: g.length("spacing", Some(125e-6))?,
        frequency_hz: g.quantity("frequency", &FREQUENCY_UNITS, Some(2e6))?,
        reference_speed_m_s: g.number("reference_speed_m_s", Some(1500.0))?,
    };
    g.finish()?;

    let source = match top.sub("source")? {
        None => SourceConfig::Piston {
            aperture_m: 13e-3,
            amplitude: 1.0,
        },
        Some(mut s) => {
            let kind = s.string("kind")?.unwrap_or("piston");
            let amplitude = s.number("amplitude", Some(1.0))?;
            let src = match kind {
                "piston" => SourceConfig::Piston {
                    aperture_m: s.length("aperture", Some(13e-3))?,
                    amplitude,
                },
                "plane_wave" => SourceConfig::PlaneWave { amplitude },
                other => return Err(s.err("kind", format!("unknown source kind \"{other}\""))),
            };
            s.finish()?;
            src
        }
    };

    let medium = match top.sub("medium")? {
        None => MediumConfig::Homogeneous {
            material: MaterialProperties::WATER.into(),
        },
        Some(mut s) => {
            let kind = s.string("kind")?.unwrap_or("homogeneous");
            let m = match kind {
                "homogeneous" => MediumConfig::Homogeneous {
                    material: material(&mut s, "material", MaterialProperties::WATER)?,
                },
                "phantom" => MediumConfig::Phantom {
                    center_m: s.point("center")?,
                    inner_radius_m: s.length("inner_radius", None)?,
                    thickness_m: s.length("thickness", None)?,
                    bone: material(&mut s, "bone", MaterialProperties::BONE)?,
                },
                "hu" => {
                    let rel = s.string("path")?.ok_or_else(|| s.err("path", "required"))?;
                    let path = base_dir.join(rel);
                    if !path.exists() {
                        return Err(s.err("path", format!("file {} does not exist", path.display())));
                    }
                    let calibration = match s.get("calibration") {
                        None => HuCalibration::default(),
                        Some(v) => serde_json::from_value(v.clone()).map_err(|e| s.err("calibration", e.to_string()))?,
                    };
                    MediumConfig::Hu { path, calibration }
                }
                other => return Err(s.err("kind", format!("unknown medium kind \"{other}\""))),
            };
            s.finish()?;
            m
        }
    };

    let target = match top.sub("target")? {
        None => None,
        Some(mut s) => {
            let flat = s.lengths("foci")?;
            if flat.is_empty() || flat.len() % 3 != 0 {
                return Err(s.err("foci", "expected a list of [x, y, z] points"));
            }
            let foci_m: Vec<[f64; 3]> = flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let radii_m = if LENGTH_UNITS.iter().any(|(u, _)| s.obj.contains_key(&format!("radii_{u}"))) {
                s.lengths("radii")?
            } else {
                vec![0.0; foci_m.len()]
            };
            s.finish()?;
            Some(TargetConfig { foci_m, radii_m })
        }
    };

    let method = match top.string("method")? {
        None | Some("toah") => Method::Toah,
        Some("poah") => Method::Poah,
        Some("tr") => Method::Tr,
        Some(other) => return Err(top.err("method", format!("unknown method \"{other}\" (toah, poah or tr)"))),
    };

    let lens = match top.sub("lens")? {
        None => None,
        Some(mut s) => {
            let spacing = grid.spacing_m;
            let l = LensConfig {
                material: material(&mut s, "material", MaterialProperties::FORM_CLEAR)?,
                thickness_min_m: s.length("thickness_min", Some(250e-6))?,
                thickness_max_m: s.length("thickness_max", Some(1.9e-3))?,
                z_offset_voxels: s.count("z_offset_voxels", Some(1))?,
                alpha: s.number("alpha", Some(0.1))?,
                smoothing_kernel_voxels: s.count("smoothing_kernel_voxels", Some(Smoothing::default().kernel_size))?,
                smoothing_sigma_voxels: s.number("smoothing_sigma_voxels", Some(Smoothing::default().sigma))?,
                fabrication_cutoff_m: s.length("fabrication_cutoff", Some(2.0 * spacing))?,
            };
            s.finish()?;
            Some(l)
        }
    };

    let optim = match top.sub("optim")? {
        None => None,
        Some(mut s) => {
            let d = OptimConfig::default();
            let o = OptimSection {
                iterations: s.count("iterations", Some(d.iterations))?,
                learning_rate: s.number("learning_rate", Some(d.learning_rate))?,
                lambda_energy: s.number("lambda_energy", Some(d.lambda_energy))?,
                lambda_balance: s.number("lambda_balance", Some(d.lambda_balance))?,
                beta1: s.number("beta1", Some(d.beta1))?,
                beta2: s.number("beta2", Some(d.beta2))?,
                epsilon: s.number("epsilon", Some(d.epsilon))?,
                beta_start: s.number("beta_start", Some(d.beta_schedule.beta_start))?,
                beta_end: s.number("beta_end", Some(d.beta_schedule.beta_end))?,
                checkpoint_every: s.count("checkpoint_every", Some(0))?,
            };
            s.finish()?;
            Some(o)
        }
    };

    let d = SolverConfig::default();
    let solver = match top.sub("solver")? {
        None => SolverSection {
            reflection_order: d.reflection_order,
            evanescent: d.evanescent_mode,
            angular_cutoff: d.angular_cutoff,
            boundary_cells: d.boundary_cells,
        },
        Some(mut s) => {
            let evanescent = match s.string("evanescent")? {
                None | Some("decay") => EvanescentMode::Decay,
                Some("truncate") => EvanescentMode::Truncate,
                Some(other) => return Err(s.err("evanescent", format!("unknown mode \"{other}\" (decay or truncate)"))),
            };
            let sec = SolverSection {
                reflection_order: s.count("reflection_order", Some(d.reflection_order))?,
                evanescent,
                angular_cutoff: s.number("angular_cutoff", Some(d.angular_cutoff))?,
                boundary_cells: s.count("boundary_cells", Some(d.boundary_cells))?,
            };
            s.finish()?;
            sec
        }
    };

    let thermal = match top.sub("thermal")? {
        None => None,
        Some(mut s) => {
            let d = ThermalConfig::default();
            let t = ThermalSection {
                k_bone_w_m_c: s.number("k_bone_w_m_c", Some(d.k_bone))?,
                specific_heat_bone_j_kg_c: s.number("specific_heat_bone_j_kg_c", Some(d.specific_heat_bone))?,
                k_soft_w_m_c: s.number("k_soft_w_m_c", Some(d.k_soft))?,
                specific_heat_soft_j_kg_c: s.number("specific_heat_soft_j_kg_c", Some(d.specific_heat_soft))?,
                bone_density_threshold_kg_m3: s.number("bone_density_threshold_kg_m3", Some(d.bone_density_threshold))?,
                heat_duration_s: s.quantity("heat_duration", &TIME_UNITS, Some(d.heat_duration))?,
                cool_duration_s: s.quantity("cool_duration", &TIME_UNITS, Some(d.cool_duration))?,
                n_cycles: s.count("n_cycles", Some(d.n_cycles))?,
                reference_pressure_pa: s.number("reference_pressure_pa", Some(d.reference_pressure))?,
                perfusion_w_m3_c: s.number("perfusion_w_m3_c", Some(d.perfusion))?,
            };
            s.finish()?;
            Some(t)
        }
    };

    let sweep = match top.sub("sweep")? {
        None => SweepSection {
            materials: Vec::new(),
            sigma_m: 0.0,
            realizations: 50,
        },
        Some(mut s) => {
            let materials = match s.get("materials") {
                None => Vec::new(),
                Some(Value::Array(items)) => {
                    let key = s.key_path("materials");
                    items
                        .iter()
                        .enumerate()
                        .map(|(n, v)| material_value(cx, &format!("{key}[{n}]"), v))
                        .collect::<Result<_, _>>()?
                }
                Some(_) => return Err(s.err("materials", "expected a list")),
            };
            let sec = SweepSection {
                materials,
                sigma_m: s.length("sigma", Some(0.0))?,
                realizations: s.count("realizations", Some(50))?,
            };
            s.finish()?;
            sec
        }
    };

    let threshold_db = top.number("threshold_db", Some(-6.0))?;
    let seed = top.count("seed", Some(0))? as u64;

    Ok(RunConfig {
        grid,
        source,
        medium,
        target,
        method,
        lens,
        optim,
        solver,
        thermal,
        sweep,
        threshold_db,
        seed,
    })
}

fn validate(cx: &Ctx<'_>, cfg: &RunConfig) -> Result<(), ConfigError> {
    let g = cfg.grid_spec();
    g.validate().map_err(|e| cx.error("grid", e.to_string()))?;
    cfg.solver_config()
        .validate(&g)
        .map_err(|e| cx.error("solver", e.to_string()))?;
    if let Some(t) = &cfg.target {
        if t.radii_m.len() != t.foci_m.len() {
            return Err(cx.error(
                "target.radii",
                format!("{} radii for {} foci", t.radii_m.len(), t.foci_m.len()),
            ));
        }
    }
    let needs_optim = matches!(cfg.method, Method::Toah | Method::Poah);
    if needs_optim && cfg.optim.is_none() {
        return Err(ConfigError {
            path: "optim".into(),
            message: format!("required for method {:?}", cfg.method).to_lowercase(),
            line: None,
        });
    }
    if let Some(o) = cfg.optim_config() {
        o.validate().map_err(|e| cx.error("optim", e.to_string()))?;
    }
    if let Some(t) = cfg.thermal_config() {
        t.validate().map_err(|e| cx.error("thermal", e.to_string()))?;
    }
    if cfg.sweep.sigma_m < 0.0 {
        return Err(cx.error("sweep.sigma", "must be non-negative"));
    }
    Ok(())
}
