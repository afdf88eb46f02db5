//! Core objects built from a resolved config.

use ndarray::Array2;
use toah_core::dhla::LensVolume;
use toah_core::io;
use toah_core::medium::{
    ingest_hu_volume, make_homogeneous, make_skull_phantom, AcousticMedium, GridSpec, MaterialProperties, SourceSpec,
};
use toah_core::optim::{LensSetup, TargetSpec};
use toah_core::solver::SolverConfig;

use crate::config::{MediumConfig, RunConfig, SourceConfig};
use crate::CliError;

pub struct Scenario {
    pub cfg: RunConfig,
    pub hash: String,
    pub grid: GridSpec,
    pub medium: AcousticMedium,
    pub source: SourceSpec,
    pub solver: SolverConfig,
}

impl Scenario {
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        let grid = cfg.grid_spec();
        let medium = match &cfg.medium {
            MediumConfig::Homogeneous { material } => make_homogeneous(grid, &material.properties())?,
            MediumConfig::Phantom {
                center_m,
                inner_radius_m,
                thickness_m,
                bone,
            } => make_skull_phantom(grid, *center_m, *inner_radius_m, *thickness_m, &bone.properties())?,
            MediumConfig::Hu { path, calibration } => {
                let (h, hu) = io::read_hu(path)?;
                if h.dims != [grid.nx, grid.ny, grid.nz] {
                    return Err(CliError::config(
                        "medium.path",
                        format!("volume dims {:?} differ from the grid {:?}", h.dims, [grid.nx, grid.ny, grid.nz]),
                    ));
                }
                ingest_hu_volume(&hu, grid, calibration)?
            }
        };
        let source = match cfg.source {
            SourceConfig::Piston { aperture_m, amplitude } => SourceSpec::piston(&grid, aperture_m, amplitude)?,
            SourceConfig::PlaneWave { amplitude } => SourceSpec::plane_wave(&grid, amplitude),
        };
        let solver = cfg.solver_config();
        let hash = cfg.hash();
        Ok(Scenario {
            cfg,
            hash,
            grid,
            medium,
            source,
            solver,
        })
    }

    pub fn target(&self) -> Result<TargetSpec, CliError> {
        let t = self
            .cfg
            .target
            .as_ref()
            .ok_or_else(|| CliError::config("target", "required"))?;
        TargetSpec::from_spheres(&self.grid, &t.foci_m, &t.radii_m).map_err(|e| CliError::config("target", e.to_string()))
    }

    pub fn lens_material(&self) -> Result<MaterialProperties, CliError> {
        Ok(self.lens_section()?.material.properties())
    }

    fn lens_section(&self) -> Result<&crate::config::LensConfig, CliError> {
        self.cfg.lens.as_ref().ok_or_else(|| CliError::config("lens", "required"))
    }

    pub fn lens_setup(&self) -> Result<LensSetup, CliError> {
        let l = self.lens_section()?;
        let mut s = LensSetup::from_thickness(&self.grid, l.material.properties(), l.thickness_min_m, l.thickness_max_m)
            .map_err(|e| CliError::config("lens", e.to_string()))?;
        s.z_offset = l.z_offset_voxels;
        s.alpha = l.alpha;
        s.smoothing = self.cfg.smoothing().expect("lens section present");
        s.fabrication_cutoff = l.fabrication_cutoff_m;
        s.validate(&self.grid).map_err(|e| CliError::config("lens", e.to_string()))?;
        Ok(s)
    }

    /// First plane past the lens volume; metrics are taken from here on.
    pub fn evaluation_start(&self) -> Result<usize, CliError> {
        let s = self.lens_setup()?;
        Ok(s.z_offset + s.depth)
    }

    /// Focus centers shifted into the evaluation window.
    pub fn seeds(&self, target: &TargetSpec, start: usize) -> Result<Vec<[usize; 3]>, CliError> {
        Self::seeds_for(target, start)
    }

    pub fn seeds_for(target: &TargetSpec, start: usize) -> Result<Vec<[usize; 3]>, CliError> {
        target
            .focus_centers
            .iter()
            .map(|c| {
                if c[2] < start {
                    Err(CliError::config(
                        "target.foci",
                        format!("focus at plane {} lies before the evaluation start plane {start}", c[2]),
                    ))
                } else {
                    Ok([c[0], c[1], c[2] - start])
                }
            })
            .collect()
    }

    /// Lens from a thickness map in meters.
    pub fn lens_from_thickness(&self, t_m: &Array2<f64>) -> Result<LensVolume, CliError> {
        let setup = self.lens_setup()?;
        if t_m.dim() != (self.grid.nx, self.grid.ny) {
            return Err(CliError::Usage(format!(
                "lens thickness map is {:?}, grid is {}x{}",
                t_m.dim(),
                self.grid.nx,
                self.grid.ny
            )));
        }
        let t_vox = t_m.mapv(|t| t / self.grid.dz);
        Ok(LensVolume::from_thickness(&t_vox, setup.depth, setup.v_min, setup.v_max))
    }
}
