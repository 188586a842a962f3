//! Run configuration: a TOML file with `grid`, `paths`, `model`, `sampler`,
//! `holdout`, `covariates`, `coverage` and `simulate` tables.
//!
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariates::default_candidates;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::InputPaths;
use crate::mcmc::SamplerConfig;
use crate::model::{ModelConfig, Priors};
use crate::products::CoverageSettings;
use crate::simulate::{GageLayout, ScenarioSpec, WindScenario};

/// Key reference shown by `--help`.
pub const CONFIG_HELP: &str = "\
CONFIGURATION (TOML)
  seed = N                    optional; overrides sampler.seed, holdout.seed and simulate.seed

  [grid]
  nx, ny                      cells along x (east) and y (north), each >= 2
  cell_size_km                cell edge length (default 1)
  origin_lon, origin_lat      south-west corner (default 127, 37)
  dt_minutes                  time step (default 10)
  T                           number of time steps (default 3)

  [paths]
  data_dir                    directory holding gage.csv, radar.csv, aws.csv, dem.csv
  output_dir                  where results are written (created if missing)
  gage, radar, aws, dem       optional explicit input files (override data_dir)

  [model]
  preset                      model1 .. model5 (default model4)
  bias_spatial, shift_spatial optional overrides of the preset
  basis_k_bias, basis_k_shift optional spline sizes per axis
  [model.priors]
  precision_shape, precision_rate         CAR precision Gamma prior (0.5, 0.005)
  c2_shape, c2_rate                       radar scale Gamma prior (1, 1)
  logistic_var                            zero-probability coefficient variance (100)
  coef_var                                regression/spline coefficient variance (100)
  obs_precision_shape, obs_precision_rate observation precision Gamma prior (0.5, 0.005)

  [sampler]
  n_iter, burn_in, thin       chain length, discarded prefix, thinning (20000, 10000, 10)
  seed                        random seed (1)
  adapt_window, adapt_end     adaptation batch size and last adapted iteration (50, 10000)
  initial_scale               starting proposal scale of parameter blocks (0.05)
  initial_latent_scale        starting proposal scale of latent sites (0.2)
  frozen                      list of block names kept at their initial values
  joint_moves                 enable joint ridge moves (true)

  [holdout]
  fraction                    share of gage and radar records withheld, in [0, 1) (0)
  seed                        seed of the random split (11)
  repetitions                 independent splits (10)

  [covariates]
  basis_sizes                 thin-plate basis sizes tried by GCV ([9, 16, 25, 36])
  lambdas                     penalties tried by GCV ([0, 1e-4, 1e-2, 1])

  [coverage]
  level                       predictive interval level (0.95)
  log_floor                   log value standing in for zeros (-2)
  replicates                  predictive draws per posterior draw (20)
  seed                        predictive simulation seed (7)

  [simulate]
  seed                        dataset seed (1)
  n_gages                     gage count (12)
  gage_layout                 random | regular
  n_stations                  weather stations (15)
  wind_u, wind_v              mean wind in m/s (5, 2)
  wind_amplitude              spread of the smooth random wind field; 0 gives constant wind (2)
  force_rain                  noiseless, zero-free readings (false)
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub cell_size_km: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub dt_minutes: f64,
    #[serde(rename = "T")]
    pub n_times: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 20,
            ny: 20,
            cell_size_km: 1.0,
            origin_lon: 127.0,
            origin_lat: 37.0,
            dt_minutes: 10.0,
            n_times: 3,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        if self.n_times == 0 {
            return Err(Error::Config("grid.T must be >= 1".into()));
        }
        Grid::new(
            self.nx,
            self.ny,
            self.cell_size_km,
            self.origin_lon,
            self.origin_lat,
            self.dt_minutes,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub gage: Option<PathBuf>,
    pub radar: Option<PathBuf>,
    pub aws: Option<PathBuf>,
    pub dem: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    pub bias_spatial: Option<bool>,
    pub shift_spatial: Option<bool>,
    pub basis_k_bias: Option<usize>,
    pub basis_k_shift: Option<usize>,
    pub priors: Priors,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "model4".into(),
            bias_spatial: None,
            shift_spatial: None,
            basis_k_bias: None,
            basis_k_shift: None,
            priors: Priors::default(),
        }
    }
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::preset_named(&self.preset)?;
        if let Some(v) = self.bias_spatial {
            m.bias_spatial = v;
        }
        if let Some(v) = self.shift_spatial {
            m.shift_spatial = v;
        }
        if let Some(k) = self.basis_k_bias {
            m.basis_k_bias = k;
        }
        if let Some(k) = self.basis_k_shift {
            m.basis_k_shift = k;
        }
        m.priors = self.priors.clone();
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoldoutConfig {
    pub fraction: f64,
    pub seed: u64,
    pub repetitions: usize,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        Self {
            fraction: 0.0,
            seed: 11,
            repetitions: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateConfig {
    pub basis_sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Default for CovariateConfig {
    fn default() -> Self {
        let c = default_candidates();
        let mut basis_sizes: Vec<usize> = c.iter().map(|p| p.0).collect();
        basis_sizes.dedup();
        let mut lambdas: Vec<f64> = c.iter().map(|p| p.1).collect();
        lambdas.sort_by(f64::total_cmp);
        lambdas.dedup();
        Self { basis_sizes, lambdas }
    }
}

impl CovariateConfig {
    pub fn candidates(&self) -> Vec<(usize, f64)> {
        self.basis_sizes
            .iter()
            .flat_map(|&m| self.lambdas.iter().map(move |&l| (m, l)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutName {
    Random,
    Regular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub seed: u64,
    pub n_gages: usize,
    pub gage_layout: LayoutName,
    pub n_stations: usize,
    pub wind_u: f64,
    pub wind_v: f64,
    pub wind_amplitude: f64,
    pub force_rain: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_gages: 12,
            gage_layout: LayoutName::Random,
            n_stations: 15,
            wind_u: 5.0,
            wind_v: 2.0,
            wind_amplitude: 2.0,
            force_rain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub grid: GridConfig,
    pub paths: PathsConfig,
    pub model: ModelSection,
    pub sampler: SamplerConfig,
    pub holdout: HoldoutConfig,
    pub covariates: CovariateConfig,
    pub coverage: CoverageSettings,
    pub simulate: SimulateConfig,
}

/// Which command the configuration is checked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Predict,
    Validate,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths are taken from the config file's directory
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Command-line overrides.
    pub fn apply_overrides(&mut self, seed: Option<u64>, preset: Option<&str>) {
        if let Some(s) = seed {
            self.seed = Some(s);
        }
        if let Some(p) = preset {
            self.model.preset = p.to_string();
            self.model.bias_spatial = None;
            self.model.shift_spatial = None;
            self.model.basis_k_bias = None;
            self.model.basis_k_shift = None;
        }
        if let Some(s) = self.seed {
            self.sampler.seed = s;
            self.holdout.seed = s;
            self.simulate.seed = s;
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        self.grid.build()
    }

    pub fn n_times(&self) -> usize {
        self.grid.n_times
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model.build()
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.paths
            .output_dir
            .as_deref()
            .ok_or_else(|| Error::Config("paths.output_dir is required".into()))
    }

    pub fn input_paths(&self) -> Result<InputPaths> {
        let p = &self.paths;
        let base = p.data_dir.as_deref().map(InputPaths::in_dir);
        let pick = |explicit: &Option<PathBuf>, from_dir: Option<&PathBuf>, key: &str| {
            explicit
                .clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| Error::Config(format!("paths.{key} or paths.data_dir is required")))
        };
        Ok(InputPaths {
            gage: pick(&p.gage, base.as_ref().map(|b| &b.gage), "gage")?,
            radar: pick(&p.radar, base.as_ref().map(|b| &b.radar), "radar")?,
            aws: pick(&p.aws, base.as_ref().map(|b| &b.aws), "aws")?,
            dem: pick(&p.dem, base.as_ref().map(|b| &b.dem), "dem")?,
        })
    }

    pub fn scenario(&self) -> Result<ScenarioSpec> {
        let s = &self.simulate;
        let mut spec = ScenarioSpec::with_defaults(
            self.grid()?,
            self.n_times(),
            self.model_config()?,
            s.n_gages,
            s.seed,
        )?;
        spec.gage_layout = match s.gage_layout {
            LayoutName::Random => GageLayout::Random,
            LayoutName::Regular => GageLayout::Regular,
        };
        spec.n_stations = s.n_stations;
        spec.wind = if s.wind_amplitude == 0.0 {
            WindScenario::Constant { u: s.wind_u, v: s.wind_v }
        } else {
            WindScenario::Smooth {
                mean_u: s.wind_u,
                mean_v: s.wind_v,
                amplitude: s.wind_amplitude,
            }
        };
        spec.force_rain = s.force_rain;
        Ok(spec)
    }

    /// Check everything the command will need, before it touches the disk.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        let grid = self.grid()?;
        self.model_config()?;
        self.output_dir()?;
        let sim = &self.simulate;
        if !(sim.wind_u.is_finite() && sim.wind_v.is_finite() && sim.wind_amplitude >= 0.0) {
            return Err(Error::Config("simulate.wind_u/wind_v must be finite and wind_amplitude >= 0".into()));
        }
        let h = &self.holdout;
        if !(h.fraction >= 0.0 && h.fraction < 1.0) {
            return Err(Error::Config(format!("holdout.fraction must lie in [0, 1) (got {})", h.fraction)));
        }
        if h.fraction > 0.0 && h.repetitions == 0 {
            return Err(Error::Config("holdout.repetitions must be >= 1 when holdout.fraction > 0".into()));
        }
        let c = &self.coverage;
        if !(c.level > 0.0 && c.level < 1.0) || c.replicates == 0 || !c.log_floor.is_finite() {
            return Err(Error::Config(
                "coverage.level must lie in (0, 1), coverage.replicates >= 1, coverage.log_floor finite".into(),
            ));
        }
        if self.covariates.basis_sizes.is_empty() || self.covariates.lambdas.is_empty() {
            return Err(Error::Config("covariates.basis_sizes and covariates.lambdas must be non-empty".into()));
        }
        if self.covariates.basis_sizes.iter().any(|&m| m < 3) || self.covariates.lambdas.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::Config("covariates.basis_sizes must be >= 3 and lambdas >= 0".into()));
        }
        match cmd {
            Command::Simulate => {
                self.scenario()?.validate()?;
            }
            Command::Fit => {
                self.sampler.validate()?;
                let kept = self.sampler.kept_draws();
                if kept < crate::products::MIN_DRAWS {
                    return Err(Error::Config(format!(
                        "sampler keeps {kept} draws; summaries need at least {}",
                        crate::products::MIN_DRAWS
                    )));
                }
                for (key, p) in self.input_paths()?.iter() {
                    if !p.is_file() {
                        return Err(Error::Config(format!("paths.{key}: {} does not exist", p.display())));
                    }
                }
            }
            Command::Predict => {
                self.sampler.validate()?;
                for (key, p) in self.input_paths()?.iter() {
                    if !p.is_file() {
                        return Err(Error::Config(format!("paths.{key}: {} does not exist", p.display())));
                    }
                }
                let out = self.output_dir()?;
                for f in ["trace.csv", "report.json"] {
                    if !out.join(f).is_file() {
                        return Err(Error::Config(format!("{} is missing; run fit first", out.join(f).display())));
                    }
                }
            }
            Command::Validate => {
                if h.fraction == 0.0 {
                    return Err(Error::Config("validate needs holdout.fraction > 0".into()));
                }
            }
        }
        let _ = grid;
        Ok(())
    }
}

impl PathsConfig {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.data_dir,
            &mut self.output_dir,
            &mut self.gage,
            &mut self.radar,
            &mut self.aws,
            &mut self.dem,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

impl InputPaths {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Path)> {
        [
            ("gage", self.gage.as_path()),
            ("radar", self.radar.as_path()),
            ("aws", self.aws.as_path()),
            ("dem", self.dem.as_path()),
        ]
        .into_iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let mut c = RunConfig::default();
        c.paths.output_dir = Some("out".into());
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_toml("[sampler]\nn_itre = 5\n").unwrap_err();
        assert!(e.to_string().contains("n_itre"), "{e}");
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[grid]\nT = 2\nnz = 3\n").is_err());
    }

    #[test]
    fn bad_grid_names_the_field() {
        let mut c = RunConfig::from_toml("[grid]\nnx = 1\n[paths]\noutput_dir = \"o\"\n").unwrap();
        c.apply_overrides(None, None);
        let e = c.validate(Command::Simulate).unwrap_err();
        assert!(e.to_string().contains("grid.nx"), "{e}");
    }

    #[test]
    fn seed_and_preset_overrides() {
        let mut c = RunConfig::from_toml("[model]\npreset = \"model2\"\nbasis_k_shift = 5\n").unwrap();
        c.apply_overrides(Some(42), Some("model1"));
        assert_eq!(c.sampler.seed, 42);
        assert_eq!(c.holdout.seed, 42);
        assert_eq!(c.simulate.seed, 42);
        assert_eq!(c.model_config().unwrap(), ModelConfig::preset(1).unwrap());
    }

    #[test]
    fn explicit_flags_override_preset() {
        let c = RunConfig::from_toml("[model]\npreset = \"model1\"\nshift_spatial = true\n").unwrap();
        let m = c.model_config().unwrap();
        assert!(m.shift_spatial && !m.bias_spatial);
    }

    #[test]
    fn holdout_fraction_bounds() {
        let mut c = RunConfig::default();
        c.paths.output_dir = Some("o".into());
        c.holdout.fraction = 1.0;
        assert!(c.validate(Command::Simulate).is_err());
        c.holdout.fraction = 0.1;
        c.holdout.repetitions = 0;
        assert!(c.validate(Command::Simulate).is_err());
    }
}
