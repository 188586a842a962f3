//! Forward simulation of synthetic gage, radar and weather-station data.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::car::{car_precision, sample_with_factor, CarSpec};
use crate::covariates::{build_covariates, default_candidates, CovariateFields};
use crate::error::{domain, Error, Result};
use crate::grid::{Displacement, Grid};
use crate::io::{GageRecord, InputPaths, ObservationSet, StationRecord};
use crate::mcmc::derive_seed;
use crate::model::{logistic_zero_prob, Model, ModelConfig, ModelData, ModelState};
use crate::spline::TensorBasis;

/// How the wind is laid out over the domain.
#[derive(Debug, Clone, PartialEq)]
pub enum WindScenario {
    /// Same vector everywhere and at every step (m/s).
    Constant { u: f64, v: f64 },
    /// Spatially uniform; direction turns by `turn_deg` each step.
    Rotating { speed: f64, start_deg: f64, turn_deg: f64 },
    /// Smooth random field around a mean vector, redrawn each step.
    Smooth { mean_u: f64, mean_v: f64, amplitude: f64 },
    /// Explicit gridded field, `[t][cell]`.
    Field { u: Vec<Vec<f64>>, v: Vec<Vec<f64>> },
}

/// Where the gages sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GageLayout {
    /// Distinct cells drawn uniformly at random.
    Random,
    /// Roughly even spacing over the domain.
    Regular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub grid: Grid,
    pub n_times: usize,
    pub model: ModelConfig,
    pub truth: ModelState,
    pub n_gages: usize,
    pub gage_layout: GageLayout,
    pub n_stations: usize,
    pub wind: WindScenario,
    pub seed: u64,
    /// No zeros and no observation noise: readings are deterministic
    /// functions of the latent field.
    pub force_rain: bool,
}

impl ScenarioSpec {
    /// 20x20 grid, three steps, twelve gages, Model 4 layout.
    pub fn default_scenario(seed: u64) -> Result<Self> {
        let grid = Grid::new(20, 20, 1.0, 127.0, 37.0, 10.0)?;
        let model = ModelConfig::preset(4)?;
        Self::with_defaults(grid, 3, model, 12, seed)
    }

    /// Default truths for an arbitrary grid and model layout.
    pub fn with_defaults(grid: Grid, n_times: usize, model: ModelConfig, n_gages: usize, seed: u64) -> Result<Self> {
        let truth = default_truth(&grid, n_times, &model)?;
        Ok(Self {
            grid,
            n_times,
            model,
            truth,
            n_gages,
            gage_layout: GageLayout::Random,
            n_stations: 15,
            wind: WindScenario::Smooth {
                mean_u: 5.0,
                mean_v: 2.0,
                amplitude: 2.0,
            },
            seed,
            force_rain: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_times == 0 {
            return Err(Error::Config("scenario needs at least one time step".into()));
        }
        if self.n_gages > self.grid.len() {
            return Err(Error::Config(format!(
                "{} gages do not fit on {} cells",
                self.n_gages,
                self.grid.len()
            )));
        }
        if self.n_stations < 3 {
            return Err(Error::Config("scenario needs at least 3 weather stations".into()));
        }
        self.model.validate()?;
        let mut t = self.truth.clone();
        // zero observation variances are allowed in the noiseless limit
        if self.force_rain {
            t.sigma2_g = t.sigma2_g.max(1.0);
            t.sigma2_r = t.sigma2_r.max(1.0);
        }
        t.validate()?;
        if !(self.truth.sigma2_g >= 0.0 && self.truth.sigma2_r >= 0.0) {
            return domain("observation variances must be >= 0");
        }
        let k_bias = TensorBasis::new(&self.grid, self.model.effective_k_bias())?.n_coef();
        let k_shift = TensorBasis::new(&self.grid, self.model.effective_k_shift())?.n_coef();
        let tr = self.n_times - 1;
        let dims_ok = self.truth.y.len() == self.n_times
            && self.truth.c1.len() == k_bias
            && self.truth.tau2_eps.len() == tr
            && self.truth.shift1.len() == tr
            && self.truth.shift2.len() == tr
            && self.truth.shift1.iter().chain(&self.truth.shift2).all(|s| s.len() == k_shift);
        if !dims_ok {
            return domain("scenario truth does not match the grid, time axis and model layout");
        }
        if let WindScenario::Field { u, v } = &self.wind {
            let n = self.grid.len();
            if u.len() != self.n_times || v.len() != self.n_times || u.iter().chain(v).any(|r| r.len() != n) {
                return domain("wind field does not match the grid and time axis");
            }
        }
        Ok(())
    }
}

/// Truth values used by the default scenarios.
pub fn default_truth(grid: &Grid, n_times: usize, model: &ModelConfig) -> Result<ModelState> {
    let kb = TensorBasis::new(grid, model.effective_k_bias())?.n_coef();
    let ks = TensorBasis::new(grid, model.effective_k_shift())?.n_coef();
    let mut s = ModelState::zeros(grid.len(), n_times, kb, ks);
    s.beta1 = vec![0.3, 0.25, -0.2, 0.15];
    s.beta_dyn = vec![0.1, 0.1, 0.15, -0.1];
    s.rho_y = 0.9;
    s.rho = 0.7;
    s.tau2_y = 1.5;
    s.tau2_eps.iter_mut().for_each(|v| *v = 3.0);
    s.a_g = -0.23;
    s.b_g = -0.17;
    s.a_r = -2.81;
    s.b_r = -1.69;
    s.c2 = 1.05;
    s.sigma2_g = 0.05;
    s.sigma2_r = 0.2;
    s.alpha = 0.39;
    let ln200 = 200f64.ln();
    // a gentle west-east gradient in the additive bias
    let k = model.effective_k_bias();
    s.c1 = (0..kb)
        .map(|j| {
            let kx = j % k;
            let ky = j / k;
            ln200 + 0.6 * (kx as f64 / (k.max(2) - 1) as f64 - 0.5) - 0.2 * (ky as f64 / (k.max(2) - 1) as f64 - 0.5)
        })
        .collect();
    if kb == 1 {
        s.c1[0] = ln200;
    }
    let k = model.effective_k_shift();
    for t in 0..n_times.saturating_sub(1) {
        for j in 0..ks {
            let kx = j % k;
            let ky = j / k;
            s.shift1[t][j] = if ks == 1 { 0.4 } else { 0.8 * (ky as f64 / (k - 1) as f64) - 0.4 };
            s.shift2[t][j] = if ks == 1 { -0.3 } else { 0.6 * (kx as f64 / (k - 1) as f64) - 0.3 };
        }
    }
    Ok(s)
}

/// A simulated dataset with everything needed to score a fit.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub observations: ObservationSet,
    /// Truth, including the simulated latent fields.
    pub truth: ModelState,
    /// Covariates as Stage 0 reconstructs them from the simulated stations.
    pub covariates: CovariateFields,
}

fn smooth_surface<R: Rng + ?Sized>(rng: &mut R, basis: &TensorBasis, mean: f64, amplitude: f64) -> Vec<f64> {
    let coef: Vec<f64> = (0..basis.n_coef())
        .map(|_| mean + amplitude * rng.sample::<f64, _>(StandardNormal))
        .collect();
    basis.eval(&coef)
}

fn gage_cells<R: Rng + ?Sized>(rng: &mut R, grid: &Grid, count: usize, layout: GageLayout) -> Vec<usize> {
    match layout {
        GageLayout::Random => {
            let mut cells = sample_indices(rng, grid.len(), count).into_vec();
            cells.sort_unstable();
            cells
        }
        GageLayout::Regular => {
            let step = (grid.len() as f64 / count.max(1) as f64).max(1.0);
            let mut cells: Vec<usize> = (0..count)
                .map(|k| ((k as f64 + 0.5) * step) as usize)
                .map(|i| i.min(grid.len() - 1))
                .collect();
            cells.dedup();
            cells
        }
    }
}

/// Simulate station reports from smooth random surfaces.
fn simulate_stations<R: Rng + ?Sized>(rng: &mut R, spec: &ScenarioSpec) -> Result<(Vec<StationRecord>, Vec<f64>)> {
    let grid = &spec.grid;
    let n = grid.len();
    let basis = TensorBasis::new(grid, 3)?;
    let cells = sample_indices(rng, n, spec.n_stations.min(n)).into_vec();
    let elevation = smooth_surface(rng, &basis, 150.0, 80.0);
    let mut temp = smooth_surface(rng, &basis, 18.0, 1.5);
    let mut rh = smooth_surface(rng, &basis, 85.0, 4.0);
    let mut stations = Vec::new();
    for t in 0..spec.n_times {
        if t > 0 {
            let dt = smooth_surface(rng, &basis, -0.3, 0.4);
            let dr = smooth_surface(rng, &basis, 1.0, 1.5);
            for i in 0..n {
                temp[i] += dt[i];
                rh[i] = (rh[i] + dr[i]).clamp(0.0, 100.0);
            }
        }
        let (wu, wv) = match &spec.wind {
            WindScenario::Constant { u, v } => (vec![*u; n], vec![*v; n]),
            WindScenario::Rotating {
                speed,
                start_deg,
                turn_deg,
            } => {
                let a = (start_deg + turn_deg * t as f64).to_radians();
                (vec![speed * a.cos(); n], vec![speed * a.sin(); n])
            }
            WindScenario::Smooth {
                mean_u,
                mean_v,
                amplitude,
            } => (
                smooth_surface(rng, &basis, *mean_u, *amplitude),
                smooth_surface(rng, &basis, *mean_v, *amplitude),
            ),
            WindScenario::Field { u, v } => (u[t].clone(), v[t].clone()),
        };
        for (k, &c) in cells.iter().enumerate() {
            let (lon, lat) = grid.center_lonlat(c);
            stations.push(StationRecord {
                station_id: format!("AWS{k:03}"),
                lon,
                lat,
                t,
                temperature: temp[c],
                rel_humidity: rh[c],
                wind_u: wu[c],
                wind_v: wv[c],
            });
        }
    }
    Ok((stations, elevation))
}

/// Simulate the latent fields of `truth` under fixed covariates.
pub fn simulate_latent<R: Rng + ?Sized>(rng: &mut R, model: &Model, truth: &ModelState) -> Result<Vec<Vec<f64>>> {
    let grid = &model.grid;
    let mut s = truth.clone();
    let f0 = car_precision(grid, CarSpec::new(truth.rho_y, truth.tau2_y)?)?;
    // the unscaled factor is shared by every step
    let mean0 = model.initial_mean(&s);
    s.y[0] = sample_with_factor(rng, f0.factor(), &mean0, truth.tau2_y);
    for t in 1..model.n_times() {
        let mean = model.latent_mean(t, &s);
        s.y[t] = sample_with_factor(rng, f0.factor(), &mean, truth.tau2_eps[t - 1]);
    }
    Ok(s.y)
}

/// Draw a complete dataset from `spec`. Deterministic in `spec.seed`.
pub fn simulate_dataset(spec: &ScenarioSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let grid = &spec.grid;
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (stations, elevation) = simulate_stations(&mut rng, spec)?;
    let mut obs = ObservationSet::empty(grid, spec.n_times);
    obs.stations = stations;
    obs.elevation = elevation;
    let covariates = build_covariates(&obs, grid, &default_candidates())?;

    let empty = ModelData::new(grid, spec.n_times, vec![vec![crate::model::ObsValue::Missing; n]; spec.n_times], Vec::new())?;
    let model = Model::new(grid.clone(), spec.model.clone(), covariates.clone(), empty)?;
    let mut truth = spec.truth.clone();
    truth.y = simulate_latent(&mut rng, &model, &truth)?;
    let c1 = model.c1_field(&truth);

    let draw = |rng: &mut ChaCha8Rng, a: f64, b: f64, y: f64, mean: f64, var: f64| -> f64 {
        if spec.force_rain {
            return mean.exp();
        }
        let u: f64 = rng.random();
        // the normal draw is taken unconditionally to keep streams aligned
        let z: f64 = rng.sample(StandardNormal);
        if u < logistic_zero_prob(a, b, y) {
            0.0
        } else {
            (mean + var.sqrt() * z).exp()
        }
    };

    for t in 0..spec.n_times {
        for i in 0..n {
            let y = truth.y[t][i];
            obs.radar[t][i] = Some(draw(&mut rng, truth.a_r, truth.b_r, y, c1[i] + truth.c2 * y, truth.sigma2_r));
        }
    }
    let cells = gage_cells(&mut rng, grid, spec.n_gages, spec.gage_layout);
    for t in 0..spec.n_times {
        for (k, &c) in cells.iter().enumerate() {
            let y = truth.y[t][c];
            let (lon, lat) = grid.center_lonlat(c);
            obs.gages.push(GageRecord {
                station_id: format!("G{k:03}"),
                lon,
                lat,
                t,
                rain: Some(draw(&mut rng, truth.a_g, truth.b_g, y, y, truth.sigma2_g)),
                cell: c,
            });
        }
    }
    Ok(SimulatedData {
        observations: obs,
        truth,
        covariates,
    })
}

/// Model built from a simulated dataset's own covariates.
pub fn model_for(data: &SimulatedData, grid: &Grid, config: ModelConfig) -> Result<Model> {
    let md = ModelData::from_observations(&data.observations, grid)?;
    Model::new(grid.clone(), config, data.covariates.clone(), md)
}

/// Write the dataset in the ingest schemas plus the truth files.
pub fn write_dataset(dir: &Path, grid: &Grid, data: &SimulatedData) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::io::write_observations(&InputPaths::in_dir(dir), grid, &data.observations)?;
    write_truth(dir, grid, &data.truth)
}

pub fn write_truth(dir: &Path, grid: &Grid, truth: &ModelState) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("truth_Y.csv"))?;
    w.write_record(["x", "y", "t", "value"])?;
    for (t, row) in truth.y.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let (x, y) = grid.coords(i);
            w.write_record([x.to_string(), y.to_string(), t.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("truth_params.csv"))?;
    w.write_record(["param", "value"])?;
    for (_, name, v) in truth.flatten() {
        if !name.starts_with("y[") {
            w.write_record([name, v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One covariance probe: `cov(Y_i(t), Y_{i+h}(t + tau))`, `t` 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovProbe {
    pub i: usize,
    pub h: Displacement,
    pub t: usize,
    pub tau: usize,
}

impl CovProbe {
    /// Second cell of the pair; offsets leaving the grid are an error.
    pub fn partner(&self, grid: &Grid) -> Result<usize> {
        let (x, y) = grid.coords(self.i);
        grid.checked_index(x as i64 + self.h.dx as i64, y as i64 + self.h.dy as i64)
            .ok_or_else(|| Error::Domain(format!("offset {:?} from cell {} leaves the grid", self.h, self.i)))
    }
}

/// Monte Carlo covariance estimate with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovEstimate {
    pub estimate: f64,
    pub se: f64,
}

/// Covariance of the latent process across independent replications of
/// `truth` under `model`'s covariates and shifts.
pub fn empirical_covariance(
    model: &Model,
    truth: &ModelState,
    n_real: usize,
    probes: &[CovProbe],
    seed: u64,
) -> Result<Vec<CovEstimate>> {
    if n_real < 100 {
        return domain(format!("empirical covariance needs >= 100 replications (got {n_real})"));
    }
    let pairs: Vec<(usize, usize, usize, usize)> = probes
        .iter()
        .map(|p| {
            if p.t + p.tau >= model.n_times() {
                return domain(format!("probe t={} tau={} exceeds the time axis", p.t, p.tau));
            }
            Ok((p.i, p.t, p.partner(&model.grid)?, p.t + p.tau))
        })
        .collect::<Result<_>>()?;
    let reps: Vec<Vec<(f64, f64)>> = (0..n_real)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
            let y = simulate_latent(&mut rng, model, truth)?;
            Ok(pairs.iter().map(|&(i, t, j, t2)| (y[t][i], y[t2][j])).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..pairs.len())
        .map(|k| {
            let xs: Vec<f64> = reps.iter().map(|r| r[k].0).collect();
            let ys: Vec<f64> = reps.iter().map(|r| r[k].1).collect();
            jackknife_covariance(&xs, &ys)
        })
        .collect())
}

/// Sample covariance with leave-one-out jackknife standard error.
pub fn jackknife_covariance(xs: &[f64], ys: &[f64]) -> CovEstimate {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(a, b)| a * b).sum();
    let cov = |sx: f64, sy: f64, sxy: f64, n: f64| (sxy - sx * sy / n) / (n - 1.0);
    let estimate = cov(sx, sy, sxy, n);
    let loo: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(a, b)| cov(sx - a, sy - b, sxy - a * b, n - 1.0))
        .collect();
    let m = loo.iter().sum::<f64>() / n;
    let var = (n - 1.0) / n * loo.iter().map(|c| (c - m) * (c - m)).sum::<f64>();
    CovEstimate {
        estimate,
        se: var.sqrt(),
    }
}
