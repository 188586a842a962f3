//! The four commands behind the `rainfuse` binary: simulate, fit, predict
//! and validate. Each checks the whole configuration before writing.

use std::collections::BTreeMap;
use std::path::PathBuf;

use log::info;
use rayon::prelude::*;

use crate::config::{Command, RunConfig};
use crate::covariates::{build_covariates, CovariateFields};
use crate::error::{domain, Error, Result};
use crate::grid::Grid;
use crate::io::{load_observations, screen_gage_zeros, write_text, ObservationSet};
use crate::mcmc::{derive_seed, run_chain, PosteriorSamples, SamplerConfig};
use crate::model::{Model, ModelData};
use crate::products::{
    dic, holdout_coverage, posterior_rain_map, read_coverage, read_holdout, split_holdout, write_coverage,
    write_holdout, write_pgm, write_prob_map, write_rain_map, zero_prob_map, Coverage, CoverageSettings, Stream,
};
use crate::simulate::{simulate_dataset, write_dataset};
use crate::state_io::{load_samples, write_report, write_trace, FitReport};

pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const DIC_FILE: &str = "dic.txt";
pub const COVERAGE_REPORT_FILE: &str = "coverage_report.csv";

pub fn holdout_file(r: usize) -> String {
    format!("holdout_r{r}.csv")
}

pub fn coverage_file(r: usize) -> String {
    format!("coverage_r{r}.csv")
}

/// Screened observations and Stage 0 covariates, ready for modeling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub grid: Grid,
    pub observations: ObservationSet,
    pub covariates: CovariateFields,
    pub screened_zeros: usize,
}

/// Ingest, screen erroneous gage zeros and build the covariates.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let grid = cfg.grid()?;
    let raw = load_observations(&cfg.input_paths()?, &grid, cfg.n_times())?;
    prepare_observations(cfg, grid, &raw)
}

pub fn prepare_observations(cfg: &RunConfig, grid: Grid, raw: &ObservationSet) -> Result<Prepared> {
    let (observations, screened_zeros) = screen_gage_zeros(raw, &grid);
    if screened_zeros > 0 {
        info!("screened {screened_zeros} gage zeros surrounded by radar rain");
    }
    let covariates = build_covariates(&observations, &grid, &cfg.covariates.candidates())?;
    Ok(Prepared {
        grid,
        observations,
        covariates,
        screened_zeros,
    })
}

pub fn build_model(cfg: &RunConfig, prep: &Prepared, obs: &ObservationSet) -> Result<Model> {
    let data = ModelData::from_observations(obs, &prep.grid)?;
    Model::new(prep.grid.clone(), cfg.model_config()?, prep.covariates.clone(), data)
}

fn report_of(samples: &PosteriorSamples, screened_zeros: usize) -> FitReport {
    FitReport {
        iterations: samples.iterations.clone(),
        deviance: samples.deviance.clone(),
        acceptance: samples.acceptance.clone(),
        warnings: samples.warnings.clone(),
        screened_zeros,
    }
}

/// One hold-out repetition: split, refit and score the withheld records.
pub fn holdout_repetition(cfg: &RunConfig, prep: &Prepared, r: usize) -> Result<(Vec<crate::products::HeldOut>, Coverage)> {
    let (fit_obs, held) = split_holdout(
        &prep.observations,
        &prep.grid,
        cfg.holdout.fraction,
        derive_seed(cfg.holdout.seed, r as u64),
    )?;
    if held.is_empty() {
        return domain(format!("holdout repetition {r} withheld no records"));
    }
    let model = build_model(cfg, prep, &fit_obs)?;
    let sampler = SamplerConfig {
        seed: derive_seed(cfg.sampler.seed, 1 + r as u64),
        ..cfg.sampler.clone()
    };
    let samples = run_chain(&sampler, &model, None)?;
    let settings = CoverageSettings {
        seed: derive_seed(cfg.coverage.seed, r as u64),
        ..cfg.coverage
    };
    let cov = holdout_coverage(&samples, &model, &held, &settings)?;
    Ok((held, cov))
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate(Command::Simulate)?;
    let spec = cfg.scenario()?;
    let dir = cfg
        .paths
        .data_dir
        .clone()
        .unwrap_or(cfg.output_dir()?.to_path_buf());
    let data = simulate_dataset(&spec)?;
    write_dataset(&dir, &spec.grid, &data)?;
    info!("simulated dataset written to {}", dir.display());
    Ok(dir)
}

/// What `fit` produced.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub samples: PosteriorSamples,
    pub coverage: Vec<Coverage>,
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<FitOutcome> {
    cfg.validate(Command::Fit)?;
    let out = cfg.output_dir()?;
    let prep = prepare(cfg)?;
    let model = build_model(cfg, &prep, &prep.observations)?;
    let samples = run_chain(&cfg.sampler, &model, None)?;
    std::fs::create_dir_all(out)?;
    write_trace(&out.join(TRACE_FILE), &samples)?;
    write_report(&out.join(REPORT_FILE), &report_of(&samples, prep.screened_zeros))?;
    info!("{} draws written to {}", samples.len(), out.join(TRACE_FILE).display());

    let mut coverage = Vec::new();
    if cfg.holdout.fraction > 0.0 {
        let reps: Vec<_> = (0..cfg.holdout.repetitions)
            .into_par_iter()
            .map(|r| holdout_repetition(cfg, &prep, r))
            .collect::<Result<_>>()?;
        for (r, (held, cov)) in reps.into_iter().enumerate() {
            write_holdout(&out.join(holdout_file(r)), &held)?;
            write_coverage(&out.join(coverage_file(r)), &cov)?;
            info!("holdout repetition {r}: {} records, coverage {:.3}", held.len(), cov.fraction);
            coverage.push(cov);
        }
    }
    Ok(FitOutcome { samples, coverage })
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate(Command::Predict)?;
    let out = cfg.output_dir()?;
    let prep = prepare(cfg)?;
    let model = build_model(cfg, &prep, &prep.observations)?;
    let samples = load_samples(&out.join(TRACE_FILE), &out.join(REPORT_FILE), &model.zero_state())?;
    let grid = &prep.grid;
    let mut gage_cells: Vec<usize> = prep.observations.gages.iter().map(|g| g.cell).collect();
    gage_cells.sort_unstable();
    gage_cells.dedup();

    let rain = posterior_rain_map(&samples)?;
    let probs = zero_prob_map(&samples, &gage_cells)?;
    let mut written = Vec::new();
    for t in 0..model.n_times() {
        let p = out.join(format!("rainmap_t{t}.csv"));
        write_rain_map(&p, grid, &rain, t)?;
        written.push(p);
        let p = out.join(format!("probmap_t{t}.csv"));
        write_prob_map(&p, grid, &probs, t)?;
        written.push(p);
        let p = out.join(format!("rainmap_t{t}.pgm"));
        write_pgm(&p, grid, &rain.mean[t])?;
        written.push(p);
    }
    let d = dic(&samples, &model)?;
    let p = out.join(DIC_FILE);
    write_text(&p, &d.to_text())?;
    written.push(p);
    Ok(written)
}

/// Covered and total counts for one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub covered: usize,
    pub total: usize,
}

impl Tally {
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.covered as f64 / self.total as f64)
    }
}

/// Per-repetition and pooled coverage, by stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub repetitions: Vec<BTreeMap<&'static str, Tally>>,
    pub pooled: BTreeMap<&'static str, Tally>,
}

impl CoverageReport {
    pub fn from_records(reps: &[Vec<crate::products::CoverageRecord>]) -> Result<Self> {
        if reps.iter().all(Vec::is_empty) {
            return domain("no held-out records to score");
        }
        let mut pooled = BTreeMap::new();
        let mut repetitions = Vec::new();
        for recs in reps {
            let mut m = BTreeMap::new();
            for s in [Stream::Gage, Stream::Radar] {
                let mut tally = Tally::default();
                for r in recs.iter().filter(|r| r.stream == s) {
                    tally.total += 1;
                    tally.covered += usize::from(r.inside);
                }
                let p: &mut Tally = pooled.entry(s.as_str()).or_default();
                p.total += tally.total;
                p.covered += tally.covered;
                m.insert(s.as_str(), tally);
            }
            repetitions.push(m);
        }
        Ok(Self { repetitions, pooled })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("repetition,stream,covered,total,fraction\n");
        let fmt = |t: &Tally| t.fraction().map_or(String::new(), |f| f.to_string());
        for (r, m) in self.repetitions.iter().enumerate() {
            for (stream, t) in m {
                s += &format!("{r},{stream},{},{},{}\n", t.covered, t.total, fmt(t));
            }
        }
        for (stream, t) in &self.pooled {
            s += &format!("pooled,{stream},{},{},{}\n", t.covered, t.total, fmt(t));
        }
        s
    }
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<CoverageReport> {
    cfg.validate(Command::Validate)?;
    let out = cfg.output_dir()?;
    let reps = cfg.holdout.repetitions;
    let mut records = Vec::new();
    for r in 0..reps {
        let hp = out.join(holdout_file(r));
        let cp = out.join(coverage_file(r));
        if !hp.is_file() || !cp.is_file() {
            return Err(Error::Config(format!(
                "holdout.repetitions = {reps} but {} or {} is missing",
                hp.display(),
                cp.display()
            )));
        }
        let held = read_holdout(&hp)?;
        let cov = read_coverage(&cp)?;
        let same = held.len() == cov.len() && held.iter().zip(&cov).all(|(h, c)| h.id == c.id && h.stream == c.stream);
        if !same {
            return domain(format!("{} and {} list different records", hp.display(), cp.display()));
        }
        records.push(cov);
    }
    if out.join(holdout_file(reps)).exists() {
        return Err(Error::Config(format!(
            "found more holdout files than holdout.repetitions = {reps}"
        )));
    }
    let report = CoverageReport::from_records(&records)?;
    write_text(&out.join(COVERAGE_REPORT_FILE), &report.to_csv())?;
    Ok(report)
}
