//! The hierarchical rainfall model: observation likelihoods, displacement
//! driven dynamics, priors and the unnormalized log-posterior.
//!
//! Observation densities are taken over the log of the positive value, so
//! the `1/r` Jacobian (constant given the data) is left out.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::car::{car_logdensity_cached, unscaled_quadratic_form, CarSpec, LogDetCache};
use crate::covariates::{CovariateFields, DESIGN_WIDTH};
use crate::error::{domain, Error, Result};
use crate::grid::{Displacement, Grid};
use crate::io::{GageRecord, ObservationSet, RadarRecord};
use crate::spline::TensorBasis;
use crate::stats::{ln_logistic, ln_one_minus_logistic, logistic, normal_logpdf, round_half_away};

/// Prior hyperparameters. Gamma laws use shape/rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Priors {
    /// Gamma prior on the CAR precisions `tau2_y` and `tau2_eps(t)`.
    pub precision_shape: f64,
    pub precision_rate: f64,
    /// Gamma prior on the multiplicative radar bias `c2`.
    pub c2_shape: f64,
    pub c2_rate: f64,
    /// Normal prior variance of the logistic coefficients.
    pub logistic_var: f64,
    /// Normal prior variance of regression, bias and shift coefficients.
    pub coef_var: f64,
    /// Gamma prior on the observation precisions `1/sigma2_g`, `1/sigma2_r`.
    pub obs_precision_shape: f64,
    pub obs_precision_rate: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            precision_shape: 0.5,
            precision_rate: 0.005,
            c2_shape: 1.0,
            c2_rate: 1.0,
            logistic_var: 100.0,
            coef_var: 100.0,
            obs_precision_shape: 0.5,
            obs_precision_rate: 0.005,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("precision_shape", self.precision_shape),
            ("precision_rate", self.precision_rate),
            ("c2_shape", self.c2_shape),
            ("c2_rate", self.c2_rate),
            ("logistic_var", self.logistic_var),
            ("coef_var", self.coef_var),
            ("obs_precision_shape", self.obs_precision_shape),
            ("obs_precision_rate", self.obs_precision_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("priors.{name} must be positive (got {v})")));
            }
        }
        Ok(())
    }
}

/// Structure of the bias and shift surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub bias_spatial: bool,
    pub shift_spatial: bool,
    pub basis_k_bias: usize,
    pub basis_k_shift: usize,
    pub priors: Priors,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset(4).expect("model4 exists")
    }
}

impl ModelConfig {
    /// The five comparison variants:
    /// 1 constant shift and bias; 2 spatial shift; 3 spatial bias;
    /// 4 both spatial with 3x3 splines; 5 both spatial with 5x5 splines.
    pub fn preset(k: u8) -> Result<Self> {
        let (bias_spatial, shift_spatial, basis) = match k {
            1 => (false, false, 3),
            2 => (false, true, 3),
            3 => (true, false, 3),
            4 => (true, true, 3),
            5 => (true, true, 5),
            _ => return Err(Error::Config(format!("unknown model preset model{k}; use model1..model5"))),
        };
        Ok(Self {
            bias_spatial,
            shift_spatial,
            basis_k_bias: basis,
            basis_k_shift: basis,
            priors: Priors::default(),
        })
    }

    pub fn preset_named(name: &str) -> Result<Self> {
        name.strip_prefix("model")
            .and_then(|d| d.parse::<u8>().ok())
            .map_or_else(
                || Err(Error::Config(format!("unknown model preset {name:?}; use model1..model5"))),
                Self::preset,
            )
    }

    pub fn effective_k_bias(&self) -> usize {
        if self.bias_spatial {
            self.basis_k_bias
        } else {
            1
        }
    }

    pub fn effective_k_shift(&self) -> usize {
        if self.shift_spatial {
            self.basis_k_shift
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis_k_bias == 0 || self.basis_k_shift == 0 {
            return Err(Error::Config("basis counts must be >= 1".into()));
        }
        self.priors.validate()
    }
}

/// Every unknown of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// Latent log rain rate, `[t][cell]`.
    pub y: Vec<Vec<f64>>,
    /// First-time mean coefficients: intercept, temperature, humidity, elevation.
    pub beta1: Vec<f64>,
    /// Dynamics coefficients: intercept, elevation, d(temperature), d(humidity).
    pub beta_dyn: Vec<f64>,
    pub rho_y: f64,
    pub rho: f64,
    pub tau2_y: f64,
    /// Innovation precision for each time `t >= 1`, stored at `t - 1`.
    pub tau2_eps: Vec<f64>,
    pub a_g: f64,
    pub b_g: f64,
    pub a_r: f64,
    pub b_r: f64,
    /// Additive radar bias spline coefficients.
    pub c1: Vec<f64>,
    pub c2: f64,
    pub sigma2_g: f64,
    pub sigma2_r: f64,
    /// Wind-to-displacement coefficient (cells per m/s).
    pub alpha: f64,
    /// Shift spline coefficients per transition (`t - 1`), east component.
    pub shift1: Vec<Vec<f64>>,
    /// North component.
    pub shift2: Vec<Vec<f64>>,
}

impl ModelState {
    /// Zero latent field and neutral parameter values of the right shapes.
    pub fn zeros(n_cells: usize, n_times: usize, n_bias: usize, n_shift: usize) -> Self {
        let tr = n_times.saturating_sub(1);
        Self {
            y: vec![vec![0.0; n_cells]; n_times],
            beta1: vec![0.0; DESIGN_WIDTH],
            beta_dyn: vec![0.0; DESIGN_WIDTH],
            rho_y: 0.5,
            rho: 0.5,
            tau2_y: 1.0,
            tau2_eps: vec![1.0; tr],
            a_g: 0.0,
            b_g: 0.0,
            a_r: 0.0,
            b_r: 0.0,
            c1: vec![0.0; n_bias],
            c2: 1.0,
            sigma2_g: 1.0,
            sigma2_r: 1.0,
            alpha: 0.0,
            shift1: vec![vec![0.0; n_shift]; tr],
            shift2: vec![vec![0.0; n_shift]; tr],
        }
    }

    pub fn n_times(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Error::Domain(format!("{name} = {v} violates its constraint"));
        for (name, v) in [("rho_y", self.rho_y), ("rho", self.rho)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(bad(name, v));
            }
        }
        for (name, v) in [
            ("tau2_y", self.tau2_y),
            ("c2", self.c2),
            ("sigma2_g", self.sigma2_g),
            ("sigma2_r", self.sigma2_r),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(name, v));
            }
        }
        if let Some(&v) = self.tau2_eps.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(bad("tau2_eps", v));
        }
        let finite = self
            .y
            .iter()
            .flatten()
            .chain(&self.beta1)
            .chain(&self.beta_dyn)
            .chain(&self.c1)
            .chain(self.shift1.iter().flatten())
            .chain(self.shift2.iter().flatten())
            .chain([&self.a_g, &self.b_g, &self.a_r, &self.b_r, &self.alpha])
            .all(|v| v.is_finite());
        if !finite {
            return domain("state has non-finite entries");
        }
        Ok(())
    }
}

/// One observation value as the likelihood sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObsValue {
    Missing,
    Zero,
    /// Natural log of a positive reading.
    Log(f64),
}

impl ObsValue {
    pub fn from_reading(v: Option<f64>) -> Result<Self> {
        match v {
            None => Ok(Self::Missing),
            Some(x) if x == 0.0 => Ok(Self::Zero),
            Some(x) if x > 0.0 && x.is_finite() => Ok(Self::Log(x.ln())),
            Some(x) => domain(format!("observation must be >= 0 (got {x})")),
        }
    }
}

/// Zero-inflated log-normal log-likelihood of one reading.
#[inline]
pub fn zero_inflated_loglik(v: ObsValue, a: f64, b: f64, y: f64, log_mean: f64, var: f64) -> f64 {
    match v {
        ObsValue::Missing => 0.0,
        ObsValue::Zero => ln_logistic(a + b * y),
        ObsValue::Log(lv) => ln_one_minus_logistic(a + b * y) + normal_logpdf(lv, log_mean, var),
    }
}

/// Probability of a zero reading, `logistic(a + b y)`.
pub fn logistic_zero_prob(a: f64, b: f64, y: f64) -> f64 {
    logistic(a + b * y)
}

/// Gage log-likelihood; missing readings contribute nothing.
pub fn gage_loglik(record: &GageRecord, y_cell: f64, state: &ModelState) -> Result<f64> {
    let v = ObsValue::from_reading(record.rain)?;
    Ok(zero_inflated_loglik(v, state.a_g, state.b_g, y_cell, y_cell, state.sigma2_g))
}

/// Radar log-likelihood with conversion mean `c1_i + c2 y`.
pub fn radar_loglik(record: &RadarRecord, y_cell: f64, c1_i: f64, state: &ModelState) -> Result<f64> {
    let v = ObsValue::from_reading(record.reflectivity)?;
    Ok(zero_inflated_loglik(
        v,
        state.a_r,
        state.b_r,
        y_cell,
        c1_i + state.c2 * y_cell,
        state.sigma2_r,
    ))
}

/// Integer displacement of every cell for the transition into time `t >= 1`.
pub fn displacement_field(t: usize, cov: &CovariateFields, basis: &TensorBasis, state: &ModelState) -> Vec<Displacement> {
    debug_assert!(t >= 1);
    let s1 = &state.shift1[t - 1];
    let s2 = &state.shift2[t - 1];
    (0..cov.n_cells())
        .map(|i| {
            let d1 = state.alpha * cov.wind_u[t][i] + basis.eval_cell(i, s1);
            let d2 = state.alpha * cov.wind_v[t][i] + basis.eval_cell(i, s2);
            Displacement::new(round_half_away(d1), round_half_away(d2))
        })
        .collect()
}

/// Source cell of every cell for the transition into time `t`.
pub fn source_cells(grid: &Grid, t: usize, cov: &CovariateFields, basis: &TensorBasis, state: &ModelState) -> Vec<usize> {
    displacement_field(t, cov, basis, state)
        .into_iter()
        .enumerate()
        .map(|(i, d)| grid.shifted_index(i, d))
        .collect()
}

/// Conditional mean of `Y(t)` given `Y(t-1)`.
pub fn dynamics_mean(
    grid: &Grid,
    t: usize,
    y_prev: &[f64],
    cov: &CovariateFields,
    basis: &TensorBasis,
    state: &ModelState,
) -> Vec<f64> {
    let src = source_cells(grid, t, cov, basis, state);
    dynamics_mean_from_sources(t, &src, y_prev, cov, state)
}

pub(crate) fn dynamics_mean_from_sources(
    t: usize,
    src: &[usize],
    y_prev: &[f64],
    cov: &CovariateFields,
    state: &ModelState,
) -> Vec<f64> {
    src.iter()
        .enumerate()
        .map(|(i, &s)| state.rho * y_prev[s] + dot(&cov.dynamic_row(t, i), &state.beta_dyn))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Observation data in likelihood-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct GageObs {
    pub cell: usize,
    pub t: usize,
    pub value: ObsValue,
}

#[derive(Debug, Clone)]
pub struct ModelData {
    pub n_times: usize,
    /// `radar[t][cell]`.
    pub radar: Vec<Vec<ObsValue>>,
    pub gages: Vec<GageObs>,
    /// Non-missing gage indices per `t * n + cell`.
    gage_at: Vec<Vec<usize>>,
}

impl ModelData {
    pub fn new(grid: &Grid, n_times: usize, radar: Vec<Vec<ObsValue>>, gages: Vec<GageObs>) -> Result<Self> {
        let n = grid.len();
        if radar.len() != n_times || radar.iter().any(|r| r.len() != n) {
            return domain("radar data do not match the grid and time axis");
        }
        let mut gage_at = vec![Vec::new(); n * n_times];
        for (k, g) in gages.iter().enumerate() {
            if g.t >= n_times || g.cell >= n {
                return domain(format!("gage record {k} lies outside the grid or time axis"));
            }
            if g.value != ObsValue::Missing {
                gage_at[g.t * n + g.cell].push(k);
            }
        }
        Ok(Self {
            n_times,
            radar,
            gages,
            gage_at,
        })
    }

    pub fn from_observations(obs: &ObservationSet, grid: &Grid) -> Result<Self> {
        let radar = obs
            .radar
            .iter()
            .map(|f| f.iter().map(|&v| ObsValue::from_reading(v)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let gages = obs
            .gages
            .iter()
            .map(|g| {
                Ok(GageObs {
                    cell: g.cell,
                    t: g.t,
                    value: ObsValue::from_reading(g.rain)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, obs.n_times, radar, gages)
    }

    pub fn gages_at(&self, n_cells: usize, t: usize, cell: usize) -> &[usize] {
        &self.gage_at[t * n_cells + cell]
    }
}

/// Separately cached pieces of the log-posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Terms {
    pub gage: f64,
    pub radar: f64,
    /// Latent field log-densities, one per time step.
    pub latent: Vec<f64>,
    pub prior: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.gage + self.radar + self.latent.iter().sum::<f64>() + self.prior
    }

    pub fn observation(&self) -> f64 {
        self.gage + self.radar
    }
}

/// Which terms an update touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermMask {
    pub gage: bool,
    pub radar: bool,
    pub latent_initial: bool,
    /// Transition terms; `Some(t)` restricts to one time step.
    pub latent_dyn: Option<Option<usize>>,
}

impl TermMask {
    pub const ALL: TermMask = TermMask {
        gage: true,
        radar: true,
        latent_initial: true,
        latent_dyn: Some(None),
    };
    pub const NONE: TermMask = TermMask {
        gage: false,
        radar: false,
        latent_initial: false,
        latent_dyn: None,
    };
}

/// Everything fixed during sampling.
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: Grid,
    pub config: ModelConfig,
    pub covariates: CovariateFields,
    pub bias_basis: TensorBasis,
    pub shift_basis: TensorBasis,
    pub data: ModelData,
    logdet: LogDetCache,
}

impl Model {
    pub fn new(grid: Grid, config: ModelConfig, covariates: CovariateFields, data: ModelData) -> Result<Self> {
        config.validate()?;
        if covariates.n_cells() != grid.len() || covariates.n_times != data.n_times {
            return domain("covariates do not match the grid and time axis");
        }
        let bias_basis = TensorBasis::new(&grid, config.effective_k_bias())?;
        let shift_basis = TensorBasis::new(&grid, config.effective_k_shift())?;
        let logdet = LogDetCache::new(&grid);
        Ok(Self {
            grid,
            config,
            covariates,
            bias_basis,
            shift_basis,
            data,
            logdet,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len()
    }

    pub fn n_times(&self) -> usize {
        self.data.n_times
    }

    /// A zero state with this model's dimensions.
    pub fn zero_state(&self) -> ModelState {
        ModelState::zeros(
            self.n_cells(),
            self.n_times(),
            self.bias_basis.n_coef(),
            self.shift_basis.n_coef(),
        )
    }

    pub fn check_dims(&self, s: &ModelState) -> Result<()> {
        let n = self.n_cells();
        let tt = self.n_times();
        let tr = tt.saturating_sub(1);
        let ok = s.y.len() == tt
            && s.y.iter().all(|r| r.len() == n)
            && s.beta1.len() == DESIGN_WIDTH
            && s.beta_dyn.len() == DESIGN_WIDTH
            && s.tau2_eps.len() == tr
            && s.c1.len() == self.bias_basis.n_coef()
            && s.shift1.len() == tr
            && s.shift2.len() == tr
            && s.shift1.iter().chain(&s.shift2).all(|v| v.len() == self.shift_basis.n_coef());
        if ok {
            Ok(())
        } else {
            domain("state dimensions do not match the model")
        }
    }

    pub fn c1_field(&self, s: &ModelState) -> Vec<f64> {
        self.bias_basis.eval(&s.c1)
    }

    pub fn gage_term(&self, s: &ModelState) -> f64 {
        self.data
            .gages
            .iter()
            .map(|g| {
                let y = s.y[g.t][g.cell];
                zero_inflated_loglik(g.value, s.a_g, s.b_g, y, y, s.sigma2_g)
            })
            .sum()
    }

    pub fn radar_term(&self, s: &ModelState) -> f64 {
        let c1 = self.c1_field(s);
        let mut total = 0.0;
        for (t, field) in self.data.radar.iter().enumerate() {
            for (i, &v) in field.iter().enumerate() {
                let y = s.y[t][i];
                total += zero_inflated_loglik(v, s.a_r, s.b_r, y, c1[i] + s.c2 * y, s.sigma2_r);
            }
        }
        total
    }

    /// Mean of the latent field at `t = 0`.
    pub fn initial_mean(&self, s: &ModelState) -> Vec<f64> {
        (0..self.n_cells())
            .map(|i| dot(&self.covariates.initial_row(i), &s.beta1))
            .collect()
    }

    pub fn sources(&self, t: usize, s: &ModelState) -> Vec<usize> {
        source_cells(&self.grid, t, &self.covariates, &self.shift_basis, s)
    }

    pub fn latent_mean(&self, t: usize, s: &ModelState) -> Vec<f64> {
        if t == 0 {
            self.initial_mean(s)
        } else {
            dynamics_mean(&self.grid, t, &s.y[t - 1], &self.covariates, &self.shift_basis, s)
        }
    }

    pub fn latent_precision(&self, t: usize, s: &ModelState) -> CarSpec {
        CarSpec {
            rho: s.rho_y,
            tau2: if t == 0 { s.tau2_y } else { s.tau2_eps[t - 1] },
        }
    }

    pub fn latent_term(&self, t: usize, s: &ModelState) -> Result<f64> {
        let mean = self.latent_mean(t, s);
        car_logdensity_cached(&self.grid, &s.y[t], &mean, self.latent_precision(t, s), &self.logdet)
    }

    /// `log det(D_w - rho W)` through the model's cache.
    pub fn unscaled_logdet(&self, rho: f64) -> Result<f64> {
        self.logdet.unscaled_logdet(rho)
    }

    /// Local change of a CAR quadratic form, for the sampler.
    pub fn quadratic_form(&self, rho: f64, r: &[f64]) -> f64 {
        unscaled_quadratic_form(&self.grid, rho, r)
    }

    pub fn log_prior(&self, s: &ModelState) -> f64 {
        let p = &self.config.priors;
        let ln_gamma_pdf = |x: f64, a: f64, b: f64| a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x;
        // variance whose precision is Gamma(a, b)
        let ln_inv_gamma_pdf = |v: f64, a: f64, b: f64| ln_gamma_pdf(1.0 / v, a, b) - 2.0 * v.ln();
        let ln_norm = |x: f64, var: f64| normal_logpdf(x, 0.0, var);
        let mut lp = 0.0;
        lp += ln_gamma_pdf(s.tau2_y, p.precision_shape, p.precision_rate);
        lp += s
            .tau2_eps
            .iter()
            .map(|&t| ln_gamma_pdf(t, p.precision_shape, p.precision_rate))
            .sum::<f64>();
        lp += ln_gamma_pdf(s.c2, p.c2_shape, p.c2_rate);
        lp += [s.a_g, s.b_g, s.a_r, s.b_r]
            .iter()
            .map(|&v| ln_norm(v, p.logistic_var))
            .sum::<f64>();
        lp += s
            .beta1
            .iter()
            .chain(&s.beta_dyn)
            .chain(&s.c1)
            .chain(std::iter::once(&s.alpha))
            .chain(s.shift1.iter().flatten())
            .chain(s.shift2.iter().flatten())
            .map(|&v| ln_norm(v, p.coef_var))
            .sum::<f64>();
        lp += ln_inv_gamma_pdf(s.sigma2_g, p.obs_precision_shape, p.obs_precision_rate);
        lp += ln_inv_gamma_pdf(s.sigma2_r, p.obs_precision_shape, p.obs_precision_rate);
        // rho_y and rho are uniform on (0, 1).
        lp
    }

    /// Recompute the masked terms of `base` for state `s`.
    pub fn update_terms(&self, s: &ModelState, base: &Terms, mask: TermMask) -> Result<Terms> {
        let mut out = base.clone();
        if mask.gage {
            out.gage = self.gage_term(s);
        }
        if mask.radar {
            out.radar = self.radar_term(s);
        }
        if mask.latent_initial {
            out.latent[0] = self.latent_term(0, s)?;
        }
        match mask.latent_dyn {
            None => {}
            Some(None) => {
                for t in 1..self.n_times() {
                    out.latent[t] = self.latent_term(t, s)?;
                }
            }
            Some(Some(t)) => out.latent[t] = self.latent_term(t, s)?,
        }
        out.prior = self.log_prior(s);
        Ok(out)
    }

    pub fn terms(&self, s: &ModelState) -> Result<Terms> {
        let base = Terms {
            gage: 0.0,
            radar: 0.0,
            latent: vec![0.0; self.n_times()],
            prior: 0.0,
        };
        self.update_terms(s, &base, TermMask::ALL)
    }

    /// Unnormalized log-posterior.
    pub fn log_posterior(&self, s: &ModelState) -> Result<f64> {
        self.check_dims(s)?;
        s.validate()?;
        let terms = self.terms(s)?;
        check_finite(&terms)?;
        Ok(terms.total())
    }

    /// `-2` times the observation log-likelihood.
    pub fn deviance(&self, s: &ModelState) -> f64 {
        -2.0 * (self.gage_term(s) + self.radar_term(s))
    }
}

pub fn check_finite(terms: &Terms) -> Result<()> {
    if !terms.gage.is_finite() {
        return Err(Error::NonFinite(format!("gage likelihood = {}", terms.gage)));
    }
    if !terms.radar.is_finite() {
        return Err(Error::NonFinite(format!("radar likelihood = {}", terms.radar)));
    }
    if let Some((t, v)) = terms.latent.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("latent field density at t={t} = {v}")));
    }
    if !terms.prior.is_finite() {
        return Err(Error::NonFinite(format!("log prior = {}", terms.prior)));
    }
    Ok(())
}

/// Log-posterior of a state against a model.
pub fn log_posterior(state: &ModelState, model: &Model) -> Result<f64> {
    model.log_posterior(state)
}
