//! Adaptive random-walk Metropolis over the full model state.
//!
//! Every scalar parameter is its own block, coefficient vectors move as
//! multivariate random-walk blocks, and the latent fields are updated one
//! cell at a time with local evaluation of the terms that touch the cell.
//! Two joint moves ride along the scale and location ridges between the
//! latent field and the radar conversion parameters. Proposal scales are
//! tuned toward a 0.40 acceptance rate in windows and frozen at `adapt_end`.

use std::collections::BTreeSet;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{domain, Error, Result};
use crate::grid::{Displacement, Grid};
use crate::model::{check_finite, zero_inflated_loglik, Model, ModelState, ObsValue, TermMask, Terms};
use crate::stats::{effective_sample_size, logit, quantile_sorted};

pub const TARGET_ACCEPTANCE: f64 = 0.40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub adapt_window: usize,
    pub adapt_end: usize,
    /// Starting random-walk scale for parameter blocks (unconstrained scale).
    pub initial_scale: f64,
    /// Starting scale for single-site latent updates.
    pub initial_latent_scale: f64,
    /// Block names left untouched by the sampler (e.g. `y`, `c2`, `shift1[0]`).
    pub frozen: BTreeSet<String>,
    /// Joint moves along the latent/conversion ridges.
    pub joint_moves: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: 20_000,
            burn_in: 10_000,
            thin: 10,
            seed: 1,
            adapt_window: 50,
            adapt_end: 10_000,
            initial_scale: 0.05,
            initial_latent_scale: 0.2,
            frozen: BTreeSet::new(),
            joint_moves: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.thin == 0 || self.adapt_window == 0 {
            return Err(Error::Config("sampler.n_iter, thin and adapt_window must be positive".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "sampler.burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.adapt_end > self.burn_in {
            return Err(Error::Config(format!(
                "sampler.adapt_end ({}) must not exceed burn_in ({})",
                self.adapt_end, self.burn_in
            )));
        }
        if !(self.initial_scale > 0.0 && self.initial_latent_scale > 0.0) {
            return Err(Error::Config("initial proposal scales must be positive".into()));
        }
        Ok(())
    }

    pub fn kept_draws(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    /// Freeze every block except the named ones.
    pub fn only(mut self, model: &Model, free: &[&str]) -> Self {
        let mut names: BTreeSet<String> = block_list(model).iter().map(|b| b.name()).collect();
        names.insert(LATENT_BLOCK.to_string());
        for f in free {
            names.remove(*f);
        }
        self.frozen = names;
        self.joint_moves = false;
        self
    }
}

pub const LATENT_BLOCK: &str = "y";

/// `scale * exp(kappa * (rate - target))` with `kappa = 1`.
pub fn adapt_scale(scale: f64, observed_rate: f64, target: f64) -> f64 {
    adapt_scale_with(scale, observed_rate, target, 1.0)
}

pub fn adapt_scale_with(scale: f64, observed_rate: f64, target: f64, kappa: f64) -> f64 {
    scale * (kappa * (observed_rate - target)).exp()
}

/// Metropolis acceptance for a symmetric proposal. Non-finite proposals
/// are rejected.
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// One Gaussian random-walk step on an unconstrained vector.
///
/// Returns the next point, its log target and whether it was accepted.
pub fn metropolis_step<R, F>(current: &[f64], current_lp: f64, scale: f64, rng: &mut R, log_target: F) -> (Vec<f64>, f64, bool)
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    let proposal: Vec<f64> = current
        .iter()
        .map(|&x| x + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lp = log_target(&proposal);
    if lp.is_finite() && metropolis_accept(lp - current_lp, rng) {
        (proposal, lp, true)
    } else {
        (current.to_vec(), current_lp, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Transform {
    Identity,
    Log,
    Logit,
}

impl Transform {
    fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logit => logit(x),
        }
    }

    fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit => crate::stats::logistic(u),
        }
    }

    /// `ln |d x / d u|` at constrained value `x`.
    fn log_jacobian(self, x: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => x.ln(),
            Transform::Logit => x.ln() + (1.0 - x).ln(),
        }
    }
}

/// Parameter blocks updated by Metropolis steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockId {
    RhoY,
    Rho,
    Tau2Y,
    Tau2Eps(usize),
    AG,
    BG,
    AR,
    BR,
    C2,
    Sigma2G,
    Sigma2R,
    Alpha,
    Beta1,
    BetaDyn,
    C1,
    Shift1(usize),
    Shift2(usize),
    /// Rescale latent field against `c2` and the logistic slopes.
    JointScale,
    /// Translate latent field against intercepts.
    JointLocation,
    /// Move the wind coefficient while the shift splines absorb the part
    /// of the wind field they can represent.
    JointWind,
    /// Rescale the latent residuals of one time step against its precision.
    JointPrecision(usize),
}

impl BlockId {
    pub fn name(&self) -> String {
        match self {
            BlockId::RhoY => "rho_y".into(),
            BlockId::Rho => "rho".into(),
            BlockId::Tau2Y => "tau2_y".into(),
            BlockId::Tau2Eps(t) => format!("tau2_eps[{t}]"),
            BlockId::AG => "a_g".into(),
            BlockId::BG => "b_g".into(),
            BlockId::AR => "a_r".into(),
            BlockId::BR => "b_r".into(),
            BlockId::C2 => "c2".into(),
            BlockId::Sigma2G => "sigma2_g".into(),
            BlockId::Sigma2R => "sigma2_r".into(),
            BlockId::Alpha => "alpha".into(),
            BlockId::Beta1 => "beta1".into(),
            BlockId::BetaDyn => "beta_dyn".into(),
            BlockId::C1 => "c1".into(),
            BlockId::Shift1(t) => format!("shift1[{t}]"),
            BlockId::Shift2(t) => format!("shift2[{t}]"),
            BlockId::JointScale => "joint_scale".into(),
            BlockId::JointLocation => "joint_location".into(),
            BlockId::JointWind => "joint_wind".into(),
            BlockId::JointPrecision(t) => format!("joint_precision[{t}]"),
        }
    }

    fn transform(&self) -> Transform {
        match self {
            BlockId::RhoY | BlockId::Rho => Transform::Logit,
            BlockId::Tau2Y | BlockId::Tau2Eps(_) | BlockId::C2 | BlockId::Sigma2G | BlockId::Sigma2R => Transform::Log,
            _ => Transform::Identity,
        }
    }

    fn is_joint(&self) -> bool {
        matches!(
            self,
            BlockId::JointScale | BlockId::JointLocation | BlockId::JointWind | BlockId::JointPrecision(_)
        )
    }

    fn mask(&self) -> TermMask {
        let none = TermMask::NONE;
        match self {
            BlockId::RhoY => TermMask {
                latent_initial: true,
                latent_dyn: Some(None),
                ..none
            },
            BlockId::Rho | BlockId::Alpha | BlockId::BetaDyn => TermMask {
                latent_dyn: Some(None),
                ..none
            },
            BlockId::Tau2Y | BlockId::Beta1 => TermMask {
                latent_initial: true,
                ..none
            },
            BlockId::Tau2Eps(t) | BlockId::Shift1(t) | BlockId::Shift2(t) => TermMask {
                latent_dyn: Some(Some(t + 1)),
                ..none
            },
            BlockId::AG | BlockId::BG | BlockId::Sigma2G => TermMask { gage: true, ..none },
            BlockId::AR | BlockId::BR | BlockId::C2 | BlockId::Sigma2R | BlockId::C1 => TermMask { radar: true, ..none },
            BlockId::JointScale | BlockId::JointLocation | BlockId::JointPrecision(_) => TermMask::ALL,
            BlockId::JointWind => TermMask {
                latent_dyn: Some(None),
                ..none
            },
        }
    }

    /// Constrained values of the block.
    fn get(&self, s: &ModelState) -> Vec<f64> {
        match self {
            BlockId::RhoY => vec![s.rho_y],
            BlockId::Rho => vec![s.rho],
            BlockId::Tau2Y => vec![s.tau2_y],
            BlockId::Tau2Eps(t) => vec![s.tau2_eps[*t]],
            BlockId::AG => vec![s.a_g],
            BlockId::BG => vec![s.b_g],
            BlockId::AR => vec![s.a_r],
            BlockId::BR => vec![s.b_r],
            BlockId::C2 => vec![s.c2],
            BlockId::Sigma2G => vec![s.sigma2_g],
            BlockId::Sigma2R => vec![s.sigma2_r],
            BlockId::Alpha => vec![s.alpha],
            BlockId::Beta1 => s.beta1.clone(),
            BlockId::BetaDyn => s.beta_dyn.clone(),
            BlockId::C1 => s.c1.clone(),
            BlockId::Shift1(t) => s.shift1[*t].clone(),
            BlockId::Shift2(t) => s.shift2[*t].clone(),
            BlockId::JointScale | BlockId::JointLocation | BlockId::JointWind | BlockId::JointPrecision(_) => {
                vec![0.0]
            }
        }
    }

    fn set(&self, s: &mut ModelState, v: &[f64]) {
        match self {
            BlockId::RhoY => s.rho_y = v[0],
            BlockId::Rho => s.rho = v[0],
            BlockId::Tau2Y => s.tau2_y = v[0],
            BlockId::Tau2Eps(t) => s.tau2_eps[*t] = v[0],
            BlockId::AG => s.a_g = v[0],
            BlockId::BG => s.b_g = v[0],
            BlockId::AR => s.a_r = v[0],
            BlockId::BR => s.b_r = v[0],
            BlockId::C2 => s.c2 = v[0],
            BlockId::Sigma2G => s.sigma2_g = v[0],
            BlockId::Sigma2R => s.sigma2_r = v[0],
            BlockId::Alpha => s.alpha = v[0],
            BlockId::Beta1 => s.beta1.copy_from_slice(v),
            BlockId::BetaDyn => s.beta_dyn.copy_from_slice(v),
            BlockId::C1 => s.c1.copy_from_slice(v),
            BlockId::Shift1(t) => s.shift1[*t].copy_from_slice(v),
            BlockId::Shift2(t) => s.shift2[*t].copy_from_slice(v),
            BlockId::JointScale | BlockId::JointLocation | BlockId::JointWind | BlockId::JointPrecision(_) => {}
        }
    }

    fn unconstrained(&self, s: &ModelState) -> Vec<f64> {
        let tr = self.transform();
        self.get(s).into_iter().map(|x| tr.forward(x)).collect()
    }
}

/// Apply the scale move with log-factor `u`; returns `ln |J|`.
fn apply_joint_scale(s: &mut ModelState, u: f64) -> f64 {
    let up = u.exp();
    let down = (-u).exp();
    s.c2 *= up;
    s.b_r *= up;
    s.b_g *= up;
    let mut n_down = 0usize;
    for row in s.y.iter_mut() {
        for v in row.iter_mut() {
            *v *= down;
        }
        n_down += row.len();
    }
    for v in s.beta1.iter_mut().chain(s.beta_dyn.iter_mut()) {
        *v *= down;
    }
    n_down += s.beta1.len() + s.beta_dyn.len();
    let up2 = (2.0 * u).exp();
    s.tau2_y *= up2;
    for v in s.tau2_eps.iter_mut() {
        *v *= up2;
    }
    let n_tau = 1 + s.tau2_eps.len();
    u * (3.0 - n_down as f64 + 2.0 * n_tau as f64)
}

/// Apply the location move by `v`; volume preserving.
fn apply_joint_location(s: &mut ModelState, v: f64) -> f64 {
    for row in s.y.iter_mut() {
        for y in row.iter_mut() {
            *y += v;
        }
    }
    s.beta1[0] += v;
    s.beta_dyn[0] += v * (1.0 - s.rho);
    for c in s.c1.iter_mut() {
        *c -= s.c2 * v;
    }
    s.a_r -= s.b_r * v;
    s.a_g -= s.b_g * v;
    0.0
}

/// Apply the wind move by `u`; volume preserving.
fn apply_joint_wind(s: &mut ModelState, u: f64, proj: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    s.alpha += u;
    for (t, (pu, pv)) in proj.iter().enumerate() {
        for (c, p) in s.shift1[t].iter_mut().zip(pu) {
            *c -= u * p;
        }
        for (c, p) in s.shift2[t].iter_mut().zip(pv) {
            *c -= u * p;
        }
    }
    0.0
}

/// Scale the precision of step `t` by `exp(2u)` and its residuals around
/// the conditional mean by `exp(-u)`.
fn apply_joint_precision(model: &Model, s: &mut ModelState, t: usize, u: f64) -> f64 {
    let mean = model.latent_mean(t, s);
    let down = (-u).exp();
    for (y, m) in s.y[t].iter_mut().zip(&mean) {
        *y = m + down * (*y - m);
    }
    let up2 = (2.0 * u).exp();
    if t == 0 {
        s.tau2_y *= up2;
    } else {
        s.tau2_eps[t - 1] *= up2;
    }
    u * (2.0 - mean.len() as f64)
}

/// Least-squares coefficients of each transition's wind components in the
/// shift basis.
fn wind_projection(model: &Model) -> Vec<(Vec<f64>, Vec<f64>)> {
    let basis = &model.shift_basis;
    let n = model.n_cells();
    let k = basis.n_coef();
    let b = DMatrix::from_fn(n, k, |i, j| basis.row(i)[j]);
    let svd = b.svd(true, true);
    let solve = |w: &[f64]| -> Vec<f64> {
        let rhs = DVector::from_column_slice(w);
        svd.solve(&rhs, 1e-12)
            .map(|c| c.iter().copied().collect())
            .unwrap_or_else(|_| vec![0.0; k])
    };
    (1..model.n_times())
        .map(|t| (solve(&model.covariates.wind_u[t]), solve(&model.covariates.wind_v[t])))
        .collect()
}

pub fn block_list(model: &Model) -> Vec<BlockId> {
    let tr = model.n_times().saturating_sub(1);
    let mut out = vec![
        BlockId::RhoY,
        BlockId::Rho,
        BlockId::Tau2Y,
    ];
    out.extend((0..tr).map(BlockId::Tau2Eps));
    out.extend([
        BlockId::AG,
        BlockId::BG,
        BlockId::AR,
        BlockId::BR,
        BlockId::C2,
        BlockId::Sigma2G,
        BlockId::Sigma2R,
        BlockId::Alpha,
        BlockId::Beta1,
        BlockId::BetaDyn,
        BlockId::C1,
    ]);
    out.extend((0..tr).map(BlockId::Shift1));
    out.extend((0..tr).map(BlockId::Shift2));
    out
}

#[derive(Debug, Clone, Default)]
struct Counter {
    window_tried: usize,
    window_accepted: usize,
    adapt_tried: usize,
    adapt_accepted: usize,
    post_tried: usize,
    post_accepted: usize,
}

impl Counter {
    /// Wide proposals do not feed the scale adaptation.
    fn record(&mut self, accepted: bool, adapting: bool, wide: bool) {
        if !wide {
            self.window_tried += 1;
            self.window_accepted += usize::from(accepted);
        }
        if adapting {
            self.adapt_tried += 1;
            self.adapt_accepted += usize::from(accepted);
        } else {
            self.post_tried += 1;
            self.post_accepted += usize::from(accepted);
        }
    }

    fn take_window_rate(&mut self) -> Option<f64> {
        if self.window_tried == 0 {
            return None;
        }
        let r = self.window_accepted as f64 / self.window_tried as f64;
        self.window_tried = 0;
        self.window_accepted = 0;
        Some(r)
    }
}

/// Running mean and covariance (Welford) of a block's unconstrained values.
#[derive(Debug, Clone)]
struct RunningCov {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningCov {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d * d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        let d = self.mean.len();
        self.n += 1;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for j in 0..d {
            self.mean[j] += delta[j] / self.n as f64;
        }
        for a in 0..d {
            let da2 = x[a] - self.mean[a];
            for b in 0..d {
                self.m2[a * d + b] += delta[b] * da2;
            }
        }
    }

    /// Cholesky factor of the covariance normalized to unit mean variance.
    fn shape_factor(&self) -> Option<Vec<f64>> {
        let d = self.mean.len();
        if self.n < 2 * d + 20 {
            return None;
        }
        let mut c: Vec<f64> = self.m2.iter().map(|v| v / (self.n - 1) as f64).collect();
        let avg = (0..d).map(|j| c[j * d + j]).sum::<f64>() / d as f64;
        if !(avg > 0.0 && avg.is_finite()) {
            return None;
        }
        for v in c.iter_mut() {
            *v /= avg;
        }
        for j in 0..d {
            c[j * d + j] += 1e-6;
        }
        dense_cholesky(&c, d)
    }
}

fn dense_cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

#[derive(Debug, Clone)]
struct BlockTuner {
    id: BlockId,
    scale: f64,
    shape: Option<Vec<f64>>,
    stats: RunningCov,
    counter: Counter,
}

/// Per-block acceptance summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: String,
    pub acceptance_adapt: f64,
    pub acceptance: f64,
    pub final_scale: f64,
}

/// Latent field bookkeeping for single-site updates.
#[derive(Debug, Clone)]
pub struct LatentSweep {
    n: usize,
    /// `resid[t] = y[t] - mean[t]`.
    resid: Vec<Vec<f64>>,
    /// Cells whose source at transition `t` is a given cell, CSR by source.
    inv_offsets: Vec<Vec<usize>>,
    inv_items: Vec<Vec<usize>>,
    c1: Vec<f64>,
    mark: Vec<bool>,
}

impl LatentSweep {
    pub fn new(model: &Model, s: &ModelState) -> Self {
        let n = model.n_cells();
        let tt = model.n_times();
        let mut resid = Vec::with_capacity(tt);
        let mut inv_offsets = vec![Vec::new(); tt];
        let mut inv_items = vec![Vec::new(); tt];
        for t in 0..tt {
            let mean = if t == 0 {
                model.initial_mean(s)
            } else {
                let src = model.sources(t, s);
                let mut counts = vec![0usize; n + 1];
                for &k in &src {
                    counts[k + 1] += 1;
                }
                for i in 0..n {
                    counts[i + 1] += counts[i];
                }
                let mut fill = counts.clone();
                let mut items = vec![0usize; n];
                for (k, &srcv) in src.iter().enumerate() {
                    items[fill[srcv]] = k;
                    fill[srcv] += 1;
                }
                inv_offsets[t] = counts;
                inv_items[t] = items;
                crate::model::dynamics_mean_from_sources(t, &src, &s.y[t - 1], &model.covariates, s)
            };
            resid.push(s.y[t].iter().zip(&mean).map(|(a, b)| a - b).collect());
        }
        Self {
            n,
            resid,
            inv_offsets,
            inv_items,
            c1: model.c1_field(s),
            mark: vec![false; n],
        }
    }

    fn dependents(&self, t: usize, i: usize) -> &[usize] {
        let off = &self.inv_offsets[t];
        &self.inv_items[t][off[i]..off[i + 1]]
    }

    /// Change of the log-posterior when `y[t][i]` moves to `y_new`.
    pub fn site_delta(&mut self, model: &Model, s: &ModelState, t: usize, i: usize, y_new: f64) -> f64 {
        let n = self.n;
        let grid = &model.grid;
        let y_old = s.y[t][i];
        let d = y_new - y_old;

        let mut delta = 0.0;
        let rv = model.data.radar[t][i];
        if rv != ObsValue::Missing {
            let c1 = self.c1[i];
            delta += zero_inflated_loglik(rv, s.a_r, s.b_r, y_new, c1 + s.c2 * y_new, s.sigma2_r)
                - zero_inflated_loglik(rv, s.a_r, s.b_r, y_old, c1 + s.c2 * y_old, s.sigma2_r);
        }
        for &g in model.data.gages_at(n, t, i) {
            let v = model.data.gages[g].value;
            delta += zero_inflated_loglik(v, s.a_g, s.b_g, y_new, y_new, s.sigma2_g)
                - zero_inflated_loglik(v, s.a_g, s.b_g, y_old, y_old, s.sigma2_g);
        }

        let rho_y = s.rho_y;
        let tau2 = if t == 0 { s.tau2_y } else { s.tau2_eps[t - 1] };
        let r = &self.resid[t];
        let w = grid.neighbor_count(i) as f64;
        let nb: f64 = grid.neighbors_iter(i).map(|j| r[j]).sum();
        let ri = r[i];
        let dqf = w * (2.0 * ri * d + d * d) - 2.0 * rho_y * d * nb;
        delta -= 0.5 * tau2 * dqf;

        if t + 1 < model.n_times() {
            let c = -s.rho * d;
            let deps_range = {
                let off = &self.inv_offsets[t + 1];
                off[i]..off[i + 1]
            };
            if !deps_range.is_empty() {
                let r1 = &self.resid[t + 1];
                let items = &self.inv_items[t + 1][deps_range];
                for &k in items {
                    self.mark[k] = true;
                }
                let mut dqf = 0.0;
                let mut cross = 0.0;
                for &k in items {
                    let wk = grid.neighbor_count(k) as f64;
                    dqf += wk * (2.0 * r1[k] * c + c * c);
                    for l in grid.neighbors_iter(k) {
                        if !self.mark[l] {
                            cross += c * r1[l];
                        } else if l > k {
                            cross += c * r1[l] + r1[k] * c + c * c;
                        }
                    }
                }
                for &k in items {
                    self.mark[k] = false;
                }
                dqf -= 2.0 * rho_y * cross;
                delta -= 0.5 * s.tau2_eps[t] * dqf;
            }
        }
        delta
    }

    /// Commit `y[t][i] = y_new` and update the cached residuals.
    pub fn apply(&mut self, model: &Model, s: &mut ModelState, t: usize, i: usize, y_new: f64) {
        let d = y_new - s.y[t][i];
        s.y[t][i] = y_new;
        self.resid[t][i] += d;
        if t + 1 < model.n_times() {
            let c = -s.rho * d;
            let off = &self.inv_offsets[t + 1];
            for &k in &self.inv_items[t + 1][off[i]..off[i + 1]] {
                self.resid[t + 1][k] += c;
            }
        }
    }

    /// Cells at `t + 1` whose source is cell `i` at `t`.
    pub fn dependents_of(&self, t: usize, i: usize) -> Vec<usize> {
        if t + 1 >= self.resid.len() {
            return Vec::new();
        }
        self.dependents(t + 1, i).to_vec()
    }
}

/// Sampler state: proposal scales, shapes and acceptance counters.
#[derive(Debug, Clone)]
pub struct Sampler {
    config: SamplerConfig,
    blocks: Vec<BlockTuner>,
    joint: Vec<BlockTuner>,
    latent_scale: Vec<f64>,
    latent_counter: Vec<Counter>,
    latent_total: Counter,
    order: Vec<usize>,
    latent_frozen: bool,
    wind: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Sampler {
    pub fn new(model: &Model, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let all = block_list(model);
        let known: BTreeSet<String> = all
            .iter()
            .map(|b| b.name())
            .chain([LATENT_BLOCK.to_string()])
            .collect();
        if let Some(bad) = config.frozen.iter().find(|f| !known.contains(*f)) {
            return Err(Error::Config(format!("unknown sampler block {bad:?}")));
        }
        let mk = |id: BlockId, model: &Model| {
            let d = id.get(&model.zero_state()).len();
            BlockTuner {
                id,
                scale: config.initial_scale,
                shape: None,
                stats: RunningCov::new(d),
                counter: Counter::default(),
            }
        };
        let blocks: Vec<BlockTuner> = all
            .into_iter()
            .filter(|b| !config.frozen.contains(&b.name()))
            .map(|b| mk(b, model))
            .collect();
        let joint = if config.joint_moves {
            let mut v = vec![mk(BlockId::JointScale, model), mk(BlockId::JointLocation, model)];
            if model.n_times() > 1 {
                v.push(mk(BlockId::JointWind, model));
            }
            v.extend((0..model.n_times()).map(|t| mk(BlockId::JointPrecision(t), model)));
            v
        } else {
            Vec::new()
        };
        let n = model.n_cells();
        let tt = model.n_times();
        // checkerboard: color 0 cells first, then color 1
        let grid = &model.grid;
        let mut order: Vec<usize> = (0..n).filter(|&i| {
            let (x, y) = grid.coords(i);
            (x + y) % 2 == 0
        }).collect();
        order.extend((0..n).filter(|&i| {
            let (x, y) = grid.coords(i);
            (x + y) % 2 == 1
        }));
        Ok(Self {
            latent_frozen: config.frozen.contains(LATENT_BLOCK),
            latent_scale: vec![config.initial_latent_scale; n * tt],
            latent_counter: vec![Counter::default(); n * tt],
            latent_total: Counter::default(),
            config,
            blocks,
            joint,
            order,
            wind: wind_projection(model),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Proposal scale of a block, by name.
    pub fn scale_of(&self, name: &str) -> Option<f64> {
        self.blocks
            .iter()
            .chain(&self.joint)
            .find(|b| b.id.name() == name)
            .map(|b| b.scale)
    }

    pub fn latent_scales(&self) -> &[f64] {
        &self.latent_scale
    }

    /// One full sweep. `adapting` controls acceptance bookkeeping and the
    /// running covariance used for proposal shapes.
    pub fn sweep<R: Rng + ?Sized>(&mut self, model: &Model, s: &mut ModelState, rng: &mut R, adapting: bool) -> Result<Terms> {
        let n = model.n_cells();
        if !self.latent_frozen {
            let mut lat = LatentSweep::new(model, s);
            for t in 0..model.n_times() {
                for &i in &self.order {
                    let k = t * n + i;
                    let step: f64 = rng.sample(StandardNormal);
                    let y_new = s.y[t][i] + self.latent_scale[k] * step;
                    let delta = lat.site_delta(model, s, t, i, y_new);
                    let acc = delta.is_finite() && metropolis_accept(delta, rng);
                    if acc {
                        lat.apply(model, s, t, i, y_new);
                    }
                    self.latent_counter[k].record(acc, adapting, false);
                    self.latent_total.record(acc, adapting, false);
                }
            }
        }

        let mut terms = model.terms(s)?;
        check_finite(&terms)?;
        for b in self.blocks.iter_mut() {
            terms = update_block(model, s, b, terms, rng, adapting, &self.wind)?;
        }
        for b in self.joint.iter_mut() {
            terms = update_block(model, s, b, terms, rng, adapting, &self.wind)?;
        }
        if adapting {
            for b in self.blocks.iter_mut() {
                if b.stats.mean.len() > 1 {
                    let u = b.id.unconstrained(s);
                    b.stats.push(&u);
                }
            }
        }
        Ok(terms)
    }

    /// Retune every proposal from the acceptance of the last window.
    pub fn adapt(&mut self) {
        for b in self.blocks.iter_mut().chain(self.joint.iter_mut()) {
            if let Some(rate) = b.counter.take_window_rate() {
                b.scale = adapt_scale(b.scale, rate, TARGET_ACCEPTANCE);
            }
            if let Some(shape) = b.stats.shape_factor() {
                b.shape = Some(shape);
            }
        }
        for (scale, c) in self.latent_scale.iter_mut().zip(self.latent_counter.iter_mut()) {
            if let Some(rate) = c.take_window_rate() {
                *scale = adapt_scale(*scale, rate, TARGET_ACCEPTANCE);
            }
        }
    }

    pub fn reports(&self) -> Vec<BlockReport> {
        let rate = |a: usize, t: usize| if t == 0 { f64::NAN } else { a as f64 / t as f64 };
        let mut out = Vec::new();
        if !self.latent_frozen {
            let mean_scale = self.latent_scale.iter().sum::<f64>() / self.latent_scale.len().max(1) as f64;
            out.push(BlockReport {
                block: LATENT_BLOCK.into(),
                acceptance_adapt: rate(self.latent_total.adapt_accepted, self.latent_total.adapt_tried),
                acceptance: rate(self.latent_total.post_accepted, self.latent_total.post_tried),
                final_scale: mean_scale,
            });
        }
        for b in self.blocks.iter().chain(&self.joint) {
            out.push(BlockReport {
                block: b.id.name(),
                acceptance_adapt: rate(b.counter.adapt_accepted, b.counter.adapt_tried),
                acceptance: rate(b.counter.post_accepted, b.counter.post_tried),
                final_scale: b.scale,
            });
        }
        out
    }
}

/// Chance of a proposal at `WIDE_FACTOR` times the tuned scale, to cross
/// the flat stretches the rounded displacements leave in the posterior.
const WIDE_PROB: f64 = 0.1;
const WIDE_FACTOR: f64 = 10.0;

fn update_block<R: Rng + ?Sized>(
    model: &Model,
    s: &mut ModelState,
    b: &mut BlockTuner,
    terms: Terms,
    rng: &mut R,
    adapting: bool,
    wind: &[(Vec<f64>, Vec<f64>)],
) -> Result<Terms> {
    let id = b.id;
    let wide = rng.random::<f64>() < WIDE_PROB;
    let scale = if wide { b.scale * WIDE_FACTOR } else { b.scale };
    if id.is_joint() {
        let u = scale * rng.sample::<f64, _>(StandardNormal);
        let mut prop = s.clone();
        let log_jac = match id {
            BlockId::JointScale => apply_joint_scale(&mut prop, u),
            BlockId::JointWind => apply_joint_wind(&mut prop, u, wind),
            BlockId::JointPrecision(t) => apply_joint_precision(model, &mut prop, t, u),
            _ => apply_joint_location(&mut prop, u),
        };
        if prop.validate().is_ok() {
            if let Ok(pt) = model.update_terms(&prop, &terms, id.mask()) {
                if check_finite(&pt).is_ok() && metropolis_accept(pt.total() - terms.total() + log_jac, rng) {
                    *s = prop;
                    b.counter.record(true, adapting, wide);
                    return Ok(pt);
                }
            }
        }
        b.counter.record(false, adapting, wide);
        return Ok(terms);
    }

    let tr = id.transform();
    let old = id.get(s);
    let u_old: Vec<f64> = old.iter().map(|&x| tr.forward(x)).collect();
    let d = u_old.len();
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let step: Vec<f64> = match &b.shape {
        Some(l) => (0..d)
            .map(|i| (0..=i).map(|k| l[i * d + k] * z[k]).sum::<f64>())
            .collect(),
        None => z,
    };
    let u_new: Vec<f64> = u_old.iter().zip(&step).map(|(u, st)| u + scale * st).collect();
    let new: Vec<f64> = u_new.iter().map(|&u| tr.inverse(u)).collect();
    let jac_old: f64 = old.iter().map(|&x| tr.log_jacobian(x)).sum();
    let jac_new: f64 = new.iter().map(|&x| tr.log_jacobian(x)).sum();
    let valid = new.iter().all(|v| v.is_finite())
        && match tr {
            Transform::Logit => new.iter().all(|&v| v > 0.0 && v < 1.0),
            Transform::Log => new.iter().all(|&v| v > 0.0),
            Transform::Identity => true,
        };
    if valid {
        id.set(s, &new);
        if let Ok(pt) = model.update_terms(s, &terms, id.mask()) {
            if check_finite(&pt).is_ok() && metropolis_accept(pt.total() + jac_new - terms.total() - jac_old, rng) {
                b.counter.record(true, adapting, wide);
                return Ok(pt);
            }
        }
        id.set(s, &old);
    }
    b.counter.record(false, adapting, wide);
    Ok(terms)
}

/// Thinned post-burn-in draws with their deviances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub draws: Vec<ModelState>,
    /// `-2` times the observation log-likelihood of each draw.
    pub deviance: Vec<f64>,
    /// Iteration number (0-based) of each kept draw.
    pub iterations: Vec<usize>,
    pub acceptance: Vec<BlockReport>,
    pub warnings: Vec<String>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Trace of one scalar by flat parameter name.
    pub fn trace(&self, name: &str) -> Result<Vec<f64>> {
        self.draws
            .iter()
            .map(|d| d.param(name).ok_or_else(|| Error::Domain(format!("unknown parameter {name:?}"))))
            .collect()
    }
}

/// Warm start: latent field from the standard conversion of the radar data,
/// conversion parameters matching it, everything else at prior medians.
pub fn initial_state(model: &Model) -> ModelState {
    let n = model.n_cells();
    let grid = &model.grid;
    let mut s = model.zero_state();
    let ln200 = 200f64.ln();
    for t in 0..model.n_times() {
        let mut known: Vec<Option<f64>> = model.data.radar[t]
            .iter()
            .map(|v| match v {
                ObsValue::Log(lz) => Some((lz - ln200) / 1.6),
                _ => None,
            })
            .collect();
        if known.iter().all(Option::is_none) {
            // no usable radar: start from the positive gages, else zero
            let vals: Vec<f64> = model
                .data
                .gages
                .iter()
                .filter(|g| g.t == t)
                .filter_map(|g| match g.value {
                    ObsValue::Log(v) => Some(v),
                    _ => None,
                })
                .collect();
            let m = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
            known = vec![Some(m); n];
        }
        // fill gaps with the mean of already known neighbors, sweeping outward
        while known.iter().any(Option::is_none) {
            let snapshot = known.clone();
            for i in 0..n {
                if snapshot[i].is_none() {
                    let (sum, cnt) = grid
                        .neighbors_iter(i)
                        .filter_map(|j| snapshot[j])
                        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
                    if cnt > 0 {
                        known[i] = Some(sum / cnt as f64);
                    }
                }
            }
        }
        s.y[t] = known.into_iter().map(Option::unwrap_or_default).collect();
    }
    let pr = &model.config.priors;
    let gamma_median = |shape: f64, rate: f64| {
        Gamma::new(shape, rate)
            .map(|g| g.inverse_cdf(0.5))
            .unwrap_or(shape / rate)
    };
    let tau = gamma_median(pr.precision_shape, pr.precision_rate);
    s.tau2_y = tau;
    s.tau2_eps.iter_mut().for_each(|v| *v = tau);
    s.sigma2_g = 1.0 / gamma_median(pr.obs_precision_shape, pr.obs_precision_rate);
    s.sigma2_r = s.sigma2_g;
    s.c1.iter_mut().for_each(|c| *c = ln200);
    s.c2 = 1.6;
    s.rho_y = 0.5;
    s.rho = 0.5;
    for t in 1..model.n_times() {
        let d = best_translation(grid, &s.y[t - 1], &s.y[t], INIT_SEARCH_RADIUS);
        s.shift1[t - 1].iter_mut().for_each(|c| *c = f64::from(d.dx));
        s.shift2[t - 1].iter_mut().for_each(|c| *c = f64::from(d.dy));
    }
    s.beta1[0] = s.y[0].iter().sum::<f64>() / n as f64;
    if model.n_times() > 1 {
        let mut acc = 0.0;
        for t in 1..model.n_times() {
            acc += (0..n).map(|i| s.y[t][i] - 0.5 * s.y[t - 1][i]).sum::<f64>() / n as f64;
        }
        s.beta_dyn[0] = acc / (model.n_times() - 1) as f64;
    }
    s
}

/// Largest displacement (cells, per axis) tried when initializing shifts.
pub const INIT_SEARCH_RADIUS: i32 = 5;
/// Uniform displacement under which `prev`, read at the source cells, best
/// correlates with `next`.
pub fn best_translation(grid: &Grid, prev: &[f64], next: &[f64], radius: i32) -> Displacement {
    let mut best = (f64::NEG_INFINITY, Displacement::ZERO);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let d = Displacement::new(dx, dy);
            let src: Vec<f64> = (0..grid.len()).map(|i| prev[grid.shifted_index(i, d)]).collect();
            // prefer the smaller move on ties
            let score = correlation(next, &src) - 1e-9 * f64::from(dx.abs() + dy.abs());
            if score > best.0 {
                best = (score, d);
            }
        }
    }
    best.1
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    }
}

/// Derive an independent stream seed from a base seed and a stream id.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run one chain from `init` (or the warm start).
pub fn run_chain(config: &SamplerConfig, model: &Model, init: Option<ModelState>) -> Result<PosteriorSamples> {
    let mut sampler = Sampler::new(model, config.clone())?;
    let mut state = init.unwrap_or_else(|| initial_state(model));
    model.check_dims(&state)?;
    state.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draws = Vec::with_capacity(config.kept_draws());
    let mut deviance = Vec::with_capacity(config.kept_draws());
    let mut iterations = Vec::with_capacity(config.kept_draws());
    for it in 0..config.n_iter {
        let adapting = it < config.adapt_end;
        let terms = sampler.sweep(model, &mut state, &mut rng, adapting)?;
        if adapting && (it + 1) % config.adapt_window == 0 {
            sampler.adapt();
        }
        if it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0 {
            draws.push(state.clone());
            deviance.push(-2.0 * terms.observation());
            iterations.push(it);
        }
    }
    let acceptance = sampler.reports();
    let mut warnings = Vec::new();
    for r in &acceptance {
        if r.acceptance == 0.0 {
            let msg = format!("block {} accepted no proposals after adaptation", r.block);
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(PosteriorSamples {
        draws,
        deviance,
        iterations,
        acceptance,
        warnings,
    })
}

/// Posterior summary of one scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSummary {
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    pub ess: f64,
}

pub fn summarize(trace: &[f64]) -> Result<TraceSummary> {
    if trace.len() < 10 {
        return domain(format!("trace summary needs at least 10 draws (got {})", trace.len()));
    }
    let mut sorted = trace.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(TraceSummary {
        median: quantile_sorted(&sorted, 0.5),
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
        ess: effective_sample_size(trace),
    })
}

/// Median, central 95% interval and effective sample size of a parameter.
pub fn trace_summary(samples: &PosteriorSamples, param: &str) -> Result<TraceSummary> {
    summarize(&samples.trace(param)?)
}
