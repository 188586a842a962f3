//! Posterior summaries: rain and zero-rain maps, the analytic space-time
//! covariance of the latent process, DIC and hold-out calibration.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::car::{car_precision, CarSpec};
use crate::error::{domain, Error, Result};
use crate::grid::Grid;
use crate::io::{write_text, ObservationSet};
use crate::mcmc::{derive_seed, PosteriorSamples};
use crate::model::{logistic_zero_prob, Model, ModelState};
use crate::simulate::CovProbe;
use crate::stats::{logistic, logit, quantile_sorted};

/// Minimum number of draws for any posterior summary.
pub const MIN_DRAWS: usize = 10;

fn require_draws(samples: &PosteriorSamples) -> Result<()> {
    if samples.len() < MIN_DRAWS {
        return domain(format!(
            "posterior summaries need at least {MIN_DRAWS} draws (got {})",
            samples.len()
        ));
    }
    Ok(())
}

/// Cellwise posterior summaries of rain rate `exp(Y)` in mm/h, `[t][cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RainMap {
    pub mean: Vec<Vec<f64>>,
    pub median: Vec<Vec<f64>>,
    pub q025: Vec<Vec<f64>>,
    pub q975: Vec<Vec<f64>>,
}

pub fn posterior_rain_map(samples: &PosteriorSamples) -> Result<RainMap> {
    require_draws(samples)?;
    let tt = samples.draws[0].y.len();
    let n = samples.draws[0].y[0].len();
    let mut map = RainMap {
        mean: vec![vec![0.0; n]; tt],
        median: vec![vec![0.0; n]; tt],
        q025: vec![vec![0.0; n]; tt],
        q975: vec![vec![0.0; n]; tt],
    };
    for t in 0..tt {
        let cells: Vec<[f64; 4]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut v: Vec<f64> = samples.draws.iter().map(|d| d.y[t][i].exp()).collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                v.sort_by(f64::total_cmp);
                [
                    mean,
                    quantile_sorted(&v, 0.5),
                    quantile_sorted(&v, 0.025),
                    quantile_sorted(&v, 0.975),
                ]
            })
            .collect();
        for (i, c) in cells.into_iter().enumerate() {
            map.mean[t][i] = c[0];
            map.median[t][i] = c[1];
            map.q025[t][i] = c[2];
            map.q975[t][i] = c[3];
        }
    }
    Ok(map)
}

/// Posterior mean zero-rain probabilities, `[t][cell]`; the gage layer is
/// filled at gage cells only.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroProbMap {
    pub pi_r: Vec<Vec<f64>>,
    pub pi_g: Vec<Vec<Option<f64>>>,
}

pub fn zero_prob_map(samples: &PosteriorSamples, gage_cells: &[usize]) -> Result<ZeroProbMap> {
    require_draws(samples)?;
    let tt = samples.draws[0].y.len();
    let n = samples.draws[0].y[0].len();
    let m = samples.len() as f64;
    let mut pi_r = vec![vec![0.0; n]; tt];
    let mut pi_g = vec![vec![None; n]; tt];
    for t in 0..tt {
        pi_r[t] = (0..n)
            .into_par_iter()
            .map(|i| {
                samples
                    .draws
                    .iter()
                    .map(|d| logistic_zero_prob(d.a_r, d.b_r, d.y[t][i]))
                    .sum::<f64>()
                    / m
            })
            .collect();
        for &c in gage_cells {
            if c >= n {
                return domain(format!("gage cell {c} outside the grid"));
            }
            pi_g[t][c] = Some(
                samples
                    .draws
                    .iter()
                    .map(|d| logistic_zero_prob(d.a_g, d.b_g, d.y[t][c]))
                    .sum::<f64>()
                    / m,
            );
        }
    }
    Ok(ZeroProbMap { pi_r, pi_g })
}

/// Space-time covariance of the latent process with shifts and variance
/// parameters held at the values of one state.
#[derive(Debug, Clone)]
pub struct LatentCovariance {
    /// Marginal covariance of `Y(t)` for every `t`.
    sigma: Vec<DMatrix<f64>>,
    /// Source cell of every cell at each transition (`src[0]` unused).
    src: Vec<Vec<usize>>,
    rho: f64,
    grid: Grid,
}

impl LatentCovariance {
    pub fn new(model: &Model, s: &ModelState) -> Result<Self> {
        let grid = &model.grid;
        let n = grid.len();
        let dense = car_precision(grid, CarSpec::new(s.rho_y, 1.0)?)?.to_dense();
        let q = DMatrix::from_fn(n, n, |i, j| dense[i][j]);
        let unit = q
            .cholesky()
            .ok_or_else(|| Error::Factorization("CAR precision is not positive definite".into()))?
            .inverse();
        let mut sigma = vec![&unit / s.tau2_y];
        let mut src = vec![Vec::new()];
        for t in 1..model.n_times() {
            let sc = model.sources(t, s);
            let prev = &sigma[t - 1];
            let rho2 = s.rho * s.rho;
            let next = DMatrix::from_fn(n, n, |i, j| rho2 * prev[(sc[i], sc[j])] + unit[(i, j)] / s.tau2_eps[t - 1]);
            sigma.push(next);
            src.push(sc);
        }
        Ok(Self {
            sigma,
            src,
            rho: s.rho,
            grid: grid.clone(),
        })
    }

    pub fn n_times(&self) -> usize {
        self.sigma.len()
    }

    /// `cov(Y_i(t), Y_{i+h}(t + tau))` with 0-based `t`.
    pub fn cov(&self, probe: &CovProbe) -> Result<f64> {
        if probe.t + probe.tau >= self.n_times() {
            return domain(format!(
                "lag t={} tau={} runs past the last time step {}",
                probe.t,
                probe.tau,
                self.n_times() - 1
            ));
        }
        let j = probe.partner(&self.grid)?;
        // trace the later cell back along its shift chain to time t
        let mut s = j;
        for u in (probe.t + 1..=probe.t + probe.tau).rev() {
            s = self.src[u][s];
        }
        Ok(self.rho.powi(probe.tau as i32) * self.sigma[probe.t][(probe.i, s)])
    }
}

/// Convenience wrapper evaluating one probe.
pub fn latent_covariance(model: &Model, s: &ModelState, probe: &CovProbe) -> Result<f64> {
    LatentCovariance::new(model, s)?.cov(probe)
}

/// Posterior mean state: latent fields and unbounded parameters averaged
/// directly, positive parameters on the log scale and correlations on the
/// logit scale.
pub fn posterior_mean_state(samples: &PosteriorSamples) -> Result<ModelState> {
    if samples.is_empty() {
        return domain("no draws to average");
    }
    let m = samples.len() as f64;
    let first = &samples.draws[0];
    let mut out = first.clone();
    let avg = |f: &dyn Fn(&ModelState) -> f64| samples.draws.iter().map(f).sum::<f64>() / m;
    let avg_log = |f: &dyn Fn(&ModelState) -> f64| avg(&|d| f(d).ln()).exp();
    let avg_logit = |f: &dyn Fn(&ModelState) -> f64| logistic(avg(&|d| logit(f(d))));
    for t in 0..first.y.len() {
        for i in 0..first.y[t].len() {
            out.y[t][i] = avg(&|d| d.y[t][i]);
        }
    }
    for j in 0..first.beta1.len() {
        out.beta1[j] = avg(&|d| d.beta1[j]);
    }
    for j in 0..first.beta_dyn.len() {
        out.beta_dyn[j] = avg(&|d| d.beta_dyn[j]);
    }
    for j in 0..first.c1.len() {
        out.c1[j] = avg(&|d| d.c1[j]);
    }
    for t in 0..first.shift1.len() {
        for j in 0..first.shift1[t].len() {
            out.shift1[t][j] = avg(&|d| d.shift1[t][j]);
            out.shift2[t][j] = avg(&|d| d.shift2[t][j]);
        }
        out.tau2_eps[t] = avg_log(&|d| d.tau2_eps[t]);
    }
    out.rho_y = avg_logit(&|d| d.rho_y);
    out.rho = avg_logit(&|d| d.rho);
    out.tau2_y = avg_log(&|d| d.tau2_y);
    out.c2 = avg_log(&|d| d.c2);
    out.sigma2_g = avg_log(&|d| d.sigma2_g);
    out.sigma2_r = avg_log(&|d| d.sigma2_r);
    out.a_g = avg(&|d| d.a_g);
    out.b_g = avg(&|d| d.b_g);
    out.a_r = avg(&|d| d.a_r);
    out.b_r = avg(&|d| d.b_r);
    out.alpha = avg(&|d| d.alpha);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    pub d_bar: f64,
    pub p_d: f64,
}

impl Dic {
    /// Assemble from the mean deviance and the deviance at the posterior mean.
    pub fn from_parts(d_bar: f64, d_at_mean: f64) -> Self {
        let p_d = d_bar - d_at_mean;
        Self {
            dic: d_bar + p_d,
            d_bar,
            p_d,
        }
    }

    pub fn to_text(&self) -> String {
        format!("DIC {}\nD_bar {}\np_D {}\n", self.dic, self.d_bar, self.p_d)
    }
}

pub fn dic(samples: &PosteriorSamples, model: &Model) -> Result<Dic> {
    if samples.deviance.is_empty() || samples.deviance.len() != samples.len() {
        return domain("deviance must be recorded for every draw");
    }
    if let Some(d) = samples.deviance.iter().find(|d| !d.is_finite()) {
        return Err(Error::NonFinite(format!("recorded deviance {d}")));
    }
    let d_bar = samples.deviance.iter().sum::<f64>() / samples.deviance.len() as f64;
    let mean_state = posterior_mean_state(samples)?;
    let d_hat = model.deviance(&mean_state);
    if !d_hat.is_finite() {
        return Err(Error::NonFinite(format!("deviance at the posterior mean = {d_hat}")));
    }
    Ok(Dic::from_parts(d_bar, d_hat))
}

/// Which data stream a held-out record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Gage,
    Radar,
}

impl Stream {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stream::Gage => "gage",
            Stream::Radar => "radar",
        }
    }
}

/// One observation withheld from fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub id: String,
    pub stream: Stream,
    pub cell: usize,
    pub t: usize,
    /// Raw reading: rain rate for gages, reflectivity for radar.
    pub value: f64,
}

/// Remove `fraction` of the non-missing gage records and of the
/// non-missing radar records, chosen uniformly at random.
pub fn split_holdout(obs: &ObservationSet, grid: &Grid, fraction: f64, seed: u64) -> Result<(ObservationSet, Vec<HeldOut>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return domain(format!("holdout fraction must lie in (0, 1) (got {fraction})"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fit = obs.clone();
    let mut held = Vec::new();

    let gage_idx: Vec<usize> = (0..obs.gages.len()).filter(|&k| obs.gages[k].rain.is_some()).collect();
    let k = (fraction * gage_idx.len() as f64).round() as usize;
    let mut pick: Vec<usize> = sample_indices(&mut rng, gage_idx.len(), k).into_iter().map(|j| gage_idx[j]).collect();
    pick.sort_unstable();
    for g in pick {
        let rec = &mut fit.gages[g];
        held.push(HeldOut {
            id: format!("{}@{}", rec.station_id, rec.t),
            stream: Stream::Gage,
            cell: rec.cell,
            t: rec.t,
            value: rec.rain.take().unwrap_or_default(),
        });
    }

    let n = grid.len();
    let radar_idx: Vec<usize> = (0..obs.n_times * n).filter(|&k| obs.radar[k / n][k % n].is_some()).collect();
    let k = (fraction * radar_idx.len() as f64).round() as usize;
    let mut pick: Vec<usize> = sample_indices(&mut rng, radar_idx.len(), k).into_iter().map(|j| radar_idx[j]).collect();
    pick.sort_unstable();
    for r in pick {
        let (t, i) = (r / n, r % n);
        let (x, y) = grid.coords(i);
        held.push(HeldOut {
            id: format!("r{x}_{y}@{t}"),
            stream: Stream::Radar,
            cell: i,
            t,
            value: fit.radar[t][i].take().unwrap_or_default(),
        });
    }
    Ok((fit, held))
}

/// Settings for predictive interval construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageSettings {
    pub level: f64,
    /// Natural-log value standing in for zeros and anything below it.
    pub log_floor: f64,
    /// Predictive replicates simulated per posterior draw.
    pub replicates: usize,
    pub seed: u64,
}

impl Default for CoverageSettings {
    fn default() -> Self {
        Self {
            level: 0.95,
            log_floor: -2.0,
            replicates: 20,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub id: String,
    pub stream: Stream,
    pub observed: f64,
    pub lower: f64,
    pub upper: f64,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub fraction: f64,
    pub records: Vec<CoverageRecord>,
}

impl Coverage {
    /// Covered fraction within one stream, `None` without records.
    pub fn stream_fraction(&self, stream: Stream) -> Option<f64> {
        let (hit, n) = self
            .records
            .iter()
            .filter(|r| r.stream == stream)
            .fold((0usize, 0usize), |(h, n), r| (h + usize::from(r.inside), n + 1));
        (n > 0).then(|| hit as f64 / n as f64)
    }
}

/// Fraction of held-out records inside their central predictive intervals.
pub fn holdout_coverage(
    samples: &PosteriorSamples,
    model: &Model,
    holdout: &[HeldOut],
    settings: &CoverageSettings,
) -> Result<Coverage> {
    if holdout.is_empty() {
        return domain("hold-out set is empty");
    }
    if samples.is_empty() {
        return domain("no posterior draws");
    }
    if !(settings.level > 0.0 && settings.level < 1.0) || settings.replicates == 0 {
        return domain("coverage level must lie in (0, 1) with at least one replicate");
    }
    let floor = settings.log_floor;
    let c1: Vec<Vec<f64>> = samples.draws.iter().map(|d| model.c1_field(d)).collect();
    let records: Vec<CoverageRecord> = holdout
        .par_iter()
        .enumerate()
        .map(|(k, h)| {
            if h.t >= model.n_times() || h.cell >= model.n_cells() {
                return domain(format!("held-out record {} lies outside the model domain", h.id));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, k as u64));
            let mut pred = Vec::with_capacity(samples.len() * settings.replicates);
            for (d, c1d) in samples.draws.iter().zip(&c1) {
                let y = d.y[h.t][h.cell];
                let (pi, mean, var) = match h.stream {
                    Stream::Gage => (logistic_zero_prob(d.a_g, d.b_g, y), y, d.sigma2_g),
                    Stream::Radar => (logistic_zero_prob(d.a_r, d.b_r, y), c1d[h.cell] + d.c2 * y, d.sigma2_r),
                };
                for _ in 0..settings.replicates {
                    let u: f64 = rng.random();
                    let z: f64 = rng.sample(StandardNormal);
                    let v = if u < pi { floor } else { (mean + var.sqrt() * z).max(floor) };
                    pred.push(v);
                }
            }
            pred.sort_by(f64::total_cmp);
            let a = (1.0 - settings.level) / 2.0;
            let lower = quantile_sorted(&pred, a);
            let upper = quantile_sorted(&pred, 1.0 - a);
            let observed = if h.value > 0.0 { h.value.ln().max(floor) } else { floor };
            Ok(CoverageRecord {
                id: h.id.clone(),
                stream: h.stream,
                observed,
                lower,
                upper,
                inside: lower <= observed && observed <= upper,
            })
        })
        .collect::<Result<_>>()?;
    let fraction = records.iter().filter(|r| r.inside).count() as f64 / records.len() as f64;
    Ok(Coverage { fraction, records })
}

pub fn write_holdout(path: &Path, holdout: &[HeldOut]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for h in holdout {
        w.serialize(h)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_holdout(path: &Path) -> Result<Vec<HeldOut>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_coverage(path: &Path, cov: &Coverage) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &cov.records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coverage(path: &Path) -> Result<Vec<CoverageRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_rain_map(path: &Path, grid: &Grid, map: &RainMap, t: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "mean", "median", "q025", "q975"])?;
    for i in 0..grid.len() {
        let (x, y) = grid.coords(i);
        w.write_record([
            x.to_string(),
            y.to_string(),
            map.mean[t][i].to_string(),
            map.median[t][i].to_string(),
            map.q025[t][i].to_string(),
            map.q975[t][i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_prob_map(path: &Path, grid: &Grid, map: &ZeroProbMap, t: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "pi_r", "pi_g"])?;
    for i in 0..grid.len() {
        let (x, y) = grid.coords(i);
        let g = map.pi_g[t][i].map(|v| v.to_string()).unwrap_or_default();
        w.write_record([x.to_string(), y.to_string(), map.pi_r[t][i].to_string(), g])?;
    }
    w.flush()?;
    Ok(())
}

/// Linear grey-level scale of a PGM rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmScale {
    pub min: f64,
    pub max: f64,
}

impl PgmScale {
    pub fn to_level(&self, v: f64) -> u8 {
        if self.max > self.min {
            (((v - self.min) / (self.max - self.min)) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }

    pub fn from_level(&self, level: u8) -> f64 {
        self.min + (self.max - self.min) * f64::from(level) / 255.0
    }

    pub fn to_text(&self) -> String {
        format!("min {}\nmax {}\n", self.min, self.max)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut min = None;
        let mut max = None;
        for line in text.lines() {
            let mut it = line.split_whitespace();
            match (it.next(), it.next().map(str::parse::<f64>)) {
                (Some("min"), Some(Ok(v))) => min = Some(v),
                (Some("max"), Some(Ok(v))) => max = Some(v),
                _ => {}
            }
        }
        match (min, max) {
            (Some(min), Some(max)) => Ok(Self { min, max }),
            _ => domain("PGM scale needs `min` and `max` lines"),
        }
    }
}

/// Plain (P2) greymap, north row first; returns the scale used.
pub fn render_pgm(grid: &Grid, values: &[f64]) -> (String, PgmScale) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = PgmScale { min, max };
    let mut out = format!("P2\n{} {}\n255\n", grid.nx(), grid.ny());
    for y in (0..grid.ny()).rev() {
        let row: Vec<String> = (0..grid.nx())
            .map(|x| scale.to_level(values[grid.index(x, y)]).to_string())
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    (out, scale)
}

/// Write `path` and its `path.scale` sidecar.
pub fn write_pgm(path: &Path, grid: &Grid, values: &[f64]) -> Result<PgmScale> {
    let (text, scale) = render_pgm(grid, values);
    write_text(path, &text)?;
    write_text(&scale_path(path), &scale.to_text())?;
    Ok(scale)
}

pub fn scale_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scale");
    s.into()
}

/// Read a P2 greymap back into cell order.
pub fn read_pgm(path: &Path, grid: &Grid) -> Result<Vec<u8>> {
    let text = std::fs::read_to_string(path)?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() < 4 || tokens[0] != "P2" {
        return domain(format!("{} is not a plain PGM file", path.display()));
    }
    let w: usize = tokens[1].parse().map_err(|_| Error::Domain("bad PGM width".into()))?;
    let h: usize = tokens[2].parse().map_err(|_| Error::Domain("bad PGM height".into()))?;
    if w != grid.nx() || h != grid.ny() || tokens.len() != 4 + w * h {
        return domain(format!("{} does not match the grid", path.display()));
    }
    let mut out = vec![0u8; w * h];
    for (k, tok) in tokens[4..].iter().enumerate() {
        let row = k / w;
        let x = k % w;
        let y = h - 1 - row;
        out[grid.index(x, y)] = tok.parse().map_err(|_| Error::Domain(format!("bad PGM level {tok:?}")))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples_from(draws: Vec<ModelState>) -> PosteriorSamples {
        let n = draws.len();
        PosteriorSamples {
            draws,
            deviance: vec![1.0; n],
            iterations: (0..n).collect(),
            acceptance: Vec::new(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn rain_map_simple_means() {
        let mut d = ModelState::zeros(2, 1, 1, 1);
        let s = samples_from(vec![d.clone(); 10]);
        let m = posterior_rain_map(&s).unwrap();
        assert_eq!(m.mean[0][0], 1.0);
        let mut draws = vec![d.clone(); 5];
        d.y[0][0] = 3f64.ln();
        draws.extend(vec![d; 5]);
        let m = posterior_rain_map(&samples_from(draws)).unwrap();
        assert!((m.mean[0][0] - 2.0).abs() < 1e-12);
        assert!(posterior_rain_map(&samples_from(vec![ModelState::zeros(2, 1, 1, 1); 9])).is_err());
    }

    #[test]
    fn zero_prob_neutral_logistic() {
        let s = samples_from(vec![ModelState::zeros(4, 2, 1, 1); 12]);
        let m = zero_prob_map(&s, &[1]).unwrap();
        assert!(m.pi_r.iter().flatten().all(|&p| p == 0.5));
        assert_eq!(m.pi_g[1][1], Some(0.5));
        assert_eq!(m.pi_g[1][0], None);
    }

    #[test]
    fn dic_identity_and_degenerate_chain() {
        let d = Dic::from_parts(13092.0, 13092.0 - 5607.0);
        assert_eq!(d.p_d, 5607.0);
        assert_eq!(d.dic, 18699.0);
        let d = Dic::from_parts(5.0, 5.0);
        assert_eq!((d.p_d, d.dic), (0.0, 5.0));
    }

    #[test]
    fn pgm_scale_text_round_trip() {
        let s = PgmScale { min: -1.5, max: 2.25 };
        assert_eq!(PgmScale::parse(&s.to_text()).unwrap(), s);
        assert_eq!(s.to_level(-1.5), 0);
        assert_eq!(s.to_level(2.25), 255);
        let flat = PgmScale { min: 1.0, max: 1.0 };
        assert_eq!(flat.to_level(1.0), 0);
        assert_eq!(flat.from_level(0), 1.0);
    }
}
