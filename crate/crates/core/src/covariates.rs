//! Stage 0: gridded weather covariates.
//!
//! Station temperature, relative humidity and wind are interpolated to cell
//! centers with a low-rank thin-plate spline whose basis size and smoothing
//! are picked by generalized cross-validation. The result is fixed input to
//! the sampler.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{domain, Error, Result};
use crate::grid::Grid;
use crate::io::ObservationSet;

/// Candidate `(basis size, smoothing)` pairs tried by default.
pub fn default_candidates() -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for m in [9, 16, 25, 36] {
        for lambda in [0.0, 1e-4, 1e-2, 1.0] {
            out.push((m, lambda));
        }
    }
    out
}

fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Farthest-point subset of size `m`, seeded with the first point.
fn farthest_point_knots(points: &[[f64; 2]], m: usize) -> Vec<[f64; 2]> {
    let mut chosen = vec![0usize];
    let mut dmin: Vec<f64> = points.iter().map(|&p| dist2(p, points[0])).collect();
    while chosen.len() < m {
        let (best, _) = dmin
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        chosen.push(best);
        for (i, &p) in points.iter().enumerate() {
            dmin[i] = dmin[i].min(dist2(p, points[best]));
        }
    }
    chosen.into_iter().map(|i| points[i]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpsModel {
    knots: Vec<[f64; 2]>,
    affine: [f64; 3],
    radial: Vec<f64>,
    lambda: f64,
}

struct TpsFit {
    model: TpsModel,
    fitted: Vec<f64>,
    hat_trace: f64,
}

impl TpsModel {
    pub fn basis_size(&self) -> usize {
        self.knots.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn predict_point(&self, p: [f64; 2]) -> f64 {
        let lin = self.affine[0] + self.affine[1] * p[0] + self.affine[2] * p[1];
        lin + self
            .knots
            .iter()
            .zip(&self.radial)
            .map(|(&k, &a)| a * tps_kernel(dist2(p, k)))
            .sum::<f64>()
    }
}

fn affine_rank(points: &[[f64; 2]]) -> usize {
    let t = DMatrix::from_fn(points.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => points[i][0],
        _ => points[i][1],
    });
    let svd = t.svd(false, false);
    let smax = svd.singular_values.max();
    svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count()
}

fn fit_internal(points: &[[f64; 2]], values: &[f64], m: usize, lambda: f64) -> Result<TpsFit> {
    let n = points.len();
    if n != values.len() {
        return domain(format!("{n} points but {} values", values.len()));
    }
    if n < 3 {
        return domain(format!("thin-plate spline needs at least 3 points (got {n})"));
    }
    if m < 3 || m > n {
        return domain(format!("basis size {m} must lie in [3, {n}]"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return domain(format!("smoothing parameter must be >= 0 (got {lambda})"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return domain("thin-plate spline values must be finite");
    }
    if affine_rank(points) < 3 {
        return Err(Error::Numerical("points are collinear; affine part is rank deficient".into()));
    }
    let knots = farthest_point_knots(points, m);
    if affine_rank(&knots) < 3 {
        return Err(Error::Numerical("knots are collinear; affine part is rank deficient".into()));
    }

    // Null space of the knot side conditions T_k' alpha = 0.
    let tk = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => 1.0,
        1 => knots[i][0],
        _ => knots[i][1],
    });
    let q1 = tk.clone().qr().q();
    let proj = DMatrix::identity(m, m) - &q1 * q1.transpose();
    let eig = SymmetricEigen::new(proj);
    let mut cols: Vec<usize> = (0..m).filter(|&j| eig.eigenvalues[j] > 0.5).collect();
    cols.sort_unstable();
    let null = DMatrix::from_fn(m, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])]);
    let r = null.ncols();

    let kxk = DMatrix::from_fn(n, m, |i, j| tps_kernel(dist2(points[i], knots[j])));
    let kkk = DMatrix::from_fn(m, m, |i, j| tps_kernel(dist2(knots[i], knots[j])));
    let radial_design = &kxk * &null;
    let p = 3 + r;
    let mut c = DMatrix::zeros(n, p);
    for i in 0..n {
        c[(i, 0)] = 1.0;
        c[(i, 1)] = points[i][0];
        c[(i, 2)] = points[i][1];
        for j in 0..r {
            c[(i, 3 + j)] = radial_design[(i, j)];
        }
    }

    // Penalized least squares as an augmented ordinary least-squares problem.
    let rows = if lambda > 0.0 && r > 0 { n + r } else { n };
    let mut aug = DMatrix::zeros(rows, p);
    aug.view_mut((0, 0), (n, p)).copy_from(&c);
    if rows > n {
        let pen = null.transpose() * &kkk * &null;
        let pen = (&pen + pen.transpose()) * 0.5;
        let e = SymmetricEigen::new(pen);
        // pen = V diag(d) V'  =>  sqrt(pen) = diag(sqrt d) V'
        for (k, &d) in e.eigenvalues.iter().enumerate() {
            let s = (lambda * d.max(0.0)).sqrt();
            for j in 0..r {
                aug[(n + k, 3 + j)] = s * e.eigenvectors[(j, k)];
            }
        }
    }
    let svd = aug.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let tol = smax * 1e-13 * rows.max(p) as f64;
    let mut yaug = DVector::zeros(rows);
    yaug.rows_mut(0, n).copy_from(&DVector::from_column_slice(values));
    let uty = u.transpose() * &yaug;
    let mut theta = DVector::zeros(p);
    let mut hat_trace = 0.0;
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s <= tol {
            continue;
        }
        theta += v_t.row(k).transpose() * (uty[k] / s);
        hat_trace += (0..n).map(|i| u[(i, k)] * u[(i, k)]).sum::<f64>();
    }
    let alpha = &null * theta.rows(3, r);
    let fitted = (&c * &theta).iter().copied().collect();
    Ok(TpsFit {
        model: TpsModel {
            knots,
            affine: [theta[0], theta[1], theta[2]],
            radial: alpha.iter().copied().collect(),
            lambda,
        },
        fitted,
        hat_trace,
    })
}

/// Low-rank thin-plate spline with `m` farthest-point knots and smoothing
/// `lambda`. Affine surfaces are reproduced exactly for any `lambda`.
pub fn tps_fit(points: &[[f64; 2]], values: &[f64], m: usize, lambda: f64) -> Result<TpsModel> {
    fit_internal(points, values, m, lambda).map(|f| f.model)
}

/// Evaluate a fitted spline at every cell center (planar km coordinates).
pub fn tps_predict(model: &TpsModel, grid: &Grid) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let (x, y) = grid.center_km(i);
            model.predict_point([x, y])
        })
        .collect()
}

/// GCV score `n ||(I - A) y||^2 / tr(I - A)^2`, or `None` for a saturated
/// smoother.
pub fn gcv_score(points: &[[f64; 2]], values: &[f64], m: usize, lambda: f64) -> Result<Option<f64>> {
    let fit = fit_internal(points, values, m, lambda)?;
    let n = values.len() as f64;
    let denom = n - fit.hat_trace;
    if denom <= 1e-8 * n {
        return Ok(None);
    }
    let rss: f64 = values.iter().zip(&fit.fitted).map(|(y, f)| (y - f).powi(2)).sum();
    Ok(Some(n * rss / (denom * denom)))
}

/// Candidate with the smallest GCV score; ties go to smaller `m`, then
/// smaller `lambda`.
pub fn gcv_select(points: &[[f64; 2]], values: &[f64], candidates: &[(usize, f64)]) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return domain("no GCV candidates given");
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let scale = {
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len().max(1) as f64
    };
    let mut best: Option<((usize, f64), f64)> = None;
    for (m, lambda) in sorted {
        if m > points.len() {
            warn!("GCV candidate m={m} skipped: only {} points", points.len());
            continue;
        }
        let score = match gcv_score(points, values, m, lambda)? {
            Some(s) => s,
            None => {
                warn!("GCV candidate (m={m}, lambda={lambda}) skipped: saturated smoother");
                continue;
            }
        };
        let better = match best {
            None => true,
            Some((_, b)) => score < b - (1e-9 * b.max(score) + 1e-12 * scale),
        };
        if better {
            best = Some(((m, lambda), score));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::Numerical("every GCV candidate was skipped".into()))
}

/// Affine map applied to one covariate column at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub column: &'static str,
    pub t: usize,
    pub mean: f64,
    pub scale: f64,
}

/// Gridded covariates, raw and standardized, indexed `[t][cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateFields {
    pub n_times: usize,
    pub temp: Vec<Vec<f64>>,
    pub rh: Vec<Vec<f64>>,
    /// Smoothed wind in m/s (not standardized; it drives the displacement).
    pub wind_u: Vec<Vec<f64>>,
    pub wind_v: Vec<Vec<f64>>,
    pub elev: Vec<f64>,
    /// `temp(t) - temp(t-1)`; zero at `t = 0`.
    pub dtemp: Vec<Vec<f64>>,
    pub drh: Vec<Vec<f64>>,
    pub std_temp: Vec<Vec<f64>>,
    pub std_rh: Vec<Vec<f64>>,
    pub std_elev: Vec<Vec<f64>>,
    pub std_dtemp: Vec<Vec<f64>>,
    pub std_drh: Vec<Vec<f64>>,
    pub transforms: Vec<Standardization>,
}

/// Number of columns in each covariate design row (intercept included).
pub const DESIGN_WIDTH: usize = 4;

fn standardize(col: &[f64], column: &'static str, t: usize, out: &mut Vec<Standardization>) -> Vec<f64> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
    out.push(Standardization { column, t, mean, scale });
    col.iter().map(|v| (v - mean) / scale).collect()
}

impl CovariateFields {
    /// Assemble from gridded raw fields (`[t][cell]`) and per-cell elevation.
    pub fn from_raw(
        temp: Vec<Vec<f64>>,
        rh: Vec<Vec<f64>>,
        wind_u: Vec<Vec<f64>>,
        wind_v: Vec<Vec<f64>>,
        elev: Vec<f64>,
    ) -> Result<Self> {
        let n_times = temp.len();
        let n = elev.len();
        if n_times == 0 {
            return domain("covariates need at least one time step");
        }
        for (name, f) in [("temp", &temp), ("rh", &rh), ("wind_u", &wind_u), ("wind_v", &wind_v)] {
            if f.len() != n_times || f.iter().any(|row| row.len() != n) {
                return domain(format!("covariate {name} has inconsistent dimensions"));
            }
            if f.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("covariate {name} has non-finite values")));
            }
        }
        let diff = |f: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..n_times)
                .map(|t| {
                    if t == 0 {
                        vec![0.0; n]
                    } else {
                        f[t].iter().zip(&f[t - 1]).map(|(a, b)| a - b).collect()
                    }
                })
                .collect()
        };
        let dtemp = diff(&temp);
        let drh = diff(&rh);
        let mut transforms = Vec::new();
        let mut std_temp = Vec::new();
        let mut std_rh = Vec::new();
        let mut std_elev = Vec::new();
        let mut std_dtemp = Vec::new();
        let mut std_drh = Vec::new();
        for t in 0..n_times {
            std_temp.push(standardize(&temp[t], "temp", t, &mut transforms));
            std_rh.push(standardize(&rh[t], "rh", t, &mut transforms));
            std_elev.push(standardize(&elev, "elev", t, &mut transforms));
            std_dtemp.push(standardize(&dtemp[t], "dtemp", t, &mut transforms));
            std_drh.push(standardize(&drh[t], "drh", t, &mut transforms));
        }
        Ok(Self {
            n_times,
            temp,
            rh,
            wind_u,
            wind_v,
            elev,
            dtemp,
            drh,
            std_temp,
            std_rh,
            std_elev,
            std_dtemp,
            std_drh,
            transforms,
        })
    }

    /// Flat terrain, constant weather and a uniform wind.
    pub fn uniform(n_cells: usize, n_times: usize, wind_u: f64, wind_v: f64) -> Self {
        let f = |v: f64| vec![vec![v; n_cells]; n_times];
        Self::from_raw(f(20.0), f(80.0), f(wind_u), f(wind_v), vec![0.0; n_cells])
            .expect("uniform covariates are valid")
    }

    pub fn n_cells(&self) -> usize {
        self.elev.len()
    }

    /// Design row for the first-time mean: intercept, temperature, relative
    /// humidity, elevation.
    pub fn initial_row(&self, i: usize) -> [f64; DESIGN_WIDTH] {
        [1.0, self.std_temp[0][i], self.std_rh[0][i], self.std_elev[0][i]]
    }

    /// Design row for the dynamics at `t >= 1`: intercept, elevation and the
    /// temperature and humidity tendencies.
    pub fn dynamic_row(&self, t: usize, i: usize) -> [f64; DESIGN_WIDTH] {
        [1.0, self.std_elev[t][i], self.std_dtemp[t][i], self.std_drh[t][i]]
    }

    pub fn write_csv(&self, path: &Path, transforms_path: &Path, grid: &Grid) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "t", "temp", "rh", "u", "v", "elev", "dtemp", "drh"])?;
        for t in 0..self.n_times {
            for i in 0..self.n_cells() {
                let (x, y) = grid.coords(i);
                w.write_record([
                    x.to_string(),
                    y.to_string(),
                    t.to_string(),
                    self.std_temp[t][i].to_string(),
                    self.std_rh[t][i].to_string(),
                    self.wind_u[t][i].to_string(),
                    self.wind_v[t][i].to_string(),
                    self.std_elev[t][i].to_string(),
                    self.std_dtemp[t][i].to_string(),
                    self.std_drh[t][i].to_string(),
                ])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(transforms_path)?;
        w.write_record(["column", "t", "mean", "scale"])?;
        for s in &self.transforms {
            w.write_record([s.column.to_string(), s.t.to_string(), s.mean.to_string(), s.scale.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Interpolate one scalar station variable on the grid with GCV selection.
pub fn interpolate_field(
    points: &[[f64; 2]],
    values: &[f64],
    grid: &Grid,
    candidates: &[(usize, f64)],
) -> Result<Vec<f64>> {
    let usable: Vec<(usize, f64)> = candidates.iter().copied().filter(|c| c.0 <= points.len()).collect();
    let usable = if usable.is_empty() {
        // Too few stations for every candidate: fall back to the full set.
        vec![(points.len(), 0.0)]
    } else {
        usable
    };
    let (m, lambda) = gcv_select(points, values, &usable)?;
    Ok(tps_predict(&tps_fit(points, values, m, lambda)?, grid))
}

/// Stage 0 driver: gridded, standardized covariates for every time step.
pub fn build_covariates(
    obs: &ObservationSet,
    grid: &Grid,
    candidates: &[(usize, f64)],
) -> Result<CovariateFields> {
    let mut temp = Vec::new();
    let mut rh = Vec::new();
    let mut wu = Vec::new();
    let mut wv = Vec::new();
    for t in 0..obs.n_times {
        let recs: Vec<_> = obs.stations.iter().filter(|s| s.t == t).collect();
        if recs.len() < 3 {
            return domain(format!(
                "time step {t} has {} weather-station reports; at least 3 are needed",
                recs.len()
            ));
        }
        let pts: Vec<[f64; 2]> = recs
            .iter()
            .map(|s| {
                let (x, y) = grid.lonlat_to_km(s.lon, s.lat);
                [x, y]
            })
            .collect();
        let field = |f: fn(&crate::io::StationRecord) -> f64| -> Result<Vec<f64>> {
            let vals: Vec<f64> = recs.iter().map(|s| f(s)).collect();
            interpolate_field(&pts, &vals, grid, candidates)
                .map_err(|e| Error::Numerical(format!("time step {t}: {e}")))
        };
        temp.push(field(|s| s.temperature)?);
        rh.push(field(|s| s.rel_humidity)?);
        wu.push(field(|s| s.wind_u)?);
        wv.push(field(|s| s.wind_v)?);
    }
    CovariateFields::from_raw(temp, rh, wu, wv, obs.elevation.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scattered(n: usize) -> Vec<[f64; 2]> {
        // deterministic quasi-random layout
        (0..n)
            .map(|i| {
                let a = (i as f64 * 0.618_033_988_75).fract();
                let b = (i as f64 * 0.754_877_666_2 + 0.3).fract();
                [a * 20.0, b * 15.0]
            })
            .collect()
    }

    #[test]
    fn constant_surface() {
        let p = scattered(10);
        let v = vec![3.5; 10];
        let model = tps_fit(&p, &v, 6, 0.1).unwrap();
        let g = Grid::unit(8, 8).unwrap();
        for f in tps_predict(&model, &g) {
            assert!((f - 3.5).abs() < 1e-8);
        }
    }

    #[test]
    fn affine_reproduction_any_lambda() {
        let p = scattered(25);
        let v: Vec<f64> = p.iter().map(|q| 2.0 * q[0] + 3.0 * q[1] + 1.0).collect();
        for (m, lambda) in [(3, 0.0), (9, 1e-4), (16, 1.0), (25, 0.0), (25, 10.0)] {
            let model = tps_fit(&p, &v, m, lambda).unwrap();
            for q in [[1.0, 1.0], [7.3, 2.2], [19.0, 14.0], [-3.0, 4.0]] {
                let want = 2.0 * q[0] + 3.0 * q[1] + 1.0;
                assert!((model.predict_point(q) - want).abs() < 1e-8, "m={m} lambda={lambda}");
            }
        }
    }

    #[test]
    fn errors() {
        let line: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(tps_fit(&line, &[1.0; 6], 4, 0.0).is_err());
        assert!(tps_fit(&line[..2], &[1.0; 2], 3, 0.0).is_err());
        let p = scattered(5);
        assert!(tps_fit(&p, &[1.0; 5], 6, 0.0).is_err());
    }

    #[test]
    fn saturated_candidate_skipped() {
        let p = scattered(12);
        let v: Vec<f64> = p.iter().map(|q| (q[0] / 5.0).sin() + q[1] * 0.1).collect();
        assert_eq!(gcv_score(&p, &v, 12, 0.0).unwrap(), None);
        assert!(gcv_select(&p, &v, &[(12, 0.0), (12, 0.0)]).is_err());
        assert_eq!(gcv_select(&p, &v, &[(12, 0.0)]).unwrap(), (12, 0.0));
    }

    #[test]
    fn linear_data_prefers_small_basis() {
        let p = scattered(30);
        let v: Vec<f64> = p.iter().map(|q| 0.5 * q[0] - q[1] + 4.0).collect();
        assert_eq!(gcv_select(&p, &v, &[(20, 0.0), (3, 0.0)]).unwrap(), (3, 0.0));
    }

    #[test]
    fn gradients_and_standardization() {
        let n = 12;
        let temp = vec![vec![10.0; n], vec![11.0; n]];
        let rh: Vec<Vec<f64>> = (0..2).map(|t| (0..n).map(|i| 50.0 + i as f64 + t as f64).collect()).collect();
        let elev: Vec<f64> = (0..n).map(|i| (i * i) as f64).collect();
        let c = CovariateFields::from_raw(temp, rh, vec![vec![1.0; n]; 2], vec![vec![0.0; n]; 2], elev).unwrap();
        assert!(c.dtemp[1].iter().all(|&d| d == 1.0));
        for t in 0..2 {
            for col in [&c.std_rh[t], &c.std_elev[t]] {
                let m = col.iter().sum::<f64>() / n as f64;
                let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
                assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-10);
            }
        }
        assert!(c.std_temp.iter().flatten().all(|v| v.abs() < 1e-12));
    }
}
