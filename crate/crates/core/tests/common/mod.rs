//! Independent dense-matrix and distribution oracles shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rainfuse::Grid;

/// `tau2 (D_w - rho W)` built entry by entry from grid coordinates.
pub fn dense_car_precision(grid: &Grid, rho: f64, tau2: f64) -> DMatrix<f64> {
    let n = grid.len();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        let (xi, yi) = grid.coords(i);
        for j in 0..n {
            let (xj, yj) = grid.coords(j);
            let d = xi.abs_diff(xj) + yi.abs_diff(yj);
            if d == 1 {
                q[(i, j)] = -rho * tau2;
                q[(i, i)] += tau2;
            }
        }
    }
    q
}

/// Gaussian log-density through a dense Cholesky factor.
pub fn dense_logdensity(q: &DMatrix<f64>, y: &[f64], mean: &[f64]) -> f64 {
    let n = y.len();
    let chol = q.clone().cholesky().expect("positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let r = DVector::from_iterator(n, y.iter().zip(mean).map(|(a, b)| a - b));
    let quad = (r.transpose() * q * &r)[(0, 0)];
    0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * quad
}

/// Conditional mean and variance of `y_i` from the joint covariance
/// `Sigma = Q^{-1}` by the Schur complement.
pub fn schur_conditional(q: &DMatrix<f64>, i: usize, y: &[f64], mean: &[f64]) -> (f64, f64) {
    let n = y.len();
    let sigma = q.clone().try_inverse().expect("invertible");
    let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let s_rr = DMatrix::from_fn(rest.len(), rest.len(), |a, b| sigma[(rest[a], rest[b])]);
    let s_ir = DMatrix::from_fn(1, rest.len(), |_, b| sigma[(i, rest[b])]);
    let r = DVector::from_iterator(rest.len(), rest.iter().map(|&j| y[j] - mean[j]));
    let s_rr_inv = s_rr.try_inverse().expect("invertible block");
    let m = mean[i] + (&s_ir * &s_rr_inv * r)[(0, 0)];
    let v = sigma[(i, i)] - (&s_ir * &s_rr_inv * s_ir.transpose())[(0, 0)];
    (m, v)
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(k, &v)| {
            let f = cdf(v);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 99% critical value of the one-sample KS distance.
pub fn ks_critical_99(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Batch-means standard error of the mean of a correlated series.
pub fn batch_means_se(x: &[f64], n_batches: usize) -> f64 {
    let b = x.len() / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|k| x[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let m = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    (var / n_batches as f64).sqrt()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Model 1 on `grid` with no data, uniform covariates and every shift fixed
/// to `(dx, dy)` through the constant shift coefficients.
pub fn shifted_model(grid: &Grid, n_times: usize, dx: f64, dy: f64) -> (rainfuse::model::Model, rainfuse::model::ModelState) {
    use rainfuse::covariates::CovariateFields;
    use rainfuse::model::{Model, ModelConfig, ModelData, ObsValue};
    let n = grid.len();
    let data = ModelData::new(grid, n_times, vec![vec![ObsValue::Missing; n]; n_times], Vec::new()).unwrap();
    let cov = CovariateFields::uniform(n, n_times, 0.0, 0.0);
    let config = ModelConfig::preset(1).unwrap();
    let mut s = rainfuse::simulate::default_truth(grid, n_times, &config).unwrap();
    s.alpha = 0.0;
    for t in 0..n_times.saturating_sub(1) {
        s.shift1[t][0] = dx;
        s.shift2[t][0] = dy;
    }
    let model = Model::new(grid.clone(), config, cov, data).unwrap();
    (model, s)
}

pub fn samples_from(draws: Vec<rainfuse::model::ModelState>) -> rainfuse::mcmc::PosteriorSamples {
    let n = draws.len();
    rainfuse::mcmc::PosteriorSamples {
        draws,
        deviance: vec![0.0; n],
        iterations: (0..n).collect(),
        acceptance: Vec::new(),
        warnings: Vec::new(),
    }
}
