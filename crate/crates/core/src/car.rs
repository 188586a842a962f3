//! Proper CAR (lattice GMRF) machinery.
//!
//! The joint precision is `tau2 * (D_w - rho * W)`, where `W` is the 0/1
//! rook adjacency and `D_w = diag(w_i+)`. Its full conditionals have mean
//! `mean_i + rho * avg_{k~i}(y_k - mean_k)` and variance `1 / (tau2 * w_i+)`.
//! Row-major lattice ordering makes the precision banded with half-bandwidth
//! `nx`, which is what the Cholesky factor below exploits.

use std::collections::VecDeque;
use std::sync::Arc;

use std::sync::Mutex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Error, Result};
use crate::grid::Grid;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarSpec {
    pub rho: f64,
    pub tau2: f64,
}

impl CarSpec {
    pub fn new(rho: f64, tau2: f64) -> Result<Self> {
        let spec = Self { rho, tau2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return domain(format!("CAR rho must lie in (0, 1) (got {})", self.rho));
        }
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return domain(format!("CAR tau2 must be positive (got {})", self.tau2));
        }
        Ok(())
    }
}

/// Lower-band Cholesky factor `L` of a symmetric banded matrix, `A = L L'`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// `l[i * (bw + 1) + (i - j)]` holds `L[i][j]` for `i - bw <= j <= i`.
    l: Vec<f64>,
}

impl BandCholesky {
    /// Factor a matrix given in the same lower-band layout.
    pub fn factor(n: usize, bw: usize, mut a: Vec<f64>) -> Result<Self> {
        let w = bw + 1;
        debug_assert_eq!(a.len(), n * w);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = a[i * w + (i - j)];
                for k in k0..j {
                    s -= a[i * w + (i - k)] * a[j * w + (j - k)];
                }
                if i == j {
                    // relative tolerance: a singular matrix leaves round-off sized pivots
                    let diag = a[i * w].abs();
                    if !(s > 1e-12 * diag) || !s.is_finite() {
                        return Err(Error::Factorization(format!(
                            "non-positive pivot {s:e} at row {i}"
                        )));
                    }
                    a[i * w] = s.sqrt();
                } else {
                    a[i * w + (i - j)] = s / a[j * w];
                }
            }
        }
        Ok(Self { n, bw, l: a })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bw + 1) + (i - j)]
    }

    pub fn pivots(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.at(i, i))
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.pivots().map(f64::ln).sum::<f64>()
    }

    /// Solve `L x = b` in place.
    pub fn solve_lower(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.at(i, k) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
    }

    /// Solve `L' x = b` in place.
    pub fn solve_upper(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                s -= self.at(k, i) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
    }

    /// Solve `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.solve_lower(b);
        self.solve_upper(b);
    }
}

/// `tau2 * (D_w - rho W)` on a lattice, with the factor of the unscaled
/// matrix `D_w - rho W`.
#[derive(Debug, Clone)]
pub struct SparsePrecision {
    grid: Grid,
    spec: CarSpec,
    factor: Arc<BandCholesky>,
}

fn band_matrix(grid: &Grid, rho: f64) -> Vec<f64> {
    let n = grid.len();
    let bw = grid.nx();
    let w = bw + 1;
    let mut a = vec![0.0; n * w];
    for i in 0..n {
        a[i * w] = grid.neighbor_count(i) as f64;
        for j in grid.neighbors_iter(i).filter(|&j| j < i) {
            a[i * w + (i - j)] = -rho;
        }
    }
    a
}

fn factor_unscaled(grid: &Grid, rho: f64) -> Result<BandCholesky> {
    BandCholesky::factor(grid.len(), grid.nx(), band_matrix(grid, rho))
}

impl SparsePrecision {
    pub fn spec(&self) -> CarSpec {
        self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Factor of the unscaled matrix `D_w - rho W`.
    pub fn factor(&self) -> &BandCholesky {
        &self.factor
    }

    /// Upper-triangle entries `(i, j, value)` with `i <= j`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.grid.len() * 3);
        for i in 0..self.grid.len() {
            out.push((i, i, self.spec.tau2 * self.grid.neighbor_count(i) as f64));
            for j in self.grid.neighbors_iter(i).filter(|&j| j > i) {
                out.push((i, j, -self.spec.tau2 * self.spec.rho));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let mut m = vec![vec![0.0; n]; n];
        for (i, j, v) in self.triplets() {
            m[i][j] = v;
            m[j][i] = v;
        }
        m
    }

    /// `log det(tau2 (D_w - rho W))`.
    pub fn logdet(&self) -> f64 {
        self.grid.len() as f64 * self.spec.tau2.ln() + self.factor.logdet()
    }
}

pub fn car_precision(grid: &Grid, spec: CarSpec) -> Result<SparsePrecision> {
    spec.validate()?;
    let factor = Arc::new(factor_unscaled(grid, spec.rho)?);
    Ok(SparsePrecision {
        grid: grid.clone(),
        spec,
        factor,
    })
}

/// `r' (D_w - rho W) r` on the lattice.
pub fn unscaled_quadratic_form(grid: &Grid, rho: f64, r: &[f64]) -> f64 {
    let nx = grid.nx();
    let ny = grid.ny();
    let mut diag = 0.0;
    let mut cross = 0.0;
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            let ri = r[i];
            diag += grid.neighbor_count(i) as f64 * ri * ri;
            if x + 1 < nx {
                cross += ri * r[i + 1];
            }
            if y + 1 < ny {
                cross += ri * r[i + nx];
            }
        }
    }
    diag - 2.0 * rho * cross
}

/// Small memo of `log det(D_w - rho W)` keyed on the exact `rho` value.
///
/// A Metropolis update of `rho` alternates between the current value and one
/// proposal, so a handful of slots is enough.
#[derive(Debug)]
pub struct LogDetCache {
    grid: Grid,
    slots: Mutex<VecDeque<(u64, f64)>>,
}

impl Clone for LogDetCache {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            slots: Mutex::new(self.slots.lock().unwrap().clone()),
        }
    }
}

impl LogDetCache {
    const CAPACITY: usize = 4;

    pub fn new(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            slots: Mutex::new(VecDeque::with_capacity(Self::CAPACITY)),
        }
    }

    pub fn unscaled_logdet(&self, rho: f64) -> Result<f64> {
        let key = rho.to_bits();
        if let Some(&(_, v)) = self.slots.lock().unwrap().iter().find(|(k, _)| *k == key) {
            return Ok(v);
        }
        let v = factor_unscaled(&self.grid, rho)?.logdet();
        let mut slots = self.slots.lock().unwrap();
        if slots.len() == Self::CAPACITY {
            slots.pop_front();
        }
        slots.push_back((key, v));
        Ok(v)
    }
}

/// Log density of `y ~ N(mean, (tau2 (D_w - rho W))^-1)`.
pub fn car_logdensity(grid: &Grid, y: &[f64], mean: &[f64], spec: CarSpec) -> Result<f64> {
    spec.validate()?;
    let logdet = factor_unscaled(grid, spec.rho)?.logdet();
    car_logdensity_with(grid, y, mean, spec, logdet)
}

/// As [`car_logdensity`], reusing `log det(D_w - rho W)` from a cache.
pub fn car_logdensity_cached(
    grid: &Grid,
    y: &[f64],
    mean: &[f64],
    spec: CarSpec,
    cache: &LogDetCache,
) -> Result<f64> {
    spec.validate()?;
    let logdet = cache.unscaled_logdet(spec.rho)?;
    car_logdensity_with(grid, y, mean, spec, logdet)
}

fn car_logdensity_with(
    grid: &Grid,
    y: &[f64],
    mean: &[f64],
    spec: CarSpec,
    unscaled_logdet: f64,
) -> Result<f64> {
    let n = grid.len();
    if y.len() != n || mean.len() != n {
        return domain(format!(
            "CAR field length mismatch: grid has {n} cells, got y={} mean={}",
            y.len(),
            mean.len()
        ));
    }
    let r: Vec<f64> = y.iter().zip(mean).map(|(a, b)| a - b).collect();
    let qf = unscaled_quadratic_form(grid, spec.rho, &r);
    let nf = n as f64;
    Ok(0.5 * (nf * spec.tau2.ln() + unscaled_logdet) - 0.5 * nf * LN_2PI - 0.5 * spec.tau2 * qf)
}

/// Conditional mean and variance of `y_i` given all other cells.
pub fn car_full_conditional(
    grid: &Grid,
    i: usize,
    y: &[f64],
    mean: &[f64],
    spec: CarSpec,
) -> (f64, f64) {
    let w = grid.neighbor_count(i) as f64;
    let s: f64 = grid.neighbors_iter(i).map(|k| y[k] - mean[k]).sum();
    (mean[i] + spec.rho * s / w, 1.0 / (spec.tau2 * w))
}

/// Exact draw from the CAR field around `mean`.
pub fn sample_car<R: Rng + ?Sized>(
    rng: &mut R,
    grid: &Grid,
    mean: &[f64],
    spec: CarSpec,
) -> Result<Vec<f64>> {
    let prec = car_precision(grid, spec)?;
    Ok(sample_with_factor(rng, prec.factor(), mean, spec.tau2))
}

/// Draw `mean + (tau2 L L')^{-1/2} z` using a precomputed unscaled factor.
pub fn sample_with_factor<R: Rng + ?Sized>(
    rng: &mut R,
    factor: &BandCholesky,
    mean: &[f64],
    tau2: f64,
) -> Vec<f64> {
    let mut z: Vec<f64> = (0..factor.n()).map(|_| rng.sample(StandardNormal)).collect();
    factor.solve_upper(&mut z);
    let s = tau2.sqrt();
    z.iter().zip(mean).map(|(v, m)| m + v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(grid: &Grid, spec: CarSpec) -> DMatrix<f64> {
        let n = grid.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = spec.tau2 * grid.neighbor_count(i) as f64;
            for j in grid.neighbors(i).unwrap() {
                m[(i, j)] = -spec.tau2 * spec.rho;
            }
        }
        m
    }

    #[test]
    fn path_precision() {
        // 3x2 grid rows behave like paths; check a row block of the 3-cell path.
        let g = Grid::unit(3, 2).unwrap();
        let p = car_precision(&g, CarSpec::new(0.5, 1.0).unwrap()).unwrap();
        let d = p.to_dense();
        assert_eq!(d[0][0], 2.0);
        assert_eq!(d[1][1], 3.0);
        assert_eq!(d[0][1], -0.5);
        assert_eq!(d[0][3], -0.5);
        assert_eq!(d[0][2], 0.0);
        assert_eq!(d[0][4], 0.0);
    }

    #[test]
    fn rho_limits() {
        let g = Grid::unit(4, 3).unwrap();
        let p = car_precision(&g, CarSpec::new(1e-300, 1.0).unwrap()).unwrap();
        let d = p.to_dense();
        for i in 0..g.len() {
            assert_eq!(d[i][i], g.neighbor_count(i) as f64);
        }
        // rho = 1 is the singular graph Laplacian.
        let lap = band_matrix(&g, 1.0);
        assert!(BandCholesky::factor(g.len(), g.nx(), lap).is_err());
        assert!(car_precision(&g, CarSpec { rho: 1.0, tau2: 1.0 }).is_err());
        assert!(CarSpec::new(0.0, 1.0).is_err());
        assert!(CarSpec::new(0.5, 0.0).is_err());
    }

    #[test]
    fn band_solve_matches_dense() {
        let g = Grid::unit(5, 4).unwrap();
        let spec = CarSpec::new(0.9, 2.0).unwrap();
        let p = car_precision(&g, spec).unwrap();
        let dm = dense(&g, spec) / spec.tau2;
        let b: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut x = b.clone();
        p.factor().solve(&mut x);
        let back = &dm * nalgebra::DVector::from_vec(x);
        for i in 0..g.len() {
            assert!((back[i] - b[i]).abs() < 1e-12);
        }
        let chol = dm.cholesky().unwrap();
        let ld = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        assert!((ld - p.factor().logdet()).abs() < 1e-10);
    }

    #[test]
    fn density_at_mean() {
        let g = Grid::unit(3, 3).unwrap();
        let spec = CarSpec::new(0.4, 3.0).unwrap();
        let m: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let ld = car_logdensity(&g, &m, &m, spec).unwrap();
        let p = car_precision(&g, spec).unwrap();
        assert!((ld - (0.5 * p.logdet() - 4.5 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn interior_conditional_variance() {
        let g = Grid::unit(5, 5).unwrap();
        let y = vec![0.0; 25];
        let (_, v) = car_full_conditional(&g, g.index(2, 2), &y, &y, CarSpec::new(0.3, 2.0).unwrap());
        assert!((v - 0.125).abs() < 1e-15);
        let mean: Vec<f64> = (0..25).map(|i| i as f64 * 0.1).collect();
        let yy: Vec<f64> = (0..25).map(|i| (i as f64).cos()).collect();
        let (m, v) = car_full_conditional(&g, 0, &yy, &mean, CarSpec::new(1e-300, 4.0).unwrap());
        assert!((m - mean[0]).abs() < 1e-15);
        assert!((v - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_location_equivariant() {
        let g = Grid::unit(4, 4).unwrap();
        let spec = CarSpec::new(0.7, 1.5).unwrap();
        let zero = vec![0.0; 16];
        let m: Vec<f64> = (0..16).map(|i| i as f64 - 3.0).collect();
        let a = sample_car(&mut ChaCha8Rng::seed_from_u64(9), &g, &zero, spec).unwrap();
        let b = sample_car(&mut ChaCha8Rng::seed_from_u64(9), &g, &zero, spec).unwrap();
        assert_eq!(a, b);
        let c = sample_car(&mut ChaCha8Rng::seed_from_u64(9), &g, &m, spec).unwrap();
        for i in 0..16 {
            assert!((c[i] - a[i] - m[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cache_agrees_with_direct() {
        let g = Grid::unit(6, 5).unwrap();
        let cache = LogDetCache::new(&g);
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let mean = vec![0.2; 30];
        for rho in [0.1, 0.5, 0.1, 0.99, 0.3, 0.7, 0.5] {
            let spec = CarSpec::new(rho, 1.7).unwrap();
            let a = car_logdensity(&g, &y, &mean, spec).unwrap();
            let b = car_logdensity_cached(&g, &y, &mean, spec, &cache).unwrap();
            assert_eq!(a, b);
        }
    }
}
