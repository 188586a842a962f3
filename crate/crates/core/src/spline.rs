//! Tensor-product cubic B-spline surfaces on the grid.
//!
//! The same basis machinery backs the additive radar bias surface and the
//! smooth part of the storm displacement field.

use crate::error::{domain, Result};
use crate::grid::Grid;

fn degree_for(k: usize) -> usize {
    (k - 1).min(3)
}

/// Open-uniform knot vector for `k` basis functions on [0, 1].
fn open_uniform_knots(k: usize) -> Vec<f64> {
    let p = degree_for(k);
    let interior = k - p - 1;
    let mut knots = vec![0.0; p + 1];
    knots.extend((1..=interior).map(|j| j as f64 / (interior + 1) as f64));
    knots.extend(std::iter::repeat_n(1.0, p + 1));
    knots
}

/// Values of the `k` open-uniform B-splines (cubic, or degree `k - 1` when
/// `k < 4`) at `x` in [0, 1].
pub fn bspline_1d(k: usize, x: f64) -> Result<Vec<f64>> {
    if k < 2 {
        return domain(format!("B-spline basis needs k >= 2 (got {k})"));
    }
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("B-spline coordinate {x} outside [0, 1]"));
    }
    let p = degree_for(k);
    let knots = open_uniform_knots(k);
    let mut out = vec![0.0; k];
    // Knot span containing x; the right end belongs to the last span.
    let span = if x >= 1.0 {
        k - 1
    } else {
        (p..k).rev().find(|&s| knots[s] <= x).unwrap_or(p)
    };
    // de Boor triangular recurrence for the p + 1 nonzero functions.
    let mut n = vec![0.0; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    for (j, v) in n.into_iter().enumerate() {
        out[span - p + j] = v;
    }
    Ok(out)
}

/// Evaluation matrix of a tensor-product basis at every cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasis {
    k: usize,
    n_cells: usize,
    /// Row-major `n_cells x k^2`.
    values: Vec<f64>,
}

impl TensorBasis {
    /// `k` functions per dimension; `k = 1` yields the constant basis.
    pub fn new(grid: &Grid, k: usize) -> Result<Self> {
        if k == 0 {
            return domain("basis count must be >= 1");
        }
        let n = grid.len();
        if k == 1 {
            return Ok(Self::constant(n));
        }
        let kk = k * k;
        let mut values = Vec::with_capacity(n * kk);
        for i in 0..n {
            let (u, v) = grid.normalized_center(i);
            let bx = bspline_1d(k, u)?;
            let by = bspline_1d(k, v)?;
            // column index = ky * k + kx
            for &wy in &by {
                for &wx in &bx {
                    values.push(wx * wy);
                }
            }
        }
        Ok(Self { k, n_cells: n, values })
    }

    pub fn constant(n_cells: usize) -> Self {
        Self {
            k: 1,
            n_cells,
            values: vec![1.0; n_cells],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_coef(&self) -> usize {
        self.k * self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_coef();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn eval_cell(&self, i: usize, coef: &[f64]) -> f64 {
        debug_assert_eq!(coef.len(), self.n_coef());
        self.row(i).iter().zip(coef).map(|(b, c)| b * c).sum()
    }

    pub fn eval(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.eval_cell(i, coef)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_interpolate() {
        for k in 2..8 {
            let v0 = bspline_1d(k, 0.0).unwrap();
            assert_eq!(v0[0], 1.0);
            assert!(v0[1..].iter().all(|&v| v == 0.0));
            let v1 = bspline_1d(k, 1.0).unwrap();
            assert_eq!(v1[k - 1], 1.0);
            assert!(v1[..k - 1].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn partition_of_unity_1d() {
        for k in 2..9 {
            for s in 0..=200 {
                let x = s as f64 / 200.0;
                let v = bspline_1d(k, x).unwrap();
                assert!(v.iter().all(|&b| (0.0..=1.0).contains(&b)));
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12, "k={k} x={x}");
            }
        }
    }

    #[test]
    fn domain_errors() {
        assert!(bspline_1d(1, 0.5).is_err());
        assert!(bspline_1d(4, -0.01).is_err());
        assert!(bspline_1d(4, 1.01).is_err());
    }

    #[test]
    fn cubic_matches_bernstein_for_k4() {
        // With k = 4 and no interior knots the cubic B-splines are the
        // Bernstein polynomials.
        for s in 0..=20 {
            let x = s as f64 / 20.0;
            let v = bspline_1d(4, x).unwrap();
            let b = [
                (1.0 - x).powi(3),
                3.0 * x * (1.0 - x).powi(2),
                3.0 * x * x * (1.0 - x),
                x.powi(3),
            ];
            for j in 0..4 {
                assert!((v[j] - b[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tensor_columns() {
        let g = Grid::unit(10, 8).unwrap();
        assert_eq!(TensorBasis::new(&g, 3).unwrap().n_coef(), 9);
        assert_eq!(TensorBasis::new(&g, 5).unwrap().n_coef(), 25);
        let tb = TensorBasis::new(&g, 3).unwrap();
        let ones = tb.eval(&[1.0; 9]);
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-12));
        // no dead columns
        for c in 0..9 {
            assert!((0..g.len()).any(|i| tb.row(i)[c] > 0.0));
        }
        let c = TensorBasis::new(&g, 1).unwrap();
        assert_eq!(c.eval(&[2.5]), vec![2.5; g.len()]);
    }
}
