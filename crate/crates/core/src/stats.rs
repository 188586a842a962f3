//! Small numerical helpers shared across the crate.

use crate::error::{domain, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Inverse logit, computed without overflow for large |z|.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(logistic(z))`.
pub fn ln_logistic(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// `ln(1 - logistic(z))`.
pub fn ln_one_minus_logistic(z: f64) -> f64 {
    ln_logistic(-z)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Empirical quantile of already sorted data with linear interpolation
/// between order statistics (`(n - 1) p` positioning).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

/// Effective sample size with Geyer's initial positive sequence truncation.
///
/// A constant trace reports its length.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(xs);
    let c: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 <= f64::EPSILON * m.abs().max(1.0) * f64::EPSILON {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 / c0
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut pair = acf(2 * k) + acf(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        // initial monotone sequence
        pair = pair.min(prev);
        prev = pair;
        sum += pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64)
}

/// Round to nearest integer with ties away from zero.
pub fn round_half_away(x: f64) -> i32 {
    x.round() as i32
}

pub fn require_min_len(xs: &[f64], n: usize, what: &str) -> Result<()> {
    if xs.len() < n {
        return domain(format!("{what} needs at least {n} draws (got {})", xs.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(800.0) == 1.0);
        assert!(logistic(-800.0) >= 0.0);
        for z in [-40.0, -3.0, -0.1, 0.0, 0.7, 5.0, 35.0] {
            let p = logistic(z);
            assert!((ln_logistic(z) - p.ln()).abs() < 1e-12);
            assert!((ln_one_minus_logistic(z) - logistic(-z).ln()).abs() < 1e-12);
        }
        assert!(ln_logistic(-800.0).is_finite());
        assert!(ln_one_minus_logistic(800.0).is_finite());
    }

    #[test]
    fn quantiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.5), 50.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 100.0);
    }

    #[test]
    fn ess_constant_and_iid() {
        assert_eq!(effective_sample_size(&[2.0; 50]), 50.0);
        // A strongly autocorrelated sequence has a much smaller ESS.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ar: Vec<f64> = (0..2000)
            .scan(0.0, |s, _| {
                *s = 0.95 * *s + rng.sample::<f64, _>(StandardNormal);
                Some(*s)
            })
            .collect();
        assert!(effective_sample_size(&ar) < 400.0);
    }

    #[test]
    fn rounding_ties() {
        assert_eq!(round_half_away(2.5), 3);
        assert_eq!(round_half_away(-2.5), -3);
        assert_eq!(round_half_away(3.9), 4);
        assert_eq!(round_half_away(-0.4), 0);
    }
}
