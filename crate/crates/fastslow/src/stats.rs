//! Small statistical toolbox used by the Monte Carlo drivers and tests:
//! moments with standard errors, least-squares lines, Kolmogorov-Smirnov
//! tests, batch-mean error estimates.

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() - 1) as f64
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    covariance(xs, ys) / (sample_variance(xs) * sample_variance(ys)).sqrt()
}

/// Standard error of the mean from contiguous batch means; robust to the
/// mild serial correlation left over after thinning.
pub fn batch_std_error(xs: &[f64], n_batches: usize) -> f64 {
    let b = n_batches.max(2).min(xs.len());
    let len = xs.len() / b;
    if len == 0 {
        return std_error(xs);
    }
    let means: Vec<f64> = (0..b).map(|k| mean(&xs[k * len..(k + 1) * len])).collect();
    std_error(&means)
}

#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares line through `(xs, ys)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least two matched points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::invalid("degenerate fit: all abscissae equal"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

/// Kolmogorov distribution tail `Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test against the standard normal law. Returns `(d, p)`.
pub fn ks_test_standard_normal(samples: &[f64]) -> (f64, f64) {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = standard_normal_cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((i as f64 / n - f).abs());
    }
    // Stephens' finite-sample correction.
    let p = kolmogorov_q((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d);
    (d, p)
}

/// Two-sample KS test. Returns `(d, p)` with the asymptotic p-value.
pub fn ks_test_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|p, q| p.partial_cmp(q).unwrap());
    xb.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xa.len(), xb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xa[i].min(xb[j]);
        while i < n && xa[i] <= x {
            i += 1;
        }
        while j < m && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    (d, kolmogorov_q(ne.sqrt() * d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{GaussianStream, SeedSpec};

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ks_accepts_gaussian_sample() {
        let mut s = GaussianStream::new(SeedSpec::new(5, 0));
        let xs: Vec<f64> = (0..10_000).map(|_| s.next_gaussian()).collect();
        let (_, p) = ks_test_standard_normal(&xs);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn ks_rejects_shifted_sample() {
        let mut s = GaussianStream::new(SeedSpec::new(5, 1));
        let xs: Vec<f64> = (0..10_000).map(|_| s.next_gaussian() + 0.2).collect();
        let (_, p) = ks_test_standard_normal(&xs);
        assert!(p < 0.01, "p = {p}");
    }

    #[test]
    fn two_sample_ks_separates_scales() {
        let mut s = GaussianStream::new(SeedSpec::new(6, 0));
        let a: Vec<f64> = (0..4000).map(|_| s.next_gaussian()).collect();
        let b: Vec<f64> = (0..4000).map(|_| 1.5 * s.next_gaussian()).collect();
        let c: Vec<f64> = (0..4000).map(|_| s.next_gaussian()).collect();
        let (_, p_bad) = ks_test_two_sample(&a, &b);
        let (_, p_ok) = ks_test_two_sample(&a, &c);
        assert!(p_bad < 0.01, "p_bad = {p_bad}");
        assert!(p_ok > 0.01, "p_ok = {p_ok}");
    }
}
