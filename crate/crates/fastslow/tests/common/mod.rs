//! Shared oracles for the integration suites. Everything here is
//! independent of the library's quadrature paths: plain adaptive Simpson,
//! direct density integration, and closed forms evaluated from scratch.
//!
//! Not every test binary uses every oracle.
#![allow(dead_code)]

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    let whole = simpson(f, a, b);
    let m = 0.5 * (a + b);
    let halves = simpson(f, a, m) + simpson(f, m, b);
    if depth == 0 || (whole - halves).abs() < 15.0 * tol {
        halves + (halves - whole) / 15.0
    } else {
        adaptive_simpson(f, a, m, tol / 2.0, depth - 1)
            + adaptive_simpson(f, m, b, tol / 2.0, depth - 1)
    }
}

/// `E phi(Z)` for `Z ~ N(mean, var)` by Simpson integration of the
/// Gaussian density over +-10 standard deviations.
pub fn gaussian_expectation(phi: &dyn Fn(f64) -> f64, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let lo = mean - 10.0 * sd;
    let hi = mean + 10.0 * sd;
    let n = 20_000usize;
    let h = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for k in 0..=n {
        let y = lo + k as f64 * h;
        let density = (-(y - mean) * (y - mean) / (2.0 * var)).exp()
            / (2.0 * std::f64::consts::PI * var).sqrt();
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * phi(y) * density;
    }
    acc * h / 3.0
}

/// Deterministic family of C^1 test functions indexed by `k`:
/// bounded amplitude and frequency so the quadrature scales are tame.
pub fn smooth_function(k: u64) -> impl Fn(f64) -> f64 {
    let a = 0.3 + 0.5 * ((k as f64 * 0.7).sin().abs());
    let omega = 1.0 + (k % 7) as f64;
    let phase = 0.37 * k as f64;
    let slope = 0.2 * ((k as f64 * 1.3).cos());
    let offset = 0.1 * ((k % 5) as f64) - 0.2;
    move |t: f64| a * (omega * t + phase).sin() + slope * t + offset
}
