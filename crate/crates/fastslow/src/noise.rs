//! Exact synthesis of fractional Brownian motion and standard Brownian
//! motion on uniform grids.
//!
//! fBm with Hurst index `H` is the zero-mean Gaussian process with
//! covariance `E[B_t B_s] = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2`, so its
//! increment sequence on a uniform grid (fractional Gaussian noise) is
//! stationary with autocovariance
//! `gamma(k) = h^{2H} ((k+1)^{2H} - 2 k^{2H} + (k-1)^{2H}) / 2`.
//!
//! Two interchangeable exact generators are provided:
//!
//! * Cholesky factorization of the fGn covariance — the O(n^2)-O(n^3)
//!   reference, and
//! * Davies-Harte circulant embedding — O(n log n), the default above 512
//!   steps.
//!
//! Multi-dimensional fBm is a collection of independent one-dimensional
//! fBm's with the same Hurst index, drawn coordinate-major from the stream.

use crate::error::{Error, Result};
use crate::grid::GridPath;
use crate::rng::{GaussianStream, SeedSpec};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Hurst index, restricted to (0, 1) at construction. Values `H <= 1/2`
/// are accepted here for generator self-tests only; the fast-slow solvers
/// additionally demand `H > 1/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::invalid(format!("Hurst index must lie in (0,1), got {h}")));
        }
        Ok(Self(h))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// True when the index gives long-range dependent increments; the
    /// production solvers require this.
    pub fn is_long_memory(self) -> bool {
        self.0 > 0.5
    }
}

/// Covariance `E[B_t B_s]` of fBm.
pub fn fbm_covariance(t: f64, s: f64, h: HurstParam) -> Result<f64> {
    if !(t >= 0.0) || !(s >= 0.0) || !t.is_finite() || !s.is_finite() {
        return Err(Error::invalid(format!(
            "covariance arguments must be finite and non-negative, got ({t}, {s})"
        )));
    }
    let two_h = 2.0 * h.value();
    Ok(0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Autocovariance of unit-step fGn at integer lag `k` (unit variance at
/// lag zero); multiply by `h^{2H}` for a grid of spacing `h`.
pub fn fgn_autocovariance(k: usize, h: HurstParam) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let two_h = 2.0 * h.value();
    let k = k as f64;
    0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).powf(two_h))
}

enum Backend {
    /// Packed lower-triangular Cholesky factor of the unit-step fGn
    /// covariance.
    Cholesky { factor: Vec<f64> },
    /// Non-negative circulant eigenvalues, length `2 n`.
    DaviesHarte { eigenvalues: Vec<f64> },
}

/// Reusable fBm generator: the expensive covariance work (factorization or
/// circulant spectrum) is done once, after which each [`FbmSampler::sample`]
/// call is cheap. Immutable after construction and safe to share across
/// Monte Carlo workers.
pub struct FbmSampler {
    t_end: f64,
    n_steps: usize,
    hurst: HurstParam,
    backend: Backend,
}

impl FbmSampler {
    pub fn cholesky(t_end: f64, n_steps: usize, hurst: HurstParam) -> Result<Self> {
        check_grid_args(t_end, n_steps)?;
        let n = n_steps;
        // Unit-step covariance; the h^{2H} scale is applied per sample.
        let mut factor = vec![0.0_f64; n * (n + 1) / 2];
        let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
        let cov: Vec<f64> = (0..n).map(|k| fgn_autocovariance(k, hurst)).collect();
        for i in 0..n {
            for j in 0..=i {
                let mut s = cov[i - j];
                for k in 0..j {
                    s -= factor[idx(i, k)] * factor[idx(j, k)];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::numeric(format!(
                            "Cholesky failed: pivot {i} is non-positive ({s:e})"
                        )));
                    }
                    factor[idx(i, i)] = s.sqrt();
                } else {
                    factor[idx(i, j)] = s / factor[idx(j, j)];
                }
            }
        }
        Ok(Self {
            t_end,
            n_steps,
            hurst,
            backend: Backend::Cholesky { factor },
        })
    }

    pub fn davies_harte(t_end: f64, n_steps: usize, hurst: HurstParam) -> Result<Self> {
        check_grid_args(t_end, n_steps)?;
        let n = n_steps;
        let m = 2 * n;
        // First row of the circulant embedding of the fGn covariance.
        let mut row = vec![Complex::new(0.0, 0.0); m];
        for k in 0..=n {
            row[k].re = fgn_autocovariance(k, hurst);
        }
        for k in 1..n {
            row[m - k].re = row[k].re;
        }
        FftPlanner::new().plan_fft_forward(m).process(&mut row);
        let mut eigenvalues: Vec<f64> = row.iter().map(|c| c.re).collect();
        let max = eigenvalues.iter().cloned().fold(0.0, f64::max);
        let tolerance = 1e-10 * max;
        for (k, ev) in eigenvalues.iter_mut().enumerate() {
            if *ev < -tolerance {
                return Err(Error::numeric(format!(
                    "circulant eigenvalue {k} is negative beyond tolerance: {ev:e} (max {max:e})"
                )));
            }
            if *ev < 0.0 {
                // Floating-point dust; the fGn embedding is provably
                // non-negative.
                *ev = 0.0;
            }
        }
        Ok(Self {
            t_end,
            n_steps,
            hurst,
            backend: Backend::DaviesHarte { eigenvalues },
        })
    }

    /// Chooses Davies-Harte above 512 steps, Cholesky otherwise.
    pub fn auto(t_end: f64, n_steps: usize, hurst: HurstParam) -> Result<Self> {
        if n_steps > 512 {
            Self::davies_harte(t_end, n_steps, hurst)
        } else {
            Self::cholesky(t_end, n_steps, hurst)
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn hurst(&self) -> HurstParam {
        self.hurst
    }

    /// Draws one `dim`-dimensional path starting at 0. Coordinates are
    /// independent and consume the stream coordinate-major, so a given
    /// `(seed, grid)` pair is bit-reproducible.
    pub fn sample(&self, dim: usize, seed: SeedSpec) -> Result<GridPath> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let n = self.n_steps;
        let h = self.t_end / n as f64;
        let scale = h.powf(self.hurst.value());
        let mut stream = GaussianStream::new(seed);
        let mut data = vec![0.0_f64; (n + 1) * dim];
        let mut fgn = vec![0.0_f64; n];
        for c in 0..dim {
            match &self.backend {
                Backend::Cholesky { factor } => {
                    let mut z = vec![0.0_f64; n];
                    stream.fill_gaussian(&mut z);
                    let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
                    for i in 0..n {
                        let mut s = 0.0;
                        for j in 0..=i {
                            s += factor[idx(i, j)] * z[j];
                        }
                        fgn[i] = s;
                    }
                }
                Backend::DaviesHarte { eigenvalues } => {
                    davies_harte_draw(eigenvalues, &mut stream, &mut fgn);
                }
            }
            let mut acc = 0.0;
            for i in 0..n {
                acc += scale * fgn[i];
                data[(i + 1) * dim + c] = acc;
            }
        }
        GridPath::new(self.t_end, n, dim, data)
    }
}

/// One unit-step fGn draw by circulant embedding. Consumes exactly
/// `2 n_steps` normals.
fn davies_harte_draw(eigenvalues: &[f64], stream: &mut GaussianStream, out: &mut [f64]) {
    let m = eigenvalues.len();
    let n = m / 2;
    let mut spectral = vec![Complex::new(0.0, 0.0); m];
    spectral[0] = Complex::new((eigenvalues[0] / m as f64).sqrt() * stream.next_gaussian(), 0.0);
    for k in 1..n {
        let amp = (eigenvalues[k] / (2.0 * m as f64)).sqrt();
        let re = amp * stream.next_gaussian();
        let im = amp * stream.next_gaussian();
        spectral[k] = Complex::new(re, im);
        spectral[m - k] = Complex::new(re, -im);
    }
    spectral[n] = Complex::new((eigenvalues[n] / m as f64).sqrt() * stream.next_gaussian(), 0.0);
    FftPlanner::new().plan_fft_forward(m).process(&mut spectral);
    for i in 0..n {
        out[i] = spectral[i].re;
    }
}

fn check_grid_args(t_end: f64, n_steps: usize) -> Result<()> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::invalid(format!("horizon must be positive, got {t_end}")));
    }
    if n_steps == 0 {
        return Err(Error::invalid("n_steps must be at least 1"));
    }
    Ok(())
}

/// One-shot Cholesky fBm draw; see [`FbmSampler`] for reuse across paths.
pub fn sample_fbm_cholesky(
    t_end: f64,
    n_steps: usize,
    hurst: HurstParam,
    dim: usize,
    seed: SeedSpec,
) -> Result<GridPath> {
    FbmSampler::cholesky(t_end, n_steps, hurst)?.sample(dim, seed)
}

/// One-shot Davies-Harte fBm draw.
pub fn sample_fbm_davies_harte(
    t_end: f64,
    n_steps: usize,
    hurst: HurstParam,
    dim: usize,
    seed: SeedSpec,
) -> Result<GridPath> {
    FbmSampler::davies_harte(t_end, n_steps, hurst)?.sample(dim, seed)
}

/// Method-dispatching draw: Davies-Harte above 512 steps.
pub fn sample_fbm(
    t_end: f64,
    n_steps: usize,
    hurst: HurstParam,
    dim: usize,
    seed: SeedSpec,
) -> Result<GridPath> {
    FbmSampler::auto(t_end, n_steps, hurst)?.sample(dim, seed)
}

/// Standard Wiener path: i.i.d. `N(0, h)` increments, coordinate-major.
pub fn sample_bm(t_end: f64, n_steps: usize, dim: usize, seed: SeedSpec) -> Result<GridPath> {
    check_grid_args(t_end, n_steps)?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let h = t_end / n_steps as f64;
    let root_h = h.sqrt();
    let mut stream = GaussianStream::new(seed);
    let mut data = vec![0.0_f64; (n_steps + 1) * dim];
    for c in 0..dim {
        let mut acc = 0.0;
        for i in 0..n_steps {
            acc += root_h * stream.next_gaussian();
            data[(i + 1) * dim + c] = acc;
        }
    }
    GridPath::new(t_end, n_steps, dim, data)
}
