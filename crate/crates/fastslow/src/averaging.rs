//! Ergodics of the frozen equation: invariant-measure sampling, the
//! averaged drift `bbar1(t,x) = int b1(t,x,y) mu^x(dy)`, and Monte Carlo
//! estimators for the decay rates that drive the averaging principle
//! (synchronous-coupling contraction, sensitivity in the frozen slow
//! argument, semigroup convergence to the invariant measure, and the
//! decorrelation of the drift fluctuation).
//!
//! The invariant measure is sampled from a single long trajectory after a
//! burn-in of several `1/beta2` relaxation times, thinned to decorrelate;
//! geometric ergodicity of the fast dynamics makes this time average
//! efficient. Standard errors come from batch means, which absorb the
//! residual serial correlation.

use crate::error::{Error, Result};
use crate::rng::{GaussianStream, SeedSpec};
use crate::sde::{AveragedDrift, HypothesisSet};
use crate::stats;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

/// Internal Euler step for frozen-equation drivers; small enough that the
/// OU discretization bias stays near 0.1%.
fn frozen_dt(hyp: &HypothesisSet) -> f64 {
    0.005 / hyp.fast_lipschitz()
}

/// How an [`EmpiricalMeasure`] was produced.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MeasureProvenance {
    pub x: Vec<f64>,
    pub burn_in: f64,
    pub horizon: f64,
    pub thinning: usize,
    pub dt: f64,
    pub seed: SeedSpec,
}

/// Samples from the invariant measure `mu^x` of the frozen equation,
/// drawn from one long thinned trajectory.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
    d2: usize,
    pub provenance: MeasureProvenance,
}

impl EmpiricalMeasure {
    pub fn len(&self) -> usize {
        self.samples.len() / self.d2
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d2
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.d2..(i + 1) * self.d2]
    }

    pub fn component_mean(&self, c: usize) -> f64 {
        (0..self.len()).map(|i| self.sample(i)[c]).sum::<f64>() / self.len() as f64
    }

    pub fn component_variance(&self, c: usize) -> f64 {
        let vals: Vec<f64> = (0..self.len()).map(|i| self.sample(i)[c]).collect();
        stats::sample_variance(&vals)
    }

    pub fn component_second_moment(&self, c: usize) -> f64 {
        (0..self.len())
            .map(|i| self.sample(i)[c].powi(2))
            .sum::<f64>()
            / self.len() as f64
    }

    /// Writes samples as CSV (`y1,...,yd` rows) plus a `.meta.json`
    /// sidecar carrying the provenance.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for c in 0..self.d2 {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "y{}", c + 1);
        }
        out.push('\n');
        for i in 0..self.len() {
            for (c, v) in self.sample(i).iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        let meta = serde_json::to_string_pretty(&self.provenance)
            .map_err(|e| Error::numeric(format!("provenance serialization: {e}")))?;
        std::fs::write(sidecar_path(path), meta)?;
        Ok(())
    }

    /// Reads samples written by [`EmpiricalMeasure::write_csv`]. The
    /// provenance sidecar is required; callers accepting provenance-free
    /// reuse must synthesize one explicitly.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::invalid("empty measure csv"))?;
        let d2 = header.split(',').count();
        let mut samples = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            for field in line.split(',') {
                samples.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid(format!("bad sample {field:?}: {e}")))?,
                );
            }
        }
        if samples.len() % d2 != 0 {
            return Err(Error::invalid("ragged measure csv"));
        }
        let meta = std::fs::read_to_string(sidecar_path(path)).map_err(|_| {
            Error::invalid(format!(
                "missing provenance sidecar {}",
                sidecar_path(path).display()
            ))
        })?;
        let provenance: MeasureProvenance = serde_json::from_str(&meta)
            .map_err(|e| Error::invalid(format!("bad provenance sidecar: {e}")))?;
        Ok(Self {
            samples,
            d2,
            provenance,
        })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

/// Sampling knobs for [`sample_invariant_measure`].
#[derive(Debug, Clone)]
pub struct MeasureOptions {
    pub burn_in: f64,
    pub horizon: f64,
    /// Record every `thinning`-th Euler step after burn-in.
    pub thinning: usize,
    pub seed: SeedSpec,
}

impl MeasureOptions {
    /// Burn-in `5/beta2`, thinning at time lag `2/beta1`, horizon sized
    /// for `n_samples` thinned draws (at least `20/beta2`).
    pub fn defaults(hyp: &HypothesisSet, n_samples: usize, seed: SeedSpec) -> Self {
        let dt = frozen_dt(hyp);
        let lag = 2.0 / hyp.beta1;
        let thinning = (lag / dt).ceil() as usize;
        let horizon = (n_samples as f64 * thinning as f64 * dt).max(20.0 / hyp.beta2);
        Self {
            burn_in: 5.0 / hyp.beta2,
            horizon,
            thinning,
            seed,
        }
    }
}

/// Single-trajectory time-average sampler for `mu^x`. Requires
/// `burn_in >= 5/beta2` and `horizon >= 20/beta2` (geometric forgetting
/// must have acted before sampling starts).
pub fn sample_invariant_measure(
    x: &[f64],
    hyp: &HypothesisSet,
    opts: &MeasureOptions,
) -> Result<EmpiricalMeasure> {
    if opts.burn_in < 5.0 / hyp.beta2 {
        return Err(Error::invalid(format!(
            "burn_in {} below 5/beta2 = {}",
            opts.burn_in,
            5.0 / hyp.beta2
        )));
    }
    if opts.horizon < 20.0 / hyp.beta2 {
        return Err(Error::invalid(format!(
            "horizon {} below 20/beta2 = {}",
            opts.horizon,
            20.0 / hyp.beta2
        )));
    }
    if opts.thinning == 0 {
        return Err(Error::invalid("thinning must be at least 1"));
    }
    let d = hyp.dims;
    if x.len() != d.d1 {
        return Err(Error::invalid("x dimension does not match the system"));
    }
    let dt = frozen_dt(hyp);
    let root_dt = dt.sqrt();
    let burn_steps = (opts.burn_in / dt).ceil() as usize;
    let total_steps = burn_steps + (opts.horizon / dt).ceil() as usize;
    let mut stream = GaussianStream::new(opts.seed);
    let mut state = vec![0.0; d.d2];
    let mut drift = vec![0.0; d.d2];
    let mut sigma = vec![0.0; d.d2 * d.r];
    let mut dw = vec![0.0; d.r];
    let mut samples = Vec::new();
    for step in 0..total_steps {
        hyp.eval_b2(x, &state, &mut drift);
        hyp.eval_sigma2(x, &state, &mut sigma);
        for v in dw.iter_mut() {
            *v = root_dt * stream.next_gaussian();
        }
        for c in 0..d.d2 {
            let mut v = state[c] + dt * drift[c];
            let row = &sigma[c * d.r..(c + 1) * d.r];
            for (j, s) in row.iter().enumerate() {
                v += s * dw[j];
            }
            state[c] = v;
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                step,
                time: step as f64 * dt,
                what: "frozen trajectory during measure sampling".into(),
            });
        }
        if step >= burn_steps && (step - burn_steps).is_multiple_of(opts.thinning) {
            samples.extend_from_slice(&state);
        }
    }
    Ok(EmpiricalMeasure {
        samples,
        d2: d.d2,
        provenance: MeasureProvenance {
            x: x.to_vec(),
            burn_in: opts.burn_in,
            horizon: opts.horizon,
            thinning: opts.thinning,
            dt,
            seed: opts.seed,
        },
    })
}

/// Monte Carlo average of `b1(t, x, .)` over an empirical measure, with
/// batch-mean standard errors.
#[derive(Debug, Clone)]
pub struct DriftEstimate {
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_samples: usize,
}

/// `bbar1(t, x)` estimated from `measure`. The measure must have been
/// sampled at the same `x` unless `allow_x_mismatch` explicitly accepts
/// reuse.
pub fn averaged_drift(
    hyp: &HypothesisSet,
    measure: &EmpiricalMeasure,
    t: f64,
    x: &[f64],
    allow_x_mismatch: bool,
) -> Result<DriftEstimate> {
    if !allow_x_mismatch && measure.provenance.x != x {
        return Err(Error::invalid(format!(
            "measure was sampled at x = {:?}, queried at x = {:?} (pass the mismatch override to reuse)",
            measure.provenance.x, x
        )));
    }
    if measure.len() < 1_000 {
        return Err(Error::invalid(format!(
            "need at least 1000 samples for averaging, have {}",
            measure.len()
        )));
    }
    let d1 = hyp.dims.d1;
    let n = measure.len();
    let mut per_coord: Vec<Vec<f64>> = vec![Vec::with_capacity(n); d1];
    let mut out = vec![0.0; d1];
    for i in 0..n {
        hyp.eval_b1(t, x, measure.sample(i), &mut out)?;
        for (c, v) in out.iter().enumerate() {
            per_coord[c].push(*v);
        }
    }
    Ok(DriftEstimate {
        value: per_coord.iter().map(|v| stats::mean(v)).collect(),
        std_error: per_coord
            .iter()
            .map(|v| stats::batch_std_error(v, 20))
            .collect(),
        n_samples: n,
    })
}

/// Tabulated averaged drift on a `(t, x)` product grid with bilinear
/// interpolation, so the averaged solver never resamples `mu^x` per step.
/// Out-of-range queries clamp to the boundary and bump a counter.
///
/// Only scalar slow states are tabulated (`d1 = 1`), matching the
/// benchmark family.
pub struct DriftTable {
    t_grid: Vec<f64>,
    x_grid: Vec<f64>,
    /// `values[ti * nx + xi]`.
    values: Vec<f64>,
    clamped: AtomicU64,
}

impl DriftTable {
    fn validate_grids(t_grid: &[f64], x_grid: &[f64]) -> Result<()> {
        if t_grid.is_empty() || x_grid.is_empty() {
            return Err(Error::invalid("interpolation grids must be non-empty"));
        }
        if x_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("interpolation grids must be strictly increasing"));
        }
        Ok(())
    }

    /// Tabulates a closed-form drift (used for cross-validation and for
    /// systems that ship `bbar1` analytically).
    pub fn tabulate(f: &dyn AveragedDrift, t_grid: &[f64], x_grid: &[f64]) -> Result<Self> {
        Self::validate_grids(t_grid, x_grid)?;
        let mut values = Vec::with_capacity(t_grid.len() * x_grid.len());
        let mut out = [0.0];
        for &t in t_grid {
            for &x in x_grid {
                f.eval(t, &[x], &mut out);
                values.push(out[0]);
            }
        }
        Ok(Self {
            t_grid: t_grid.to_vec(),
            x_grid: x_grid.to_vec(),
            values,
            clamped: AtomicU64::new(0),
        })
    }

    /// Builds the table by sampling `mu^x` at every x node (one stream per
    /// node) and averaging `b1` at every t node.
    pub fn from_invariant_sampling(
        hyp: &HypothesisSet,
        t_grid: &[f64],
        x_grid: &[f64],
        n_samples: usize,
        seed: SeedSpec,
    ) -> Result<Self> {
        if hyp.dims.d1 != 1 {
            return Err(Error::invalid(
                "drift tabulation is implemented for scalar slow states",
            ));
        }
        Self::validate_grids(t_grid, x_grid)?;
        let mut values = vec![0.0; t_grid.len() * x_grid.len()];
        for (xi, &x) in x_grid.iter().enumerate() {
            let opts = MeasureOptions::defaults(hyp, n_samples, seed.offset(xi as u64));
            let measure = sample_invariant_measure(&[x], hyp, &opts)?;
            for (ti, &t) in t_grid.iter().enumerate() {
                let est = averaged_drift(hyp, &measure, t, &[x], false)?;
                values[ti * x_grid.len() + xi] = est.value[0];
            }
        }
        Ok(Self {
            t_grid: t_grid.to_vec(),
            x_grid: x_grid.to_vec(),
            values,
            clamped: AtomicU64::new(0),
        })
    }

    fn bracket(grid: &[f64], v: f64) -> (usize, f64, bool) {
        let n = grid.len();
        if n == 1 {
            return (0, 0.0, false);
        }
        if v <= grid[0] {
            return (0, 0.0, v < grid[0]);
        }
        if v >= grid[n - 1] {
            return (n - 2, 1.0, v > grid[n - 1]);
        }
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if grid[mid] <= v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        ((lo).min(n - 2), (v - grid[lo]) / (grid[lo + 1] - grid[lo]), false)
    }

    /// Bilinear evaluation; returns true when the query was clamped.
    pub fn eval_clamped(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let (ti, wt, ct) = Self::bracket(&self.t_grid, t);
        let (xi, wx, cx) = Self::bracket(&self.x_grid, x[0]);
        let nx = self.x_grid.len();
        let at = |ti: usize, xi: usize| self.values[ti * nx + xi];
        let lower = if nx == 1 {
            at(ti, 0)
        } else {
            (1.0 - wx) * at(ti, xi) + wx * at(ti, xi + 1)
        };
        let v = if self.t_grid.len() == 1 {
            lower
        } else {
            let upper = if nx == 1 {
                at(ti + 1, 0)
            } else {
                (1.0 - wx) * at(ti + 1, xi) + wx * at(ti + 1, xi + 1)
            };
            (1.0 - wt) * lower + wt * upper
        };
        out[0] = v;
        let clamped = ct || cx;
        if clamped {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        clamped
    }

    /// Number of clamped queries seen so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }
}

impl AveragedDrift for DriftTable {
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.eval_clamped(t, x, out);
    }
}

/// Least-squares exponential decay fit in the log domain.
#[derive(Debug, Clone)]
pub struct DecayFit {
    /// Fitted decay rate (positive for decaying signals).
    pub rate: f64,
    /// Fitted value at time 0.
    pub amplitude: f64,
    pub r_squared: f64,
    /// True when the signal was identically zero and no rate exists.
    pub degenerate: bool,
    pub n_points: usize,
}

/// Fits `values ~ amplitude * exp(-rate * t)` over the window where the
/// Monte Carlo signal exceeds ten times its standard error.
fn fit_exponential_decay(times: &[f64], values: &[f64], std_errors: &[f64]) -> Result<DecayFit> {
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for i in 0..values.len() {
        if values[i] > 10.0 * std_errors[i] && values[i] > 0.0 {
            ts.push(times[i]);
            ys.push(values[i].ln());
        }
    }
    if ts.len() < 3 {
        return Err(Error::FitFailure(format!(
            "only {} points above the 10-sigma window; need 3",
            ts.len()
        )));
    }
    let fit = stats::linear_fit(&ts, &ys)?;
    Ok(DecayFit {
        rate: -fit.slope,
        amplitude: fit.intercept.exp(),
        r_squared: fit.r_squared,
        degenerate: false,
        n_points: ts.len(),
    })
}

/// Record times for the decay estimators.
fn record_times(horizon: f64, n_record: usize) -> Vec<f64> {
    (1..=n_record)
        .map(|k| horizon * k as f64 / n_record as f64)
        .collect()
}

/// Synchronous-coupling contraction: two frozen trajectories from `y1`,
/// `y2` under identical Wiener increments; fits the exponential decay of
/// `E|Y^{x,y1}_t - Y^{x,y2}_t|^2` (target rate `beta1`).
pub fn contraction_estimate(
    x: &[f64],
    y1: &[f64],
    y2: &[f64],
    hyp: &HypothesisSet,
    horizon: f64,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<DecayFit> {
    if y1 == y2 {
        return Ok(DecayFit {
            rate: 0.0,
            amplitude: 0.0,
            r_squared: 1.0,
            degenerate: true,
            n_points: 0,
        });
    }
    let sq_gaps = coupled_moments(x, x, y1, y2, hyp, horizon, n_paths, seed)?;
    let times = record_times(horizon, N_RECORD);
    let (means, ses): (Vec<f64>, Vec<f64>) = sq_gaps
        .iter()
        .map(|v| (stats::mean(v), stats::std_error(v)))
        .unzip();
    fit_exponential_decay(&times, &means, &ses)
}

const N_RECORD: usize = 32;

/// Runs synchronously coupled trajectories `(Y^{xa,ya}, Y^{xb,yb})` and
/// returns the squared gaps per record time and path.
#[allow(clippy::too_many_arguments)]
fn coupled_moments(
    xa: &[f64],
    xb: &[f64],
    ya: &[f64],
    yb: &[f64],
    hyp: &HypothesisSet,
    horizon: f64,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<Vec<Vec<f64>>> {
    let d = hyp.dims;
    let dt = frozen_dt(hyp);
    let root_dt = dt.sqrt();
    let n_steps = (horizon / dt).ceil() as usize;
    let record_every = (n_steps / N_RECORD).max(1);
    let mut out: Vec<Vec<f64>> = (0..N_RECORD).map(|_| Vec::with_capacity(n_paths)).collect();
    let mut drift_a = vec![0.0; d.d2];
    let mut drift_b = vec![0.0; d.d2];
    let mut sig_a = vec![0.0; d.d2 * d.r];
    let mut sig_b = vec![0.0; d.d2 * d.r];
    let mut dw = vec![0.0; d.r];
    for p in 0..n_paths as u64 {
        let mut stream = GaussianStream::new(seed.offset(p));
        let mut sa = ya.to_vec();
        let mut sb = yb.to_vec();
        let mut rec = 0usize;
        for step in 0..n_steps {
            hyp.eval_b2(xa, &sa, &mut drift_a);
            hyp.eval_sigma2(xa, &sa, &mut sig_a);
            hyp.eval_b2(xb, &sb, &mut drift_b);
            hyp.eval_sigma2(xb, &sb, &mut sig_b);
            for v in dw.iter_mut() {
                *v = root_dt * stream.next_gaussian();
            }
            for c in 0..d.d2 {
                let mut va = sa[c] + dt * drift_a[c];
                let mut vb = sb[c] + dt * drift_b[c];
                for j in 0..d.r {
                    va += sig_a[c * d.r + j] * dw[j];
                    vb += sig_b[c * d.r + j] * dw[j];
                }
                sa[c] = va;
                sb[c] = vb;
            }
            if (step + 1).is_multiple_of(record_every) && rec < N_RECORD {
                let gap: f64 = sa
                    .iter()
                    .zip(&sb)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                out[rec].push(gap);
                rec += 1;
            }
        }
        while rec < N_RECORD {
            let gap: f64 = sa.iter().zip(&sb).map(|(a, b)| (a - b) * (a - b)).sum();
            out[rec].push(gap);
            rec += 1;
        }
    }
    Ok(out)
}

/// Quadratic sensitivity of the frozen process in its slow argument.
#[derive(Debug, Clone)]
pub struct SensitivityCheck {
    /// Sup over record times of `E|Y^{x1,y}_t - Y^{x2,y}_t|^2`.
    pub sup_mse: f64,
    /// Fitted bound `C |x1-x2|^2`.
    pub bound: f64,
    /// Regression exponent of the sup-gap against the x-gap.
    pub exponent: f64,
    /// True when the exponent lies within 2 +- 0.2.
    pub holds: bool,
}

/// Synchronous coupling of `Y^{x1,y}` and `Y^{x1 + s(x2-x1), y}` for gap
/// scalings `s in {1, 1/2, 1/4}`, with a log-log regression of the sup
/// mean-square gap against the x-gap (target exponent 2).
#[allow(clippy::too_many_arguments)]
pub fn x_sensitivity_estimate(
    x1: &[f64],
    x2: &[f64],
    y: &[f64],
    hyp: &HypothesisSet,
    horizon: f64,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<SensitivityCheck> {
    let gap: f64 = norm_of_diff(x1, x2);
    if gap == 0.0 {
        return Ok(SensitivityCheck {
            sup_mse: 0.0,
            bound: 0.0,
            exponent: 0.0,
            holds: true,
        });
    }
    let scalings = [1.0, 0.5, 0.25];
    let mut log_gaps = Vec::new();
    let mut log_sups = Vec::new();
    let mut sup_full = 0.0;
    for (si, &s) in scalings.iter().enumerate() {
        let xb: Vec<f64> = x1
            .iter()
            .zip(x2)
            .map(|(a, b)| a + s * (b - a))
            .collect();
        let sq = coupled_moments(
            x1,
            &xb,
            y,
            y,
            hyp,
            horizon,
            n_paths,
            seed.offset(1000 * si as u64),
        )?;
        let sup = sq
            .iter()
            .map(|v| stats::mean(v))
            .fold(0.0, f64::max);
        if si == 0 {
            sup_full = sup;
        }
        log_gaps.push((s * gap).ln());
        log_sups.push(sup.max(1e-300).ln());
    }
    let fit = stats::linear_fit(&log_gaps, &log_sups)?;
    let exponent = fit.slope;
    let c_fit = fit.intercept.exp();
    Ok(SensitivityCheck {
        sup_mse: sup_full,
        bound: c_fit * gap * gap,
        exponent,
        holds: (exponent - 2.0).abs() <= 0.2,
    })
}

fn norm_of_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Semigroup convergence to the invariant average: fits the decay of
/// `|E phi(Y^{x,y}_s) - int phi dmu^x|` (target rate `beta1`, observed at
/// least `beta1/2` for Lipschitz observables).
#[allow(clippy::too_many_arguments)]
pub fn ergodic_convergence_estimate(
    x: &[f64],
    y: &[f64],
    hyp: &HypothesisSet,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    horizon: f64,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<DecayFit> {
    // Invariant average of phi, sized so its standard error stays below
    // one tenth of the initial gap.
    let mut n_samples = 4_000usize;
    let (mu_phi, mu_se, g0) = loop {
        let opts = MeasureOptions::defaults(hyp, n_samples, seed.offset(999_000));
        let measure = sample_invariant_measure(x, hyp, &opts)?;
        let vals: Vec<f64> = (0..measure.len()).map(|i| phi(measure.sample(i))).collect();
        let mu = stats::mean(&vals);
        let se = stats::batch_std_error(&vals, 20);
        let g0 = (phi(y) - mu).abs();
        if g0 == 0.0 && stats::sample_variance(&vals) == 0.0 {
            // Constant observable: the gap is identically zero.
            return Ok(DecayFit {
                rate: 0.0,
                amplitude: 0.0,
                r_squared: 1.0,
                degenerate: true,
                n_points: 0,
            });
        }
        if se <= 0.1 * g0 {
            break (mu, se, g0);
        }
        n_samples *= 2;
        if n_samples > 64_000 {
            return Err(Error::FitFailure(format!(
                "invariant average too noisy: se {se} vs initial gap {g0}"
            )));
        }
    };
    let _ = g0;

    let d = hyp.dims;
    let dt = frozen_dt(hyp);
    let root_dt = dt.sqrt();
    let n_steps = (horizon / dt).ceil() as usize;
    let record_every = (n_steps / N_RECORD).max(1);
    let mut observed: Vec<Vec<f64>> =
        (0..N_RECORD).map(|_| Vec::with_capacity(n_paths)).collect();
    let mut drift = vec![0.0; d.d2];
    let mut sigma = vec![0.0; d.d2 * d.r];
    let mut dw = vec![0.0; d.r];
    for p in 0..n_paths as u64 {
        let mut stream = GaussianStream::new(seed.offset(p));
        let mut state = y.to_vec();
        let mut rec = 0usize;
        for step in 0..n_steps {
            hyp.eval_b2(x, &state, &mut drift);
            hyp.eval_sigma2(x, &state, &mut sigma);
            for v in dw.iter_mut() {
                *v = root_dt * stream.next_gaussian();
            }
            for c in 0..d.d2 {
                let mut v = state[c] + dt * drift[c];
                let row = &sigma[c * d.r..(c + 1) * d.r];
                for (j, s) in row.iter().enumerate() {
                    v += s * dw[j];
                }
                state[c] = v;
            }
            if (step + 1).is_multiple_of(record_every) && rec < N_RECORD {
                observed[rec].push(phi(&state));
                rec += 1;
            }
        }
    }
    let times = record_times(horizon, N_RECORD);
    let mut gaps = Vec::with_capacity(N_RECORD);
    let mut ses = Vec::with_capacity(N_RECORD);
    for obs in &observed {
        gaps.push((stats::mean(obs) - mu_phi).abs());
        ses.push((stats::std_error(obs).powi(2) + mu_se * mu_se).sqrt());
    }
    fit_exponential_decay(&times, &gaps, &ses)
}

/// Decorrelation of the drift fluctuation along one frozen trajectory.
#[derive(Debug, Clone)]
pub struct DecorrelationEstimate {
    pub fit: DecayFit,
    /// `(s - zeta, J(s, zeta))` pairs on the requested grid.
    pub j_values: Vec<(f64, f64)>,
    /// `J(zeta, zeta)`: the variance of the fluctuation, non-negative.
    pub diagonal: f64,
}

/// Monte Carlo estimate of
/// `J(s, zeta) = E < b1f(Y_s) - bbar, b1f(Y_zeta) - bbar >` over the grid
/// `s_grid` (with `zeta = s_grid[0]`), followed by an exponential fit in
/// `s - zeta` (target rate at least `beta1/2`).
#[allow(clippy::too_many_arguments)]
pub fn decorrelation_estimate(
    x: &[f64],
    y: &[f64],
    hyp: &HypothesisSet,
    b1_frozen: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    bbar: &[f64],
    s_grid: &[f64],
    seed: SeedSpec,
    n_paths: usize,
) -> Result<DecorrelationEstimate> {
    if s_grid.len() < 4 || s_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "s_grid must be strictly increasing with at least 4 points",
        ));
    }
    let d = hyp.dims;
    let dt = frozen_dt(hyp);
    let root_dt = dt.sqrt();
    let record_steps: Vec<usize> = s_grid.iter().map(|s| (s / dt).round() as usize).collect();
    let n_steps = *record_steps.last().unwrap();
    let zeta = s_grid[0];
    let mut products: Vec<Vec<f64>> =
        (0..s_grid.len()).map(|_| Vec::with_capacity(n_paths)).collect();
    let mut drift = vec![0.0; d.d2];
    let mut sigma = vec![0.0; d.d2 * d.r];
    let mut dw = vec![0.0; d.r];
    let mut fluct = vec![0.0; d.d1];
    for p in 0..n_paths as u64 {
        let mut stream = GaussianStream::new(seed.offset(p));
        let mut state = y.to_vec();
        let mut v_zeta = vec![0.0; d.d1];
        let mut rec = 0usize;
        for step in 0..=n_steps {
            if rec < record_steps.len() && step == record_steps[rec] {
                b1_frozen(&state, &mut fluct);
                for (c, v) in fluct.iter_mut().enumerate() {
                    *v -= bbar[c];
                }
                if rec == 0 {
                    v_zeta.copy_from_slice(&fluct);
                }
                let dot: f64 = fluct.iter().zip(&v_zeta).map(|(a, b)| a * b).sum();
                products[rec].push(dot);
                rec += 1;
            }
            if step == n_steps {
                break;
            }
            hyp.eval_b2(x, &state, &mut drift);
            hyp.eval_sigma2(x, &state, &mut sigma);
            for v in dw.iter_mut() {
                *v = root_dt * stream.next_gaussian();
            }
            for c in 0..d.d2 {
                let mut v = state[c] + dt * drift[c];
                let row = &sigma[c * d.r..(c + 1) * d.r];
                for (j, s) in row.iter().enumerate() {
                    v += s * dw[j];
                }
                state[c] = v;
            }
        }
    }
    let mut j_values = Vec::with_capacity(s_grid.len());
    let mut times = Vec::new();
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for (si, prod) in products.iter().enumerate() {
        let j = stats::mean(prod);
        j_values.push((s_grid[si] - zeta, j));
        if si > 0 {
            times.push(s_grid[si] - zeta);
            means.push(j);
            ses.push(stats::std_error(prod));
        }
    }
    let diagonal = j_values[0].1;
    let fit = fit_exponential_decay(&times, &means, &ses)?;
    Ok(DecorrelationEstimate {
        fit,
        j_values,
        diagonal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems;

    fn ou() -> HypothesisSet {
        systems::build("ou-sin").unwrap().hyp
    }

    fn measure_at(x: f64, n_samples: usize, seed: u64) -> EmpiricalMeasure {
        let hyp = ou();
        let opts = MeasureOptions::defaults(&hyp, n_samples, SeedSpec::new(seed, 0));
        sample_invariant_measure(&[x], &hyp, &opts).unwrap()
    }

    #[test]
    fn invariant_measure_matches_ou_law() {
        // mu^x = N(x, 1) for the OU frozen block.
        let m = measure_at(1.5, 16_000, 23);
        let vals: Vec<f64> = (0..m.len()).map(|i| m.sample(i)[0]).collect();
        let mean = stats::mean(&vals);
        let se = stats::batch_std_error(&vals, 20);
        assert!((mean - 1.5).abs() < 3.0 * se, "mean {mean}, se {se}");
        let var = m.component_variance(0);
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn invariant_measure_moments_reproducible_across_seeds() {
        let a = measure_at(0.5, 3_000, 100);
        let b = measure_at(0.5, 3_000, 101);
        let va: Vec<f64> = (0..a.len()).map(|i| a.sample(i)[0]).collect();
        let vb: Vec<f64> = (0..b.len()).map(|i| b.sample(i)[0]).collect();
        let gap = (stats::mean(&va) - stats::mean(&vb)).abs();
        let se = (stats::batch_std_error(&va, 20).powi(2)
            + stats::batch_std_error(&vb, 20).powi(2))
        .sqrt();
        assert!(gap < 3.0 * se, "gap {gap}, se {se}");
    }

    #[test]
    fn degenerate_diffusion_gives_point_mass() {
        // sigma2 = 0 with contractive drift: the measure collapses onto
        // the drift fixed point y = x.
        let hyp = HypothesisSet::new(
            crate::sde::SystemDims {
                d1: 1,
                d2: 1,
                m: 1,
                r: 1,
            },
            |_t, _x, y, out| out[0] = y[0].sin(),
            |_t, _x, _y, out| out[0] = 0.5,
            |x, y, out| out[0] = x[0] - y[0],
            |_x, _y, out| out[0] = 0.0,
            1.0,
            1.0,
            2.0,
            2.0,
            1.0,
            None,
        )
        .unwrap();
        let mut opts = MeasureOptions::defaults(&hyp, 2_000, SeedSpec::new(5, 0));
        // Deterministic relaxation reaches the fixed point only like
        // e^{-t}; burn long enough that the residual is far below the
        // point-mass tolerance.
        opts.burn_in = 20.0;
        let m = sample_invariant_measure(&[0.7], &hyp, &opts).unwrap();
        assert!((m.component_mean(0) - 0.7).abs() < 1e-6);
        assert!(m.component_variance(0) < 1e-12);
    }

    #[test]
    fn second_moment_bound_stable_in_x() {
        // int |y|^2 mu^x(dy) <= C (1 + |x|^2) with C stable across x; for
        // the OU block the ratio is exactly 1.
        let mut ratios = Vec::new();
        for (i, &x) in [0.0_f64, 1.0, 2.0, 4.0].iter().enumerate() {
            let m = measure_at(x, 2_000, 300 + i as u64);
            ratios.push(m.component_second_moment(0) / (1.0 + x * x));
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo < 1.5, "ratios {ratios:?}");
    }

    #[test]
    fn averaged_drift_matches_closed_form() {
        let hyp = ou();
        for (i, &x) in [0.8_f64, -1.2].iter().enumerate() {
            let m = measure_at(x, 4_000, 400 + i as u64);
            let est = averaged_drift(&hyp, &m, 0.0, &[x], false).unwrap();
            let want = systems::OU_SIN_AVERAGED_COEF * x.sin();
            assert!(
                (est.value[0] - want).abs() < 3.0 * est.std_error[0] + 2e-3,
                "x = {x}: {} vs {want} (se {})",
                est.value[0],
                est.std_error[0]
            );
        }
        // Odd symmetry at x = 0.
        let m = measure_at(0.0, 4_000, 500);
        let est = averaged_drift(&hyp, &m, 0.0, &[0.0], false).unwrap();
        assert!(est.value[0].abs() < 3.0 * est.std_error[0]);
    }

    #[test]
    fn averaged_drift_is_exact_for_y_free_b1() {
        let sys = systems::build("ou-yfree").unwrap();
        let m = measure_at(0.9, 1_500, 600);
        // The measure was sampled under ou-sin dynamics, but b1 ignores y,
        // so the average equals b1 exactly; reuse requires the override.
        let est = averaged_drift(&sys.hyp, &m, 0.0, &[0.9], true).unwrap();
        let want = systems::OU_SIN_AVERAGED_COEF * 0.9_f64.sin();
        assert!((est.value[0] - want).abs() <= 1e-12, "{} vs {want}", est.value[0]);
        assert!(est.std_error[0] <= 1e-15);
    }

    #[test]
    fn averaged_drift_rejects_x_mismatch() {
        let hyp = ou();
        let m = measure_at(1.0, 1_500, 700);
        assert!(averaged_drift(&hyp, &m, 0.0, &[2.0], false).is_err());
        assert!(averaged_drift(&hyp, &m, 0.0, &[2.0], true).is_ok());
    }

    #[test]
    fn averaged_drift_bounded_by_declared_sup() {
        let hyp = ou();
        let m = measure_at(2.0, 1_500, 800);
        let est = averaged_drift(&hyp, &m, 0.0, &[2.0], false).unwrap();
        assert!(est.value[0].abs() <= hyp.b1_sup_bound);
    }

    #[test]
    fn drift_table_constant_is_exact() {
        let c = |_t: f64, _x: &[f64], out: &mut [f64]| out[0] = 0.7;
        let table = DriftTable::tabulate(&c, &[0.0], &[-1.0, 0.0, 1.0]).unwrap();
        let mut out = [0.0];
        assert!(!table.eval_clamped(0.0, &[0.3], &mut out));
        assert_eq!(out[0], 0.7);
    }

    #[test]
    fn drift_table_interpolates_benchmark_closed_form() {
        // 64-point tabulation of exp(-1/2) sin(x) over [-pi, pi]: sup
        // interpolation error below 1e-3 at off-grid queries.
        let coef = systems::OU_SIN_AVERAGED_COEF;
        let f = move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = coef * x[0].sin();
        let grid: Vec<f64> = (0..64)
            .map(|i| -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / 63.0)
            .collect();
        let table = DriftTable::tabulate(&f, &[0.0], &grid).unwrap();
        let mut worst = 0.0_f64;
        let mut out = [0.0];
        for k in 0..1000 {
            let x = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / 1000.0;
            table.eval_clamped(0.0, &[x], &mut out);
            worst = worst.max((out[0] - coef * x.sin()).abs());
        }
        assert!(worst <= 1e-3, "sup interpolation error {worst}");
    }

    #[test]
    fn drift_table_clamps_and_counts() {
        let f = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = x[0];
        let table = DriftTable::tabulate(&f, &[0.0], &[-1.0, 1.0]).unwrap();
        let mut out = [0.0];
        let clamped = table.eval_clamped(0.0, &[2.0], &mut out);
        assert!(clamped);
        assert_eq!(out[0], 1.0); // value at x_max
        assert_eq!(table.clamp_count(), 1);
    }

    #[test]
    fn sampled_table_cross_validates_closed_form() {
        let hyp = ou();
        let x_grid = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let table =
            DriftTable::from_invariant_sampling(&hyp, &[0.0], &x_grid, 2_000, SeedSpec::new(17, 0))
                .unwrap();
        let mut out = [0.0];
        for &x in &x_grid {
            table.eval_clamped(0.0, &[x], &mut out);
            let want = systems::OU_SIN_AVERAGED_COEF * x.sin();
            assert!((out[0] - want).abs() < 0.03, "x = {x}: {} vs {want}", out[0]);
        }
    }

    #[test]
    fn contraction_rate_matches_ou() {
        // Synchronous OU coupling decays exactly at rate beta1 = 2.
        let hyp = ou();
        let fit =
            contraction_estimate(&[0.5], &[3.0], &[1.0], &hyp, 3.0, 400, SeedSpec::new(31, 0))
                .unwrap();
        assert!(!fit.degenerate);
        assert!(
            fit.rate >= 1.8 && fit.rate <= 2.2,
            "rate {} (r2 {})",
            fit.rate,
            fit.r_squared
        );
        assert!(fit.r_squared >= 0.99);
    }

    #[test]
    fn contraction_degenerate_for_equal_starts() {
        let hyp = ou();
        let fit =
            contraction_estimate(&[0.5], &[1.0], &[1.0], &hyp, 2.0, 50, SeedSpec::new(31, 1))
                .unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.amplitude, 0.0);
    }

    #[test]
    fn contraction_amplitude_is_quadratic_in_gap() {
        let hyp = ou();
        let a = contraction_estimate(&[0.0], &[1.0], &[0.0], &hyp, 2.5, 400, SeedSpec::new(31, 2))
            .unwrap();
        let b = contraction_estimate(&[0.0], &[2.0], &[0.0], &hyp, 2.5, 400, SeedSpec::new(31, 2))
            .unwrap();
        let ratio = b.amplitude / a.amplitude;
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn x_sensitivity_matches_ou_closed_form() {
        // Synchronous OU coupling with different frozen x: the gap is the
        // deterministic relaxation (1 - e^{-t}) |dx|, squared.
        let hyp = ou();
        let chk = x_sensitivity_estimate(
            &[0.0],
            &[1.0],
            &[0.5],
            &hyp,
            3.0,
            200,
            SeedSpec::new(37, 0),
        )
        .unwrap();
        assert!(chk.holds, "exponent {}", chk.exponent);
        // The coupled gap is deterministic: (1 - e^{-t}) |dx|, so the sup
        // over [0, 3] is (1 - e^{-3})^2.
        let want = (1.0 - (-3.0_f64).exp()).powi(2);
        assert!((chk.sup_mse - want).abs() < 0.02, "sup_mse {}", chk.sup_mse);
        assert!(chk.bound >= chk.sup_mse * 0.8);
    }

    #[test]
    fn x_sensitivity_zero_gap() {
        let hyp = ou();
        let chk = x_sensitivity_estimate(
            &[1.0],
            &[1.0],
            &[0.0],
            &hyp,
            1.0,
            50,
            SeedSpec::new(37, 1),
        )
        .unwrap();
        assert_eq!(chk.sup_mse, 0.0);
        assert!(chk.holds);
    }

    #[test]
    fn ergodic_rate_for_identity_observable() {
        // E[Y_s] relaxes to x at exactly rate 1 for the OU block.
        let hyp = ou();
        let fit = ergodic_convergence_estimate(
            &[0.5],
            &[3.0],
            &hyp,
            &|y: &[f64]| y[0],
            3.0,
            10_000,
            SeedSpec::new(41, 0),
        )
        .unwrap();
        assert!(
            (fit.rate - 1.0).abs() <= 0.1,
            "rate {} (n_points {})",
            fit.rate,
            fit.n_points
        );
    }

    #[test]
    fn ergodic_rate_for_sin_observable() {
        let hyp = ou();
        // From y0 = 2 the mean path stays inside a region where the
        // observable gap decays monotonically, giving a clean log fit.
        let fit = ergodic_convergence_estimate(
            &[0.5],
            &[2.0],
            &hyp,
            &|y: &[f64]| y[0].sin(),
            2.5,
            12_000,
            SeedSpec::new(41, 1),
        )
        .unwrap();
        assert!(fit.rate >= 0.8, "rate {}", fit.rate);
    }

    #[test]
    fn ergodic_constant_observable_is_degenerate() {
        let hyp = ou();
        let fit = ergodic_convergence_estimate(
            &[0.5],
            &[2.0],
            &hyp,
            &|_y: &[f64]| 1.25,
            2.0,
            100,
            SeedSpec::new(41, 2),
        )
        .unwrap();
        assert!(fit.degenerate);
    }

    #[test]
    fn decorrelation_diagonal_and_rate() {
        let hyp = ou();
        let x = [0.5_f64];
        let bbar = [systems::OU_SIN_AVERAGED_COEF * 0.5_f64.sin()];
        let s_grid: Vec<f64> = (0..14).map(|k| 2.0 + 0.25 * k as f64).collect();
        let est = decorrelation_estimate(
            &x,
            &[0.5],
            &hyp,
            &|y: &[f64], out: &mut [f64]| out[0] = y[0].sin(),
            &bbar,
            &s_grid,
            SeedSpec::new(43, 0),
            8_000,
        )
        .unwrap();
        assert!(est.diagonal >= 0.0, "diagonal {}", est.diagonal);
        assert!(
            est.fit.rate >= 0.8,
            "rate {} (r2 {})",
            est.fit.rate,
            est.fit.r_squared
        );
        assert!(est.fit.r_squared >= 0.95, "r2 {}", est.fit.r_squared);
    }

    #[test]
    fn decorrelation_amplitude_growth_in_y_is_subquadratic() {
        // The claim's prefactor is (1 + |x|^2 + |y|^2); the amplitude must
        // not grow faster. The identity observable keeps J positive and
        // exactly exponential (J = e^{-d} [y^2 e^{-2 zeta} + v(zeta)] for
        // the OU block), so the y-dependence of the amplitude is clean.
        let hyp = ou();
        let x = [0.0_f64];
        let bbar = [0.0_f64];
        let s_grid: Vec<f64> = (0..12).map(|k| 0.1 + 0.2 * k as f64).collect();
        let mut logs = Vec::new();
        for (i, &y0) in [0.0_f64, 2.0, 4.0].iter().enumerate() {
            let est = decorrelation_estimate(
                &x,
                &[y0],
                &hyp,
                &|y: &[f64], out: &mut [f64]| out[0] = y[0],
                &bbar,
                &s_grid,
                SeedSpec::new(43, 10 + i as u64),
                4_000,
            )
            .unwrap();
            logs.push(((1.0 + y0 * y0).ln(), est.fit.amplitude.max(1e-12).ln()));
        }
        let xs: Vec<f64> = logs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = logs.iter().map(|p| p.1).collect();
        let fit = stats::linear_fit(&xs, &ys).unwrap();
        assert!(fit.slope <= 2.2, "growth exponent {}", fit.slope);
    }

    #[test]
    fn stationarity_under_time_push() {
        // Pushing the empirical measure through one extra unit of frozen
        // time leaves the first two moments unchanged within 3 se.
        let hyp = ou();
        let m = measure_at(1.0, 2_000, 900);
        let dt = 0.0025;
        let n_steps = (1.0 / dt) as usize;
        let mut pushed = Vec::with_capacity(m.len());
        let mut drift = [0.0];
        let mut sigma = [0.0];
        for i in 0..m.len() {
            let mut stream = GaussianStream::new(SeedSpec::new(901, i as u64));
            let mut y = m.sample(i)[0];
            for _ in 0..n_steps {
                hyp.eval_b2(&[1.0], &[y], &mut drift);
                hyp.eval_sigma2(&[1.0], &[y], &mut sigma);
                y += dt * drift[0] + sigma[0] * dt.sqrt() * stream.next_gaussian();
            }
            pushed.push(y);
        }
        let before: Vec<f64> = (0..m.len()).map(|i| m.sample(i)[0]).collect();
        let gap_mean = (stats::mean(&pushed) - stats::mean(&before)).abs();
        let se_mean = (stats::std_error(&pushed).powi(2) + stats::batch_std_error(&before, 20).powi(2))
            .sqrt();
        assert!(gap_mean < 3.0 * se_mean, "mean gap {gap_mean}, se {se_mean}");
        let sq_pushed: Vec<f64> = pushed.iter().map(|v| v * v).collect();
        let sq_before: Vec<f64> = before.iter().map(|v| v * v).collect();
        let gap_m2 = (stats::mean(&sq_pushed) - stats::mean(&sq_before)).abs();
        let se_m2 = (stats::std_error(&sq_pushed).powi(2)
            + stats::batch_std_error(&sq_before, 20).powi(2))
        .sqrt();
        assert!(gap_m2 < 3.0 * se_m2, "second-moment gap {gap_m2}, se {se_m2}");
    }

    #[test]
    fn averaged_drift_lipschitz_in_x_stable_under_refinement() {
        // Finite-difference slopes of bbar1 across the tabulation grid are
        // bounded and agree between a coarse and a refined grid.
        let coef = systems::OU_SIN_AVERAGED_COEF;
        let f = move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = coef * x[0].sin();
        let coarse: Vec<f64> = (0..17).map(|i| -2.0 + 0.25 * i as f64).collect();
        let fine: Vec<f64> = (0..33).map(|i| -2.0 + 0.125 * i as f64).collect();
        let slope_of = |grid: &[f64]| -> f64 {
            let table = DriftTable::tabulate(&f, &[0.0], grid).unwrap();
            let mut out = [0.0];
            let mut prev = {
                table.eval_clamped(0.0, &[grid[0]], &mut out);
                out[0]
            };
            let mut worst = 0.0_f64;
            for &x in &grid[1..] {
                table.eval_clamped(0.0, &[x], &mut out);
                worst = worst.max((out[0] - prev).abs() / (grid[1] - grid[0]));
                prev = out[0];
            }
            worst
        };
        let a = slope_of(&coarse);
        let b = slope_of(&fine);
        assert!(a <= coef * 1.05 && b <= coef * 1.05, "slopes {a}, {b}");
        assert!((a - b).abs() < 0.05);
    }

    #[test]
    fn invariant_measure_multidimensional() {
        // Two decoupled OU coordinates: mu^x = N(x1, 1) x N(x2, 1).
        let hyp = HypothesisSet::new(
            crate::sde::SystemDims {
                d1: 2,
                d2: 2,
                m: 1,
                r: 2,
            },
            |_t, _x, y, out| {
                out[0] = y[0].sin();
                out[1] = y[1].cos() * 0.5;
            },
            |_t, _x, _y, out| out[0] = 0.5,
            |x, y, out| {
                out[0] = x[0] - y[0];
                out[1] = x[1] - y[1];
            },
            |_x, _y, out| {
                out.fill(0.0);
                out[0] = std::f64::consts::SQRT_2;
                out[3] = std::f64::consts::SQRT_2;
            },
            1.0,
            1.0,
            2.0,
            2.0,
            2.0,
            None,
        )
        .unwrap();
        let opts = MeasureOptions::defaults(&hyp, 6_000, SeedSpec::new(960, 0));
        let m = sample_invariant_measure(&[1.0, -2.0], &hyp, &opts).unwrap();
        assert_eq!(m.dim(), 2);
        assert!((m.component_mean(0) - 1.0).abs() < 0.06, "{}", m.component_mean(0));
        assert!((m.component_mean(1) + 2.0).abs() < 0.06, "{}", m.component_mean(1));
        assert!((m.component_variance(0) - 1.0).abs() < 0.08);
        assert!((m.component_variance(1) - 1.0).abs() < 0.08);
        let est = averaged_drift(&hyp, &m, 0.0, &[1.0, -2.0], false).unwrap();
        // E sin(N(1,1)) = e^{-1/2} sin(1); E cos(N(-2,1))/2 = e^{-1/2} cos(2)/2.
        let w0 = (-0.5_f64).exp() * 1.0_f64.sin();
        let w1 = 0.5 * (-0.5_f64).exp() * 2.0_f64.cos();
        assert!((est.value[0] - w0).abs() < 3.0 * est.std_error[0] + 3e-3);
        assert!((est.value[1] - w1).abs() < 3.0 * est.std_error[1] + 3e-3);
    }

    #[test]
    fn measure_csv_round_trip() {
        let m = measure_at(0.3, 1_200, 950);
        let dir = std::env::temp_dir().join("fastslow_measure_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("measure.csv");
        m.write_csv(&path).unwrap();
        let back = EmpiricalMeasure::read_csv(&path).unwrap();
        assert_eq!(back.len(), m.len());
        assert_eq!(back.provenance, m.provenance);
        assert_eq!(back.sample(5), m.sample(5));
    }
}
