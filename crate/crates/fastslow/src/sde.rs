//! Discretized solvers for the mixed fast-slow system
//!
//! ```text
//! dX = b1(t, X, Y) dt + sigma1(t, X) dB^H,           X_0 = x0,
//! dY = b2(X, Y)/eps dt + sigma2(X, Y)/sqrt(eps) dW,  Y_0 = y0,
//! ```
//!
//! together with the frozen equation `dY^x = b2(x,Y^x) dt + sigma2(x,Y^x) dW`,
//! the averaged equation `dXbar = bbar1(t,Xbar) dt + sigma1(t,Xbar) dB^H`,
//! and the Khasminskii auxiliary pair `(Xhat, Yhat)` built on time blocks
//! of length `delta` with the slow argument frozen per block.
//!
//! Scheme: explicit hybrid Euler. The slow component uses left-point Young
//! increments against `B^H` (valid for `H > 1/2`); the fast component is
//! advanced by Euler-Maruyama on a refined grid with the slow state frozen
//! across each slow step. `B^H` and `W` are supplied at fast resolution;
//! the slow recursion consumes block sums of the fBm increments, so every
//! solver sees identical noise.

use crate::error::{Error, Result};
use crate::fraccalc::AlphaParam;
use crate::grid::GridPath;
use crate::noise::HurstParam;
use crate::rng::{GaussianStream, SeedSpec};
use crate::stats;
use std::sync::Arc;

/// State-space dimensions: slow `d1`, fast `d2`, fBm channels `m`, Wiener
/// channels `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemDims {
    pub d1: usize,
    pub d2: usize,
    pub m: usize,
    pub r: usize,
}

/// Declared regularity and dissipativity constants of a coefficient set.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzConstants {
    /// Bound on the x-gradient of `sigma1`.
    pub grad_sigma1: f64,
    /// Hoelder constant of the x-gradient of `sigma1`.
    pub grad_sigma1_holder: f64,
    /// Time-Hoelder constant of `sigma1`.
    pub sigma1_time: f64,
    /// Linear-growth constant of `sigma1`.
    pub sigma1_growth: f64,
    /// Lipschitz constant of `b1` in `(t, x, y)`.
    pub b1: f64,
    /// Joint Lipschitz constant of `b2` and `sigma2` in `(x, y)`.
    pub fast: f64,
    /// Joint linear-growth constant of `b1`, `b2`, `sigma2`.
    pub growth: f64,
}

type SlowDriftFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
type SlowDiffusionFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
type FastFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Coefficient functions `(b1, sigma1, b2, sigma2)` plus the constants
/// they declare: the Hoelder exponents `beta`, `gamma` of `sigma1`, the
/// dissipativity rates `beta1`, `beta2` of the fast dynamics, the uniform
/// bound on `b1`, and optional Lipschitz constants for spot checking.
///
/// `sigma1` receives the fast state as an extra argument so that a
/// deliberately non-conforming diffusion (the negative control for the
/// averaging principle) can be expressed; conforming systems must ignore
/// it, and the averaged solver passes an empty slice there.
#[derive(Clone)]
pub struct HypothesisSet {
    pub dims: SystemDims,
    b1: SlowDriftFn,
    sigma1: SlowDiffusionFn,
    b2: FastFn,
    sigma2: FastFn,
    pub beta_holder: f64,
    pub gamma_holder: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub b1_sup_bound: f64,
    pub lipschitz: Option<LipschitzConstants>,
}

impl HypothesisSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dims: SystemDims,
        b1: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        sigma1: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        b2: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        sigma2: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        beta_holder: f64,
        gamma_holder: f64,
        beta1: f64,
        beta2: f64,
        b1_sup_bound: f64,
        lipschitz: Option<LipschitzConstants>,
    ) -> Result<Self> {
        for (name, v) in [
            ("beta", beta_holder),
            ("gamma", gamma_holder),
            ("beta1", beta1),
            ("beta2", beta2),
            ("b1_sup_bound", b1_sup_bound),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if beta_holder > 1.0 || gamma_holder > 1.0 {
            return Err(Error::invalid("Hoelder exponents must lie in (0, 1]"));
        }
        Ok(Self {
            dims,
            b1: Arc::new(b1),
            sigma1: Arc::new(sigma1),
            b2: Arc::new(b2),
            sigma2: Arc::new(sigma2),
            beta_holder,
            gamma_holder,
            beta1,
            beta2,
            b1_sup_bound,
            lipschitz,
        })
    }

    /// Evaluates `b1` and enforces the declared uniform bound.
    #[inline]
    pub fn eval_b1(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        (self.b1)(t, x, y, out);
        let norm_sq: f64 = out.iter().map(|v| v * v).sum();
        let cap = self.b1_sup_bound * (1.0 + 1e-9);
        if !(norm_sq.sqrt() <= cap) {
            return Err(Error::HypothesisViolation(format!(
                "|b1(t={t}, ...)| = {} exceeds the declared bound {}",
                norm_sq.sqrt(),
                self.b1_sup_bound
            )));
        }
        Ok(())
    }

    /// `sigma1` as a `d1 x m` row-major matrix; `y` may be empty for
    /// conforming systems.
    #[inline]
    pub fn eval_sigma1(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.sigma1)(t, x, y, out);
    }

    #[inline]
    pub fn eval_b2(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.b2)(x, y, out);
    }

    /// `sigma2` as a `d2 x r` row-major matrix.
    #[inline]
    pub fn eval_sigma2(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.sigma2)(x, y, out);
    }

    /// Lipschitz constant of the fast drift used by the step-size rule;
    /// defaults to 1 when no constants were declared.
    pub fn fast_lipschitz(&self) -> f64 {
        self.lipschitz.map(|l| l.fast).unwrap_or(1.0).max(1.0)
    }

    /// Statistical spot check of the declared constants: random
    /// finite-difference probes of the `sigma1` gradient bound and random
    /// Lipschitz quotients of `b1`, `b2`, `sigma2`. A sanity check, not a
    /// proof.
    pub fn spot_check(
        &self,
        x_scale: f64,
        y_scale: f64,
        t_end: f64,
        n_probes: usize,
        seed: SeedSpec,
    ) -> Result<SpotCheckReport> {
        let lip = self
            .lipschitz
            .ok_or_else(|| Error::invalid("spot check needs declared Lipschitz constants"))?;
        let d = self.dims;
        let mut stream = GaussianStream::new(seed);
        let mut max_grad = 0.0_f64;
        let mut max_b1_quot = 0.0_f64;
        let mut max_fast_quot = 0.0_f64;
        let mut sig = vec![0.0; d.d1 * d.m];
        let mut sig2 = vec![0.0; d.d1 * d.m];
        let len = (d.d1.max(d.d2)) * d.m.max(d.r).max(1);
        let mut va = vec![0.0; len];
        let mut vb = vec![0.0; len];
        let fd = 1e-5 * x_scale.max(1.0);
        for _ in 0..n_probes {
            let t = t_end * stream.next_uniform();
            let mut x: Vec<f64> = (0..d.d1)
                .map(|_| x_scale * (2.0 * stream.next_uniform() - 1.0))
                .collect();
            let y: Vec<f64> = (0..d.d2)
                .map(|_| y_scale * (2.0 * stream.next_uniform() - 1.0))
                .collect();
            // Gradient of sigma1 by central differences, one coordinate at
            // a time.
            for c in 0..d.d1 {
                let keep = x[c];
                x[c] = keep + fd;
                self.eval_sigma1(t, &x, &y, &mut sig);
                x[c] = keep - fd;
                self.eval_sigma1(t, &x, &y, &mut sig2);
                x[c] = keep;
                let g: f64 = sig
                    .iter()
                    .zip(sig2.iter())
                    .map(|(a, b)| ((a - b) / (2.0 * fd)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                max_grad = max_grad.max(g);
            }
            // Lipschitz quotients between two random points.
            let t2 = t_end * stream.next_uniform();
            let x2: Vec<f64> = (0..d.d1)
                .map(|_| x_scale * (2.0 * stream.next_uniform() - 1.0))
                .collect();
            let y2: Vec<f64> = (0..d.d2)
                .map(|_| y_scale * (2.0 * stream.next_uniform() - 1.0))
                .collect();
            let dist = (t - t2).abs() + norm_gap(&x, &x2) + norm_gap(&y, &y2);
            if dist > 1e-12 {
                (self.b1)(t, &x, &y, &mut va[..d.d1]);
                (self.b1)(t2, &x2, &y2, &mut vb[..d.d1]);
                max_b1_quot = max_b1_quot.max(norm_gap(&va[..d.d1], &vb[..d.d1]) / dist);
            }
            let dist_xy = norm_gap(&x, &x2) + norm_gap(&y, &y2);
            if dist_xy > 1e-12 {
                self.eval_b2(&x, &y, &mut va[..d.d2]);
                self.eval_b2(&x2, &y2, &mut vb[..d.d2]);
                let qb = norm_gap(&va[..d.d2], &vb[..d.d2]) / dist_xy;
                self.eval_sigma2(&x, &y, &mut va[..d.d2 * d.r]);
                self.eval_sigma2(&x2, &y2, &mut vb[..d.d2 * d.r]);
                let qs = norm_gap(&va[..d.d2 * d.r], &vb[..d.d2 * d.r]) / dist_xy;
                max_fast_quot = max_fast_quot.max(qb + qs);
            }
        }
        let slack = 1.0 + 1e-3;
        let mut violations = Vec::new();
        if max_grad > lip.grad_sigma1 * slack {
            violations.push(format!(
                "grad sigma1 estimate {max_grad} exceeds declared {}",
                lip.grad_sigma1
            ));
        }
        if max_b1_quot > lip.b1 * slack {
            violations.push(format!(
                "b1 Lipschitz estimate {max_b1_quot} exceeds declared {}",
                lip.b1
            ));
        }
        if max_fast_quot > lip.fast * slack {
            violations.push(format!(
                "fast Lipschitz estimate {max_fast_quot} exceeds declared {}",
                lip.fast
            ));
        }
        Ok(SpotCheckReport {
            max_grad_sigma1: max_grad,
            max_b1_quotient: max_b1_quot,
            max_fast_quotient: max_fast_quot,
            pass: violations.is_empty(),
            violations,
        })
    }
}

fn norm_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct SpotCheckReport {
    pub max_grad_sigma1: f64,
    pub max_b1_quotient: f64,
    pub max_fast_quotient: f64,
    pub pass: bool,
    pub violations: Vec<String>,
}

/// All numeric knobs of one fast-slow run.
#[derive(Debug, Clone)]
pub struct FastSlowConfig {
    /// Time-scale ratio, `0 < eps << 1`.
    pub epsilon: f64,
    /// Khasminskii block length; snapped to the slow grid when used.
    pub delta: f64,
    pub t_end: f64,
    /// Slow grid steps.
    pub n_steps: usize,
    /// Fast Euler substeps per slow step.
    pub fast_substeps: usize,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub hurst: HurstParam,
    pub alpha: AlphaParam,
    pub seed: SeedSpec,
}

impl FastSlowConfig {
    #[inline]
    pub fn h_slow(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    #[inline]
    pub fn h_fast(&self) -> f64 {
        self.h_slow() / self.fast_substeps as f64
    }

    #[inline]
    pub fn n_fast(&self) -> usize {
        self.n_steps * self.fast_substeps
    }

    /// Block length in slow steps, snapped to the nearest multiple (at
    /// least one step).
    pub fn delta_steps(&self) -> usize {
        ((self.delta / self.h_slow()).round() as usize).max(1)
    }

    /// The block length actually used after snapping.
    pub fn delta_snapped(&self) -> f64 {
        self.delta_steps() as f64 * self.h_slow()
    }

    /// Smallest substep count satisfying the fast stability rule
    /// `h_fast <= 0.1 eps / max(1, Lip(b2))`.
    pub fn required_fast_substeps(
        t_end: f64,
        n_steps: usize,
        epsilon: f64,
        fast_lipschitz: f64,
    ) -> usize {
        let h_slow = t_end / n_steps as f64;
        (h_slow * fast_lipschitz.max(1.0) / (0.1 * epsilon)).ceil() as usize
    }

    /// Validates scale separation, block length, stability of the fast
    /// Euler step, the Hurst/alpha window, and dimensional consistency.
    pub fn validate(&self, hyp: &HypothesisSet) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0,1), got {}",
                self.epsilon
            )));
        }
        if !(self.delta > self.epsilon && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta must lie in (epsilon, 1), got delta = {}, epsilon = {}",
                self.delta, self.epsilon
            )));
        }
        if !(self.t_end > 0.0) || self.n_steps == 0 || self.fast_substeps == 0 {
            return Err(Error::invalid(
                "need positive horizon, slow steps and substeps",
            ));
        }
        if !self.hurst.is_long_memory() {
            return Err(Error::invalid(format!(
                "solvers require H > 1/2, got {}",
                self.hurst.value()
            )));
        }
        self.alpha
            .validate_context(self.hurst, hyp.beta_holder, hyp.gamma_holder)?;
        if self.x0.len() != hyp.dims.d1 || self.y0.len() != hyp.dims.d2 {
            return Err(Error::invalid(format!(
                "initial conditions have dims ({}, {}), system expects ({}, {})",
                self.x0.len(),
                self.y0.len(),
                hyp.dims.d1,
                hyp.dims.d2
            )));
        }
        let cap = 0.1 * self.epsilon / hyp.fast_lipschitz();
        if self.h_fast() > cap * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "fast step {} violates the stability rule h_fast <= {cap} (= 0.1 eps / Lip); raise fast_substeps to {}",
                self.h_fast(),
                Self::required_fast_substeps(
                    self.t_end,
                    self.n_steps,
                    self.epsilon,
                    hyp.fast_lipschitz()
                )
            )));
        }
        Ok(())
    }
}

fn check_noise_grid(cfg: &FastSlowConfig, path: &GridPath, dim: usize, what: &str) -> Result<()> {
    if path.n_steps() != cfg.n_fast()
        || (path.t_end() - cfg.t_end).abs() > 1e-12 * cfg.t_end
        || path.dim() != dim
    {
        return Err(Error::invalid(format!(
            "{what} must be sampled on the fast grid ({} steps, T = {}, dim {dim}); got ({} steps, T = {}, dim {})",
            cfg.n_fast(),
            cfg.t_end,
            path.n_steps(),
            path.t_end(),
            path.dim()
        )));
    }
    Ok(())
}

#[inline]
fn fold_checksum(acc: u64, v: f64) -> u64 {
    (acc ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
}

#[inline]
fn ensure_finite(state: &[f64], step: usize, time: f64, what: &str) -> Result<()> {
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp {
            step,
            time,
            what: what.to_string(),
        });
    }
    Ok(())
}

/// One left-point slow Euler step `x_next = x + h b1 + sigma1 dB`. Shared
/// by the coupled and averaged solvers so that systems with identical
/// drifts produce bit-identical trajectories.
#[inline]
fn slow_step(
    x: &[f64],
    drift: &[f64],
    sigma: &[f64],
    db: &[f64],
    h: f64,
    m: usize,
    out: &mut [f64],
) {
    for c in 0..x.len() {
        let mut v = x[c] + h * drift[c];
        let row = &sigma[c * m..(c + 1) * m];
        for (j, s) in row.iter().enumerate() {
            v += s * db[j];
        }
        out[c] = v;
    }
}

/// Coupled slow/fast trajectories on the slow grid plus a checksum of the
/// fBm increments the slow recursion consumed.
#[derive(Debug)]
pub struct FastSlowSolution {
    pub x: GridPath,
    pub y: GridPath,
    pub increment_checksum: u64,
}

/// Hybrid Euler for the coupled system. `bh` (dim `m`) and `w` (dim `r`)
/// must be sampled at fast resolution with independent streams; the slow
/// recursion consumes block sums of the fBm increments.
pub fn solve_fast_slow(
    cfg: &FastSlowConfig,
    hyp: &HypothesisSet,
    bh: &GridPath,
    w: &GridPath,
) -> Result<FastSlowSolution> {
    cfg.validate(hyp)?;
    check_noise_grid(cfg, bh, hyp.dims.m, "fBm path")?;
    check_noise_grid(cfg, w, hyp.dims.r, "Wiener path")?;
    let d = hyp.dims;
    let (n, sub) = (cfg.n_steps, cfg.fast_substeps);
    let (h, hf) = (cfg.h_slow(), cfg.h_fast());
    let inv_eps = 1.0 / cfg.epsilon;
    let inv_sqrt_eps = inv_eps.sqrt();

    let mut x = cfg.x0.clone();
    let mut y = cfg.y0.clone();
    let mut x_out = vec![0.0; (n + 1) * d.d1];
    let mut y_out = vec![0.0; (n + 1) * d.d2];
    x_out[..d.d1].copy_from_slice(&x);
    y_out[..d.d2].copy_from_slice(&y);

    let mut drift = vec![0.0; d.d1];
    let mut sigma = vec![0.0; d.d1 * d.m];
    let mut db = vec![0.0; d.m];
    let mut fast_drift = vec![0.0; d.d2];
    let mut fast_sigma = vec![0.0; d.d2 * d.r];
    let mut x_next = vec![0.0; d.d1];
    let mut checksum = 0xcbf2_9ce4_8422_2325_u64;

    for k in 0..n {
        let t_k = k as f64 * h;
        hyp.eval_b1(t_k, &x, &y, &mut drift)?;
        hyp.eval_sigma1(t_k, &x, &y, &mut sigma);
        let lo = bh.node(k * sub);
        let hi = bh.node((k + 1) * sub);
        for j in 0..d.m {
            db[j] = hi[j] - lo[j];
            checksum = fold_checksum(checksum, db[j]);
        }
        slow_step(&x, &drift, &sigma, &db, h, d.m, &mut x_next);

        // Fast block with the slow state frozen at X_k.
        for jf in 0..sub {
            let idx = k * sub + jf;
            hyp.eval_b2(&x, &y, &mut fast_drift);
            hyp.eval_sigma2(&x, &y, &mut fast_sigma);
            let wl = w.node(idx);
            let wh = w.node(idx + 1);
            for c in 0..d.d2 {
                let mut v = y[c] + hf * inv_eps * fast_drift[c];
                let row = &fast_sigma[c * d.r..(c + 1) * d.r];
                for (j, s) in row.iter().enumerate() {
                    v += inv_sqrt_eps * s * (wh[j] - wl[j]);
                }
                y[c] = v;
            }
        }

        x.copy_from_slice(&x_next);
        ensure_finite(&x, k + 1, (k + 1) as f64 * h, "slow state")?;
        ensure_finite(&y, k + 1, (k + 1) as f64 * h, "fast state")?;
        x_out[(k + 1) * d.d1..(k + 2) * d.d1].copy_from_slice(&x);
        y_out[(k + 1) * d.d2..(k + 2) * d.d2].copy_from_slice(&y);
    }
    Ok(FastSlowSolution {
        x: GridPath::new(cfg.t_end, n, d.d1, x_out)?,
        y: GridPath::new(cfg.t_end, n, d.d2, y_out)?,
        increment_checksum: checksum,
    })
}

/// Euler-Maruyama path of the unit-speed frozen equation
/// `dY = b2(x, Y) dt + sigma2(x, Y) dW` started at `y`.
pub fn solve_frozen(
    x: &[f64],
    y: &[f64],
    horizon: f64,
    n_steps: usize,
    hyp: &HypothesisSet,
    seed: SeedSpec,
) -> Result<GridPath> {
    if !(horizon > 0.0) || n_steps == 0 {
        return Err(Error::invalid("horizon and n_steps must be positive"));
    }
    let d = hyp.dims;
    if x.len() != d.d1 || y.len() != d.d2 {
        return Err(Error::invalid(
            "frozen equation: state dims do not match the system",
        ));
    }
    let h = horizon / n_steps as f64;
    let root_h = h.sqrt();
    let mut stream = GaussianStream::new(seed);
    let mut state = y.to_vec();
    let mut out = vec![0.0; (n_steps + 1) * d.d2];
    out[..d.d2].copy_from_slice(&state);
    let mut drift = vec![0.0; d.d2];
    let mut sigma = vec![0.0; d.d2 * d.r];
    let mut dw = vec![0.0; d.r];
    for k in 0..n_steps {
        hyp.eval_b2(x, &state, &mut drift);
        hyp.eval_sigma2(x, &state, &mut sigma);
        for v in dw.iter_mut() {
            *v = root_h * stream.next_gaussian();
        }
        for c in 0..d.d2 {
            let mut v = state[c] + h * drift[c];
            let row = &sigma[c * d.r..(c + 1) * d.r];
            for (j, s) in row.iter().enumerate() {
                v += s * dw[j];
            }
            state[c] = v;
        }
        ensure_finite(&state, k + 1, (k + 1) as f64 * h, "frozen state")?;
        out[(k + 1) * d.d2..(k + 2) * d.d2].copy_from_slice(&state);
    }
    GridPath::new(horizon, n_steps, d.d2, out)
}

/// Averaged drift `bbar1(t, x)`, either closed-form or backed by an
/// invariant-measure tabulation.
pub trait AveragedDrift: Send + Sync {
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]);
}

impl<F> AveragedDrift for F
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self(t, x, out)
    }
}

#[derive(Debug)]
pub struct AveragedSolution {
    pub x: GridPath,
    pub increment_checksum: u64,
}

/// Euler path of the averaged equation driven by the same fBm realization
/// as the coupled system (pass the identical `bh`).
pub fn solve_averaged(
    cfg: &FastSlowConfig,
    hyp: &HypothesisSet,
    bbar1: &dyn AveragedDrift,
    bh: &GridPath,
) -> Result<AveragedSolution> {
    cfg.validate(hyp)?;
    check_noise_grid(cfg, bh, hyp.dims.m, "fBm path")?;
    let d = hyp.dims;
    let (n, sub) = (cfg.n_steps, cfg.fast_substeps);
    let h = cfg.h_slow();
    let mut x = cfg.x0.clone();
    let mut out = vec![0.0; (n + 1) * d.d1];
    out[..d.d1].copy_from_slice(&x);
    let mut drift = vec![0.0; d.d1];
    let mut sigma = vec![0.0; d.d1 * d.m];
    let mut db = vec![0.0; d.m];
    let mut x_next = vec![0.0; d.d1];
    let mut checksum = 0xcbf2_9ce4_8422_2325_u64;
    let empty: [f64; 0] = [];
    for k in 0..n {
        let t_k = k as f64 * h;
        bbar1.eval(t_k, &x, &mut drift);
        hyp.eval_sigma1(t_k, &x, &empty, &mut sigma);
        let lo = bh.node(k * sub);
        let hi = bh.node((k + 1) * sub);
        for j in 0..d.m {
            db[j] = hi[j] - lo[j];
            checksum = fold_checksum(checksum, db[j]);
        }
        slow_step(&x, &drift, &sigma, &db, h, d.m, &mut x_next);
        x.copy_from_slice(&x_next);
        ensure_finite(&x, k + 1, (k + 1) as f64 * h, "averaged state")?;
        out[(k + 1) * d.d1..(k + 2) * d.d1].copy_from_slice(&x);
    }
    Ok(AveragedSolution {
        x: GridPath::new(cfg.t_end, n, d.d1, out)?,
        increment_checksum: checksum,
    })
}

/// Khasminskii auxiliary pair on the slow grid. `delta` is snapped to the
/// nearest multiple of the slow step and the value actually used is
/// reported.
#[derive(Debug)]
pub struct KhasminskiiSolution {
    pub x_hat: GridPath,
    pub y_hat: GridPath,
    pub delta_used: f64,
    pub delta_steps: usize,
}

/// Builds `(Xhat, Yhat)` from the coupled solution `x` and the same noise
/// realizations: `Yhat` restarts the fast recursion with the slow argument
/// frozen at block left ends `X_{s(delta)}`, and `Xhat` integrates
/// `b1(s(delta), X_{s(delta)}, Yhat_s)` in time while consuming the exact
/// same `sigma1(s, X_s) dB^H` increments as the coupled slow recursion.
///
/// The time integral uses the same left-point slow-step rule as the
/// coupled solver, so `Xhat - X` isolates the block-freezing effect: for
/// `delta` equal to one slow step the two recursions coincide bit for
/// bit.
pub fn khasminskii_auxiliary(
    cfg: &FastSlowConfig,
    hyp: &HypothesisSet,
    x_path: &GridPath,
    bh: &GridPath,
    w: &GridPath,
) -> Result<KhasminskiiSolution> {
    cfg.validate(hyp)?;
    check_noise_grid(cfg, bh, hyp.dims.m, "fBm path")?;
    check_noise_grid(cfg, w, hyp.dims.r, "Wiener path")?;
    if x_path.n_steps() != cfg.n_steps || x_path.dim() != hyp.dims.d1 {
        return Err(Error::invalid(
            "x must be the coupled slow solution on the slow grid",
        ));
    }
    let d = hyp.dims;
    let (n, sub) = (cfg.n_steps, cfg.fast_substeps);
    let (h, hf) = (cfg.h_slow(), cfg.h_fast());
    let inv_eps = 1.0 / cfg.epsilon;
    let inv_sqrt_eps = inv_eps.sqrt();
    let delta_steps = cfg.delta_steps();
    let delta_used = cfg.delta_snapped();

    let mut xh = cfg.x0.clone();
    let mut yh = cfg.y0.clone();
    let mut x_out = vec![0.0; (n + 1) * d.d1];
    let mut y_out = vec![0.0; (n + 1) * d.d2];
    x_out[..d.d1].copy_from_slice(&xh);
    y_out[..d.d2].copy_from_slice(&yh);

    let mut drift = vec![0.0; d.d1];
    let mut sigma = vec![0.0; d.d1 * d.m];
    let mut db = vec![0.0; d.m];
    let mut fast_drift = vec![0.0; d.d2];
    let mut fast_sigma = vec![0.0; d.d2 * d.r];
    let mut xh_next = vec![0.0; d.d1];
    let empty: [f64; 0] = [];

    for k in 0..n {
        let t_k = k as f64 * h;
        let k_frozen = (k / delta_steps) * delta_steps;
        let t_frozen = k_frozen as f64 * h;
        let x_frozen = x_path.node(k_frozen);

        // Drift at the block-frozen slow argument and the left-point
        // Yhat; diffusion shared with the coupled path against the same
        // block increment.
        hyp.eval_b1(t_frozen, x_frozen, &yh, &mut drift)?;
        hyp.eval_sigma1(t_k, x_path.node(k), &empty, &mut sigma);
        let lo = bh.node(k * sub);
        let hi = bh.node((k + 1) * sub);
        for j in 0..d.m {
            db[j] = hi[j] - lo[j];
        }
        slow_step(&xh, &drift, &sigma, &db, h, d.m, &mut xh_next);

        // Fast block with the slow argument frozen at X_{s(delta)}.
        for jf in 0..sub {
            let idx = k * sub + jf;
            hyp.eval_b2(x_frozen, &yh, &mut fast_drift);
            hyp.eval_sigma2(x_frozen, &yh, &mut fast_sigma);
            let wl = w.node(idx);
            let wh = w.node(idx + 1);
            for c in 0..d.d2 {
                let mut v = yh[c] + hf * inv_eps * fast_drift[c];
                let row = &fast_sigma[c * d.r..(c + 1) * d.r];
                for (j, s) in row.iter().enumerate() {
                    v += inv_sqrt_eps * s * (wh[j] - wl[j]);
                }
                yh[c] = v;
            }
        }
        xh.copy_from_slice(&xh_next);
        ensure_finite(&xh, k + 1, (k + 1) as f64 * h, "auxiliary slow state")?;
        ensure_finite(&yh, k + 1, (k + 1) as f64 * h, "auxiliary fast state")?;
        x_out[(k + 1) * d.d1..(k + 2) * d.d1].copy_from_slice(&xh);
        y_out[(k + 1) * d.d2..(k + 2) * d.d2].copy_from_slice(&yh);
    }
    Ok(KhasminskiiSolution {
        x_hat: GridPath::new(cfg.t_end, n, d.d1, x_out)?,
        y_hat: GridPath::new(cfg.t_end, n, d.d2, y_out)?,
        delta_used,
        delta_steps,
    })
}

/// Result of the time-shift law check: the block process restarted at
/// `k delta` agrees in distribution with the unit-speed frozen process run
/// for the rescaled time.
#[derive(Debug, Clone)]
pub struct TimeShiftCheck {
    pub ks_statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Two-sample KS comparison of the marginal at `s = delta/2`:
/// construction A runs the block recursion past `k delta`; construction B
/// stops it at `k delta` and continues with the unit-speed frozen equation
/// for time `(delta/2)/eps` under fresh noise. The slow argument is frozen
/// at `cfg.x0`, which makes the conditioning trivial.
pub fn time_shift_scaling_check(
    cfg: &FastSlowConfig,
    hyp: &HypothesisSet,
    k: usize,
    n_paths: usize,
) -> Result<TimeShiftCheck> {
    time_shift_scaling_check_with_ratio(cfg, hyp, k, n_paths, 1.0)
}

/// Same as [`time_shift_scaling_check`] with the frozen-side clock scaled
/// by `eps_ratio`; values other than 1 are designed-to-fail controls.
pub fn time_shift_scaling_check_with_ratio(
    cfg: &FastSlowConfig,
    hyp: &HypothesisSet,
    k: usize,
    n_paths: usize,
    eps_ratio: f64,
) -> Result<TimeShiftCheck> {
    cfg.validate(hyp)?;
    if n_paths < 10 {
        return Err(Error::invalid("need at least 10 paths"));
    }
    let d = hyp.dims;
    let hf = cfg.h_fast();
    let x_star = cfg.x0.clone();
    let delta = cfg.delta_snapped();
    let steps_block = (delta / hf).round() as usize;
    let steps_half = (steps_block / 2).max(1);
    let steps_a = k * steps_block + steps_half;

    // Fast block recursion with frozen slow argument; one stream per path.
    let run_block = |steps: usize, seed: SeedSpec| -> Result<Vec<f64>> {
        let mut stream = GaussianStream::new(seed);
        let mut y = cfg.y0.clone();
        let mut drift = vec![0.0; d.d2];
        let mut sigma = vec![0.0; d.d2 * d.r];
        let mut dw = vec![0.0; d.r];
        let root = hf.sqrt();
        let inv_eps = 1.0 / cfg.epsilon;
        let inv_sqrt_eps = inv_eps.sqrt();
        for s in 0..steps {
            hyp.eval_b2(&x_star, &y, &mut drift);
            hyp.eval_sigma2(&x_star, &y, &mut sigma);
            for v in dw.iter_mut() {
                *v = root * stream.next_gaussian();
            }
            for c in 0..d.d2 {
                let mut v = y[c] + hf * inv_eps * drift[c];
                let row = &sigma[c * d.r..(c + 1) * d.r];
                for (j, s2) in row.iter().enumerate() {
                    v += inv_sqrt_eps * s2 * dw[j];
                }
                y[c] = v;
            }
            ensure_finite(&y, s + 1, (s + 1) as f64 * hf, "block state")?;
        }
        Ok(y)
    };

    let mut marginal_a = Vec::with_capacity(n_paths);
    let mut marginal_b = Vec::with_capacity(n_paths);
    for p in 0..n_paths as u64 {
        let ya = run_block(steps_a, cfg.seed.offset(3 * p))?;
        marginal_a.push(ya[0]);

        let yb = run_block(k * steps_block, cfg.seed.offset(3 * p + 1))?;
        // Unit-speed frozen continuation for time (delta/2)/(eps*ratio),
        // discretized with the matching step h_fast/eps.
        let horizon = 0.5 * delta / (cfg.epsilon * eps_ratio);
        let n_frozen = ((horizon * cfg.epsilon / hf).round() as usize).max(1);
        let path = solve_frozen(
            &x_star,
            &yb,
            horizon,
            n_frozen,
            hyp,
            cfg.seed.offset(3 * p + 2),
        )?;
        marginal_b.push(path.coord(path.n_steps(), 0));
    }
    let spread = stats::sample_variance(&marginal_a) + stats::sample_variance(&marginal_b);
    if spread == 0.0 {
        // Degenerate diffusion: both marginals are deterministic; compare
        // them directly.
        let gap = (stats::mean(&marginal_a) - stats::mean(&marginal_b)).abs();
        let pass = gap <= 1e-9 * (1.0 + stats::mean(&marginal_a).abs());
        return Ok(TimeShiftCheck {
            ks_statistic: if pass { 0.0 } else { 1.0 },
            p_value: if pass { 1.0 } else { 0.0 },
            pass,
        });
    }
    let (ks, p_value) = stats::ks_test_two_sample(&marginal_a, &marginal_b);
    Ok(TimeShiftCheck {
        ks_statistic: ks,
        p_value,
        pass: p_value >= 0.01,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_bm, sample_fbm, HurstParam};

    fn dims1() -> SystemDims {
        SystemDims {
            d1: 1,
            d2: 1,
            m: 1,
            r: 1,
        }
    }

    /// Coupled OU test system: b1 = sin(y) (or 0), constant sigma1, OU
    /// fast block with additive sqrt(2) noise.
    fn ou_system(sigma1_const: f64, b1_zero: bool) -> HypothesisSet {
        HypothesisSet::new(
            dims1(),
            move |_t, _x, y, out| out[0] = if b1_zero { 0.0 } else { y[0].sin() },
            move |_t, _x, _y, out| out[0] = sigma1_const,
            |x, y, out| out[0] = x[0] - y[0],
            |_x, _y, out| out[0] = std::f64::consts::SQRT_2,
            1.0,
            1.0,
            2.0,
            2.0,
            1.0,
            Some(LipschitzConstants {
                grad_sigma1: 0.0,
                grad_sigma1_holder: 0.0,
                sigma1_time: 0.0,
                sigma1_growth: sigma1_const,
                b1: 1.0,
                fast: 1.0,
                growth: 3.0,
            }),
        )
        .unwrap()
    }

    fn base_cfg(eps: f64, hyp: &HypothesisSet) -> FastSlowConfig {
        let n_steps = 50;
        let sub = FastSlowConfig::required_fast_substeps(1.0, n_steps, eps, hyp.fast_lipschitz());
        FastSlowConfig {
            epsilon: eps,
            delta: (2.0 * eps).max(0.04),
            t_end: 1.0,
            n_steps,
            fast_substeps: sub,
            x0: vec![0.5],
            y0: vec![0.0],
            hurst: HurstParam::new(0.7).unwrap(),
            alpha: AlphaParam::new(0.35).unwrap(),
            seed: SeedSpec::new(2024, 0),
        }
    }

    fn noises(cfg: &FastSlowConfig) -> (GridPath, GridPath) {
        let bh = sample_fbm(cfg.t_end, cfg.n_fast(), cfg.hurst, 1, cfg.seed.offset(1000)).unwrap();
        let w = sample_bm(cfg.t_end, cfg.n_fast(), 1, cfg.seed.offset(2000)).unwrap();
        (bh, w)
    }

    #[test]
    fn pure_noise_integration() {
        // b1 = 0, sigma1 = 1: the slow component reproduces x0 + B^H at the
        // slow nodes up to floating dust from increment resummation.
        let hyp = ou_system(1.0, true);
        let cfg = base_cfg(0.05, &hyp);
        let (bh, w) = noises(&cfg);
        let sol = solve_fast_slow(&cfg, &hyp, &bh, &w).unwrap();
        for k in 0..=cfg.n_steps {
            let want = 0.5 + bh.scalar(k * cfg.fast_substeps);
            assert!(
                (sol.x.scalar(k) - want).abs() < 1e-12,
                "node {k}: {} vs {want}",
                sol.x.scalar(k)
            );
        }
    }

    #[test]
    fn drift_only_first_order_convergence() {
        // Decoupled pure drift dX = -X dt: global error O(h), observed
        // order at least 0.9 under step halving.
        let hyp = HypothesisSet::new(
            dims1(),
            |_t, x, _y, out| out[0] = -x[0],
            |_t, _x, _y, out| out[0] = 0.0,
            |_x, y, out| out[0] = -y[0],
            |_x, _y, out| out[0] = 0.0,
            1.0,
            1.0,
            2.0,
            2.0,
            10.0,
            None,
        )
        .unwrap();
        let exact = 0.5 * (-1.0_f64).exp();
        let mut errs = Vec::new();
        for n_steps in [32usize, 64, 128] {
            let cfg = FastSlowConfig {
                epsilon: 0.05,
                delta: 0.1,
                t_end: 1.0,
                n_steps,
                fast_substeps: FastSlowConfig::required_fast_substeps(1.0, n_steps, 0.05, 1.0),
                x0: vec![0.5],
                y0: vec![1.0],
                hurst: HurstParam::new(0.7).unwrap(),
                alpha: AlphaParam::new(0.35).unwrap(),
                seed: SeedSpec::new(1, 0),
            };
            let (bh, w) = noises(&cfg);
            let sol = solve_fast_slow(&cfg, &hyp, &bh, &w).unwrap();
            errs.push((sol.x.scalar(n_steps) - exact).abs());
        }
        for pair in errs.windows(2) {
            let order = (pair[0] / pair[1]).log2();
            assert!(order >= 0.9, "observed order {order}, errors {errs:?}");
        }
    }

    #[test]
    fn fast_block_reaches_ou_stationary_variance() {
        // b1 = 0, sigma1 = 0 freezes X at x0; the fast OU block must
        // equilibrate to variance sigma2^2 / 2 = 1.
        let hyp = HypothesisSet::new(
            dims1(),
            |_t, _x, _y, out| out[0] = 0.0,
            |_t, _x, _y, out| out[0] = 0.0,
            |x, y, out| out[0] = x[0] - y[0],
            |_x, _y, out| out[0] = std::f64::consts::SQRT_2,
            1.0,
            1.0,
            2.0,
            2.0,
            1.0,
            None,
        )
        .unwrap();
        let mut cfg = base_cfg(0.05, &hyp);
        cfg.fast_substeps = 10; // h_fast/eps = 0.004: discretization bias ~0.2%
        let mut vals = Vec::new();
        for p in 0..400u64 {
            let mut c = cfg.clone();
            c.seed = SeedSpec::new(77, p);
            let (bh, w) = noises(&c);
            let sol = solve_fast_slow(&c, &hyp, &bh, &w).unwrap();
            for k in (cfg.n_steps / 2..=cfg.n_steps).step_by(5) {
                vals.push(sol.y.scalar(k));
            }
        }
        let m = stats::mean(&vals);
        let var = stats::sample_variance(&vals);
        assert!((m - 0.5).abs() < 0.05, "mean {m}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn frozen_deterministic_relaxation() {
        // sigma2 = 0: Y_t = x + (y - x) e^{-t} with O(h) global error.
        let hyp = HypothesisSet::new(
            dims1(),
            |_t, _x, _y, out| out[0] = 0.0,
            |_t, _x, _y, out| out[0] = 0.0,
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
        let path = solve_frozen(&[1.0], &[3.0], 2.0, 4000, &hyp, SeedSpec::new(3, 0)).unwrap();
        let got = path.scalar(4000);
        let want = 1.0 + 2.0 * (-2.0_f64).exp();
        assert!((got - want).abs() < 2e-3, "{got} vs {want}");

        // Fixed point of the drift stays put exactly.
        let fixed = solve_frozen(&[1.0], &[1.0], 1.0, 100, &hyp, SeedSpec::new(3, 1)).unwrap();
        assert!(fixed.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn frozen_ou_moments() {
        // OU with sigma2 = sqrt(2): E[Y_t] -> x, Var[Y_t] -> 1.
        let hyp = ou_system(0.0, true);
        let mut ends = Vec::new();
        for p in 0..10_000u64 {
            let path = solve_frozen(&[2.0], &[0.0], 4.0, 800, &hyp, SeedSpec::new(11, p)).unwrap();
            ends.push(path.scalar(800));
        }
        let m = stats::mean(&ends);
        let v = stats::sample_variance(&ends);
        let se = stats::std_error(&ends);
        assert!((m - 2.0).abs() < 3.0 * se + 2e-2, "mean {m}, se {se}");
        assert!((v - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn averaged_trivials_and_pathwise_bound() {
        let hyp = ou_system(1.0, true);
        let cfg = base_cfg(0.05, &hyp);
        let (bh, _) = noises(&cfg);
        // bbar1 = 0, sigma1 = 1: Xbar = x0 + B^H.
        let zero_drift = |_t: f64, _x: &[f64], out: &mut [f64]| out[0] = 0.0;
        let sol = solve_averaged(&cfg, &hyp, &zero_drift, &bh).unwrap();
        for k in [0usize, 17, cfg.n_steps] {
            let want = 0.5 + bh.scalar(k * cfg.fast_substeps);
            assert!((sol.x.scalar(k) - want).abs() < 1e-12);
        }

        // Exponential decay against the exact ODE solution.
        let hyp2 = ou_system(0.0, true);
        let mut cfg2 = base_cfg(0.05, &hyp2);
        cfg2.n_steps = 400;
        cfg2.fast_substeps =
            FastSlowConfig::required_fast_substeps(1.0, 400, 0.05, hyp2.fast_lipschitz());
        let (bh2, _) = noises(&cfg2);
        let decay = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = -x[0];
        let sol2 = solve_averaged(&cfg2, &hyp2, &decay, &bh2).unwrap();
        let want = 0.5 * (-1.0_f64).exp();
        assert!((sol2.x.scalar(400) - want).abs() < 1e-3);

        // Benchmark drift: |Xbar| stays inside the pathwise triangle bound
        // |x0| + sup|bbar1| T + sup|sigma1| sum|dB| computed from the same
        // inputs.
        let coef = (-0.5_f64).exp();
        let bench = move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = coef * x[0].sin();
        let sol3 = solve_averaged(&cfg, &hyp, &bench, &bh).unwrap();
        let mut db_sum = 0.0;
        for k in 0..cfg.n_steps {
            db_sum +=
                (bh.scalar((k + 1) * cfg.fast_substeps) - bh.scalar(k * cfg.fast_substeps)).abs();
        }
        let bound = 0.5 + coef * 1.0 + 1.0 * db_sum;
        assert!(sol3.x.sup_norm() <= bound + 1e-9);
    }

    #[test]
    fn khasminskii_x_free_fast_block_is_inert() {
        // b2, sigma2 ignore x, so Yhat runs the exact same recursion as Y.
        let hyp = HypothesisSet::new(
            dims1(),
            |_t, _x, y, out| out[0] = y[0].sin(),
            |_t, _x, _y, out| out[0] = 0.5,
            |_x, y, out| out[0] = -y[0],
            |_x, _y, out| out[0] = std::f64::consts::SQRT_2,
            1.0,
            1.0,
            2.0,
            2.0,
            1.0,
            None,
        )
        .unwrap();
        let cfg = base_cfg(0.02, &hyp);
        let (bh, w) = noises(&cfg);
        let sol = solve_fast_slow(&cfg, &hyp, &bh, &w).unwrap();
        let aux = khasminskii_auxiliary(&cfg, &hyp, &sol.x, &bh, &w).unwrap();
        for k in 0..=cfg.n_steps {
            assert_eq!(
                sol.y.scalar(k).to_bits(),
                aux.y_hat.scalar(k).to_bits(),
                "node {k}"
            );
        }
    }

    #[test]
    fn khasminskii_constant_drift_matches_x() {
        // Constant b1: the time integrals agree and the sigma1 increments
        // are shared, so Xhat - X vanishes (up to resummation dust).
        let hyp = HypothesisSet::new(
            dims1(),
            |_t, _x, _y, out| out[0] = 0.7,
            |_t, x, _y, out| out[0] = 0.5 * (1.0 + 0.1 * x[0].cos()),
            |x, y, out| out[0] = x[0] - y[0],
            |_x, _y, out| out[0] = std::f64::consts::SQRT_2,
            1.0,
            1.0,
            2.0,
            2.0,
            1.0,
            None,
        )
        .unwrap();
        let cfg = base_cfg(0.02, &hyp);
        let (bh, w) = noises(&cfg);
        let sol = solve_fast_slow(&cfg, &hyp, &bh, &w).unwrap();
        let aux = khasminskii_auxiliary(&cfg, &hyp, &sol.x, &bh, &w).unwrap();
        for k in 0..=cfg.n_steps {
            assert!(
                (sol.x.scalar(k) - aux.x_hat.scalar(k)).abs() < 1e-12,
                "node {k}: {} vs {}",
                sol.x.scalar(k),
                aux.x_hat.scalar(k)
            );
        }
        assert_eq!(
            aux.delta_steps,
            (cfg.delta_snapped() / cfg.h_slow()).round() as usize
        );
    }

    #[test]
    fn delta_snapping_reported() {
        let hyp = ou_system(0.5, false);
        let mut cfg = base_cfg(0.05, &hyp);
        cfg.delta = 0.1234; // h_slow = 0.02 -> snaps to 0.12
        assert_eq!(cfg.delta_steps(), 6);
        assert!((cfg.delta_snapped() - 0.12).abs() < 1e-12);
    }

    #[test]
    fn solver_is_deterministic() {
        let hyp = ou_system(0.5, false);
        let cfg = base_cfg(0.05, &hyp);
        let (bh, w) = noises(&cfg);
        let a = solve_fast_slow(&cfg, &hyp, &bh, &w).unwrap();
        let b = solve_fast_slow(&cfg, &hyp, &bh, &w).unwrap();
        assert_eq!(a.x.data(), b.x.data());
        assert_eq!(a.y.data(), b.y.data());
        assert_eq!(a.increment_checksum, b.increment_checksum);

        // The averaged solver consumes the same increments.
        let coef = (-0.5_f64).exp();
        let bench = move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = coef * x[0].sin();
        let avg = solve_averaged(&cfg, &hyp, &bench, &bh).unwrap();
        assert_eq!(a.increment_checksum, avg.increment_checksum);
    }

    #[test]
    fn hypothesis_violation_detected() {
        // Declared bound 0.5 but b1 = 0.7: the solver must refuse.
        let hyp = HypothesisSet::new(
            dims1(),
            |_t, _x, _y, out| out[0] = 0.7,
            |_t, _x, _y, out| out[0] = 0.0,
            |x, y, out| out[0] = x[0] - y[0],
            |_x, _y, out| out[0] = 0.0,
            1.0,
            1.0,
            2.0,
            2.0,
            0.5,
            None,
        )
        .unwrap();
        let cfg = base_cfg(0.05, &hyp);
        let (bh, w) = noises(&cfg);
        let err = solve_fast_slow(&cfg, &hyp, &bh, &w).unwrap_err();
        assert!(matches!(err, Error::HypothesisViolation(_)), "{err}");
    }

    #[test]
    fn blow_up_is_reported_with_index() {
        // Cubic fast drift explodes from a large initial state.
        let hyp = HypothesisSet::new(
            dims1(),
            |_t, _x, _y, out| out[0] = 0.0,
            |_t, _x, _y, out| out[0] = 0.0,
            |_x, y, out| out[0] = y[0] * y[0] * y[0],
            |_x, _y, out| out[0] = 0.0,
            1.0,
            1.0,
            2.0,
            2.0,
            1.0,
            None,
        )
        .unwrap();
        let mut cfg = base_cfg(0.05, &hyp);
        cfg.y0 = vec![40.0];
        let (bh, w) = noises(&cfg);
        let err = solve_fast_slow(&cfg, &hyp, &bh, &w).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }), "{err}");
    }

    #[test]
    fn config_validation_rejects_bad_scales() {
        let hyp = ou_system(0.5, false);
        let mut cfg = base_cfg(0.05, &hyp);
        cfg.delta = 0.02; // below epsilon
        assert!(cfg.validate(&hyp).is_err());

        let mut cfg = base_cfg(0.05, &hyp);
        cfg.fast_substeps = 1; // h_fast = 0.02 > 0.1*eps = 0.005
        assert!(cfg.validate(&hyp).is_err());

        let mut cfg = base_cfg(0.05, &hyp);
        cfg.hurst = HurstParam::new(0.5).unwrap();
        assert!(cfg.validate(&hyp).is_err());
    }

    #[test]
    fn time_shift_law_matches() {
        let hyp = ou_system(0.0, true);
        let mut cfg = base_cfg(0.1, &hyp);
        cfg.delta = 0.3;
        cfg.y0 = vec![2.5];
        let chk = time_shift_scaling_check(&cfg, &hyp, 1, 5000).unwrap();
        assert!(chk.pass, "ks = {}, p = {}", chk.ks_statistic, chk.p_value);
    }

    #[test]
    fn time_shift_degenerate_diffusion() {
        let hyp = HypothesisSet::new(
            dims1(),
            |_t, _x, _y, out| out[0] = 0.0,
            |_t, _x, _y, out| out[0] = 0.0,
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
        let mut cfg = base_cfg(0.1, &hyp);
        cfg.delta = 0.3;
        cfg.y0 = vec![2.0];
        let chk = time_shift_scaling_check(&cfg, &hyp, 1, 100).unwrap();
        assert_eq!(chk.ks_statistic, 0.0);
        assert!(chk.pass);
    }

    #[test]
    fn time_shift_mismatched_clock_fails() {
        let hyp = ou_system(0.0, true);
        let mut cfg = base_cfg(0.1, &hyp);
        cfg.delta = 0.3;
        cfg.y0 = vec![2.5];
        let chk = time_shift_scaling_check_with_ratio(&cfg, &hyp, 1, 5000, 4.0).unwrap();
        assert!(!chk.pass, "negative control passed: p = {}", chk.p_value);
    }

    #[test]
    fn multidimensional_slow_diffusion_indexing() {
        // d1 = d2 = m = r = 2 with a non-diagonal slow diffusion: with
        // b1 = 0 the slow recursion must reproduce x0 + Sigma B^H node by
        // node, which pins down the row-major matrix layout.
        let dims = SystemDims {
            d1: 2,
            d2: 2,
            m: 2,
            r: 2,
        };
        let sig = [[1.0, 0.5], [-0.25, 2.0]];
        let hyp = HypothesisSet::new(
            dims,
            |_t, _x, _y, out| out.fill(0.0),
            move |_t, _x, _y, out| {
                out[0] = sig[0][0];
                out[1] = sig[0][1];
                out[2] = sig[1][0];
                out[3] = sig[1][1];
            },
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
            1.0,
            None,
        )
        .unwrap();
        let cfg = FastSlowConfig {
            epsilon: 0.05,
            delta: 0.1,
            t_end: 1.0,
            n_steps: 40,
            fast_substeps: FastSlowConfig::required_fast_substeps(1.0, 40, 0.05, 1.0),
            x0: vec![0.5, -0.3],
            y0: vec![0.0, 0.0],
            hurst: HurstParam::new(0.7).unwrap(),
            alpha: AlphaParam::new(0.35).unwrap(),
            seed: SeedSpec::new(515, 0),
        };
        let bh = sample_fbm(1.0, cfg.n_fast(), cfg.hurst, 2, cfg.seed.offset(1)).unwrap();
        let w = sample_bm(1.0, cfg.n_fast(), 2, cfg.seed.offset(2)).unwrap();
        let sol = solve_fast_slow(&cfg, &hyp, &bh, &w).unwrap();
        for k in 0..=cfg.n_steps {
            let node = bh.node(k * cfg.fast_substeps);
            for c in 0..2 {
                let want = cfg.x0[c] + sig[c][0] * node[0] + sig[c][1] * node[1];
                assert!(
                    (sol.x.coord(k, c) - want).abs() < 1e-12,
                    "node {k} coord {c}: {} vs {want}",
                    sol.x.coord(k, c)
                );
            }
        }

        // The decoupled two-coordinate OU block equilibrates each
        // coordinate to variance 1 around its frozen slow component.
        let mut vals0 = Vec::new();
        let mut vals1 = Vec::new();
        for p in 0..4_000u64 {
            let path = solve_frozen(
                &[1.0, -2.0],
                &[0.0, 0.0],
                4.0,
                800,
                &hyp,
                SeedSpec::new(517, p),
            )
            .unwrap();
            vals0.push(path.coord(800, 0));
            vals1.push(path.coord(800, 1));
        }
        assert!((stats::mean(&vals0) - 1.0).abs() < 0.06, "{}", stats::mean(&vals0));
        assert!((stats::mean(&vals1) + 2.0).abs() < 0.06, "{}", stats::mean(&vals1));
        assert!((stats::sample_variance(&vals0) - 1.0).abs() < 0.08);
        assert!((stats::sample_variance(&vals1) - 1.0).abs() < 0.08);

        // x-free fast coefficients keep the auxiliary block inert in
        // higher dimensions too.
        let hyp_xfree = HypothesisSet::new(
            dims,
            |_t, _x, y, out| {
                out[0] = y[1].sin();
                out[1] = y[0].cos() * 0.5;
            },
            |_t, _x, _y, out| {
                out.fill(0.0);
                out[0] = 0.5;
                out[3] = 0.5;
            },
            |_x, y, out| {
                out[0] = -y[0];
                out[1] = -y[1];
            },
            |_x, _y, out| {
                out.fill(0.0);
                out[0] = 1.0;
                out[3] = 1.0;
            },
            1.0,
            1.0,
            2.0,
            2.0,
            2.0,
            None,
        )
        .unwrap();
        let sol = solve_fast_slow(&cfg, &hyp_xfree, &bh, &w).unwrap();
        let aux = khasminskii_auxiliary(&cfg, &hyp_xfree, &sol.x, &bh, &w).unwrap();
        for k in 0..=cfg.n_steps {
            for c in 0..2 {
                assert_eq!(
                    sol.y.coord(k, c).to_bits(),
                    aux.y_hat.coord(k, c).to_bits(),
                    "node {k} coord {c}"
                );
            }
        }
    }

    #[test]
    fn spot_check_accepts_conforming_system() {
        let hyp = HypothesisSet::new(
            dims1(),
            |_t, _x, y, out| out[0] = y[0].sin(),
            |_t, x, _y, out| out[0] = 0.5 * (1.0 + 0.1 * x[0].cos()),
            |x, y, out| out[0] = x[0] - y[0],
            |_x, _y, out| out[0] = std::f64::consts::SQRT_2,
            1.0,
            1.0,
            2.0,
            2.0,
            1.0,
            Some(LipschitzConstants {
                grad_sigma1: 0.05,
                grad_sigma1_holder: 0.05,
                sigma1_time: 0.0,
                sigma1_growth: 0.55,
                b1: 1.0,
                fast: 2.0,
                growth: 2.5,
            }),
        )
        .unwrap();
        let rep = hyp
            .spot_check(3.0, 3.0, 1.0, 500, SeedSpec::new(13, 0))
            .unwrap();
        assert!(rep.pass, "violations: {:?}", rep.violations);
    }

    #[test]
    fn spot_check_flags_understated_constants() {
        let hyp = HypothesisSet::new(
            dims1(),
            |_t, _x, y, out| out[0] = y[0].sin(),
            |_t, x, _y, out| out[0] = x[0].sin(), // gradient reaches 1
            |x, y, out| out[0] = x[0] - y[0],
            |_x, _y, out| out[0] = 1.0,
            1.0,
            1.0,
            2.0,
            2.0,
            1.0,
            Some(LipschitzConstants {
                grad_sigma1: 0.05, // understated
                grad_sigma1_holder: 0.05,
                sigma1_time: 0.0,
                sigma1_growth: 1.0,
                b1: 1.0,
                fast: 2.0,
                growth: 2.5,
            }),
        )
        .unwrap();
        let rep = hyp
            .spot_check(3.0, 3.0, 1.0, 500, SeedSpec::new(13, 1))
            .unwrap();
        assert!(!rep.pass);
    }
}
