//! Experiment orchestration: the mean-square convergence study of the
//! slow component toward the averaged equation, the quantitative lemma
//! suite (a-priori norms, time regularity, block-process scalings,
//! decorrelation, stopping-time tails), and machine-readable reports.
//!
//! Monte Carlo replicas fan out across a rayon pool; every replica owns
//! named noise streams derived from the master seed and results are
//! collected in replica order, so reports are byte-identical across
//! worker counts.

use crate::averaging;
use crate::error::{Error, Result};
use crate::fraccalc::{self, AlphaParam};
use crate::grid::GridPath;
use crate::noise::{self, FbmSampler, HurstParam};
use crate::rng::SeedSpec;
use crate::sde::{self, AveragedDrift, FastSlowConfig, HypothesisSet};
use crate::stats;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as FmtWrite;
use std::io::Write as IoWrite;
use std::path::Path;
use std::time::Instant;

/// Stream-id spacing between study rows; replicas use two streams each
/// (fBm and Wiener), so this allows over a million replicas per row.
const STREAM_SPACING: u64 = 1 << 22;

/// Khasminskii block schedule `delta = eps sqrt(-ln eps)`.
pub fn delta_schedule(epsilon: f64) -> f64 {
    epsilon * (-epsilon.ln()).sqrt()
}

/// One epsilon row of the convergence study.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    /// Block length after snapping to the slow grid.
    pub delta_used: f64,
    pub n_paths: usize,
    /// Monte Carlo estimate of `E sup_t |X - Xbar|^2`.
    pub mse_sup: f64,
    pub mse_sup_se: f64,
    /// Monte Carlo estimate of `E |X - Xbar|^2_{alpha,oo}`.
    pub mse_alpha: f64,
    pub mse_alpha_se: f64,
    pub runtime_s: f64,
}

/// An epsilon row dropped because replicas blew up.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AbortedRow {
    pub epsilon: f64,
    pub blow_ups: usize,
}

/// Everything needed to reproduce a study bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StudyManifest {
    pub system: String,
    pub master_seed: u64,
    pub base_stream: u64,
    pub t_end: f64,
    pub n_steps: usize,
    pub hurst: f64,
    pub alpha: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub n_paths: usize,
    pub delta_rule: String,
    pub build: String,
    pub aborted_rows: Vec<AbortedRow>,
}

/// Rows sorted by descending epsilon plus the provenance manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub manifest: StudyManifest,
}

/// Shared-noise replica: one fBm realization drives both the coupled and
/// the averaged solver; the Wiener path is independent.
fn replica_noises(
    sampler: &FbmSampler,
    cfg: &FastSlowConfig,
    dims_m: usize,
    dims_r: usize,
    replica: u64,
) -> Result<(GridPath, GridPath)> {
    let bh = sampler.sample(dims_m, cfg.seed.offset(2 * replica))?;
    let w = noise::sample_bm(cfg.t_end, cfg.n_fast(), dims_r, cfg.seed.offset(2 * replica + 1))?;
    Ok((bh, w))
}

/// Runs the mean-square convergence study: for each epsilon, `n_paths`
/// replicas of the coupled and averaged systems on shared fBm
/// realizations, reporting both the plain sup error and the
/// fractional-norm error with standard errors. A replica blow-up aborts
/// its row, which moves to the manifest with a diagnostic count.
pub fn run_convergence_study(
    cfg_template: &FastSlowConfig,
    hyp: &HypothesisSet,
    bbar1: &dyn AveragedDrift,
    eps_list: &[f64],
    n_paths: usize,
    system_label: &str,
) -> Result<ConvergenceReport> {
    if eps_list.is_empty() || n_paths == 0 {
        return Err(Error::invalid("need at least one epsilon and one path"));
    }
    let mut eps_sorted = eps_list.to_vec();
    eps_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut rows = Vec::new();
    let mut aborted = Vec::new();
    for (row_idx, &eps) in eps_sorted.iter().enumerate() {
        let started = Instant::now();
        let mut cfg = cfg_template.clone();
        cfg.epsilon = eps;
        cfg.delta = delta_schedule(eps);
        cfg.fast_substeps = FastSlowConfig::required_fast_substeps(
            cfg.t_end,
            cfg.n_steps,
            eps,
            hyp.fast_lipschitz(),
        );
        cfg.seed = cfg_template
            .seed
            .offset((row_idx as u64 + 1) * STREAM_SPACING);
        cfg.validate(hyp)?;
        let sampler = FbmSampler::auto(cfg.t_end, cfg.n_fast(), cfg.hurst)?;

        let results: Vec<Result<(f64, f64)>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|p| {
                let (bh, w) = replica_noises(&sampler, &cfg, hyp.dims.m, hyp.dims.r, p)?;
                let coupled = sde::solve_fast_slow(&cfg, hyp, &bh, &w)?;
                let averaged = sde::solve_averaged(&cfg, hyp, bbar1, &bh)?;
                if coupled.increment_checksum != averaged.increment_checksum {
                    return Err(Error::numeric(
                        "shared-noise discipline violated: increment checksums differ",
                    ));
                }
                let diff = coupled.x.difference(&averaged.x)?;
                let sup_sq = diff.sup_norm().powi(2);
                let alpha_sq = fraccalc::w_alpha_infty_norm(&diff, cfg.alpha).powi(2);
                Ok((sup_sq, alpha_sq))
            })
            .collect();

        let mut sup_sq = Vec::with_capacity(n_paths);
        let mut alpha_sq = Vec::with_capacity(n_paths);
        let mut blow_ups = 0usize;
        let mut fatal: Option<Error> = None;
        for r in results {
            match r {
                Ok((s, a)) => {
                    sup_sq.push(s);
                    alpha_sq.push(a);
                }
                Err(Error::BlowUp { .. }) => blow_ups += 1,
                Err(e) => fatal = Some(e),
            }
        }
        if let Some(e) = fatal {
            return Err(e);
        }
        if blow_ups > 0 {
            aborted.push(AbortedRow {
                epsilon: eps,
                blow_ups,
            });
            continue;
        }
        rows.push(ConvergenceRow {
            epsilon: eps,
            delta_used: cfg.delta_snapped(),
            n_paths,
            mse_sup: stats::mean(&sup_sq),
            mse_sup_se: stats::std_error(&sup_sq),
            mse_alpha: stats::mean(&alpha_sq),
            mse_alpha_se: stats::std_error(&alpha_sq),
            runtime_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(ConvergenceReport {
        rows,
        manifest: StudyManifest {
            system: system_label.to_string(),
            master_seed: cfg_template.seed.master_seed,
            base_stream: cfg_template.seed.stream_id,
            t_end: cfg_template.t_end,
            n_steps: cfg_template.n_steps,
            hurst: cfg_template.hurst.value(),
            alpha: cfg_template.alpha.value(),
            x0: cfg_template.x0.clone(),
            y0: cfg_template.y0.clone(),
            eps_list: eps_sorted,
            n_paths,
            delta_rule: "eps*sqrt(-ln eps), snapped to the slow grid".to_string(),
            build: crate::BUILD_DESCRIBE.to_string(),
            aborted_rows: aborted,
        },
    })
}

// ---------------------------------------------------------------------
// Lemma suite
// ---------------------------------------------------------------------

/// One verified estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaOutcome {
    pub name: String,
    pub pass: bool,
    /// Headline statistic (slope, rate, or max drift, depending on the
    /// check).
    pub statistic: f64,
    pub detail: String,
    /// Raw per-point values behind the statistic.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaSuiteReport {
    pub outcomes: Vec<LemmaOutcome>,
    pub all_pass: bool,
}

impl LemmaSuiteReport {
    pub fn outcome(&self, name: &str) -> Option<&LemmaOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }
}

/// Monte Carlo sizes for [`run_lemma_suite`].
#[derive(Debug, Clone)]
pub struct LemmaSuiteOptions {
    pub eps_list: Vec<f64>,
    /// Epsilon held fixed during the delta sweep. Must sit well below the
    /// smallest delta: the block gaps only show their delta-scaling in
    /// the averaging regime `delta >> eps` (the fast relaxation window
    /// eats an O(eps) slice of every block otherwise).
    pub delta_sweep_eps: f64,
    pub delta_list: Vec<f64>,
    /// Slow-grid override for the delta sweep, so the smallest block
    /// still spans many slow steps; only solver-cost, no norms are
    /// computed there.
    pub delta_sweep_n_steps: Option<usize>,
    pub n_paths_eps: usize,
    pub n_paths_delta: usize,
    pub n_paths_decorrelation: usize,
    pub n_paths_stopping: usize,
    pub stopping_grid_steps: usize,
}

impl Default for LemmaSuiteOptions {
    fn default() -> Self {
        Self {
            eps_list: vec![0.1, 0.05, 0.02, 0.01],
            delta_sweep_eps: 4e-4,
            delta_list: vec![0.04, 0.02, 0.01],
            delta_sweep_n_steps: Some(3_200),
            n_paths_eps: 96,
            n_paths_delta: 384,
            n_paths_decorrelation: 6_000,
            n_paths_stopping: 2_000,
            stopping_grid_steps: 192,
        }
    }
}

/// Per-replica quantities collected during an epsilon-row sweep.
struct EpsRowStats {
    x_norm_sq: Vec<f64>,
    xhat_norm_sq: Vec<f64>,
    xbar_norm_sq: Vec<f64>,
    /// Sup over grid nodes of the Monte Carlo mean E|Y_t|^2, with the
    /// standard error of the mean at the maximizing node.
    y_second_moment_sup: f64,
    y_second_moment_se: f64,
    block_fluct_norm_sq: Vec<f64>,
    hat_bar_gap_sq: Vec<f64>,
    /// Mean square increments per dyadic lag (in slow steps).
    regularity: Vec<f64>,
}

/// Time integral of the block fluctuation
/// `b1(s(delta), X_{s(delta)}, Yhat_s) - bbar1(s(delta), X_{s(delta)})`
/// accumulated on the slow grid; this is the quantity whose alpha-norm the
/// block-averaging estimate controls by `C (eps/delta + delta)`.
fn block_fluctuation_path(
    cfg: &FastSlowConfig,
    hyp: &HypothesisSet,
    bbar1: &dyn AveragedDrift,
    x_path: &GridPath,
    w: &GridPath,
) -> Result<GridPath> {
    let d = hyp.dims;
    let (n, sub) = (cfg.n_steps, cfg.fast_substeps);
    let (h, hf) = (cfg.h_slow(), cfg.h_fast());
    let inv_eps = 1.0 / cfg.epsilon;
    let inv_sqrt_eps = inv_eps.sqrt();
    let delta_steps = cfg.delta_steps();
    let mut yh = cfg.y0.clone();
    let mut acc = vec![0.0; d.d1];
    let mut out = vec![0.0; (n + 1) * d.d1];
    let mut b1v = vec![0.0; d.d1];
    let mut bbar = vec![0.0; d.d1];
    let mut fast_drift = vec![0.0; d.d2];
    let mut fast_sigma = vec![0.0; d.d2 * d.r];
    for k in 0..n {
        let k_frozen = (k / delta_steps) * delta_steps;
        let t_frozen = k_frozen as f64 * h;
        let x_frozen = x_path.node(k_frozen);
        bbar1.eval(t_frozen, x_frozen, &mut bbar);
        for jf in 0..sub {
            let idx = k * sub + jf;
            hyp.eval_b1(t_frozen, x_frozen, &yh, &mut b1v)?;
            for c in 0..d.d1 {
                acc[c] += hf * (b1v[c] - bbar[c]);
            }
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
        out[(k + 1) * d.d1..(k + 2) * d.d1].copy_from_slice(&acc);
    }
    GridPath::new(cfg.t_end, n, d.d1, out)
}

fn eps_row_stats(
    cfg: &FastSlowConfig,
    hyp: &HypothesisSet,
    bbar1: &dyn AveragedDrift,
    n_paths: usize,
    lags: &[usize],
) -> Result<EpsRowStats> {
    let sampler = FbmSampler::auto(cfg.t_end, cfg.n_fast(), cfg.hurst)?;
    type Per = (f64, f64, f64, Vec<f64>, f64, f64, Vec<f64>);
    let results: Vec<Result<Per>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let (bh, w) = replica_noises(&sampler, cfg, hyp.dims.m, hyp.dims.r, p)?;
            let coupled = sde::solve_fast_slow(cfg, hyp, &bh, &w)?;
            let averaged = sde::solve_averaged(cfg, hyp, bbar1, &bh)?;
            let aux = sde::khasminskii_auxiliary(cfg, hyp, &coupled.x, &bh, &w)?;
            let alpha = cfg.alpha;
            let x_norm = fraccalc::w_alpha_infty_norm(&coupled.x, alpha).powi(2);
            let xhat_norm = fraccalc::w_alpha_infty_norm(&aux.x_hat, alpha).powi(2);
            let xbar_norm = fraccalc::w_alpha_infty_norm(&averaged.x, alpha).powi(2);
            let y_sq: Vec<f64> = (0..=cfg.n_steps)
                .map(|k| coupled.y.node_norm(k).powi(2))
                .collect();
            let fluct = block_fluctuation_path(cfg, hyp, bbar1, &coupled.x, &w)?;
            let fluct_norm = fraccalc::w_alpha_infty_norm(&fluct, alpha).powi(2);
            let gap = aux.x_hat.difference(&averaged.x)?;
            let gap_norm = fraccalc::w_alpha_infty_norm(&gap, alpha).powi(2);
            let mut reg = Vec::with_capacity(lags.len());
            for &lag in lags {
                let mut acc = 0.0;
                let mut count = 0usize;
                let mut k = 0;
                while k + lag <= cfg.n_steps {
                    let mut d2 = 0.0;
                    for c in 0..hyp.dims.d1 {
                        let dd = coupled.x.coord(k + lag, c) - coupled.x.coord(k, c);
                        d2 += dd * dd;
                    }
                    acc += d2;
                    count += 1;
                    k += lag;
                }
                reg.push(acc / count as f64);
            }
            Ok((x_norm, xhat_norm, xbar_norm, y_sq, fluct_norm, gap_norm, reg))
        })
        .collect();

    let mut x_norm_sq = Vec::new();
    let mut xhat_norm_sq = Vec::new();
    let mut xbar_norm_sq = Vec::new();
    let mut block_fluct_norm_sq = Vec::new();
    let mut hat_bar_gap_sq = Vec::new();
    let mut y_sq_paths: Vec<Vec<f64>> = Vec::new();
    let mut regularity = vec![0.0; lags.len()];
    let mut count = 0usize;
    for r in results {
        let (xn, xh, xb, ysq, fl, gap, reg) = r?;
        x_norm_sq.push(xn);
        xhat_norm_sq.push(xh);
        xbar_norm_sq.push(xb);
        block_fluct_norm_sq.push(fl);
        hat_bar_gap_sq.push(gap);
        y_sq_paths.push(ysq);
        for (k, v) in reg.iter().enumerate() {
            regularity[k] += v;
        }
        count += 1;
    }
    let mut y_second_moment_sup = 0.0_f64;
    let mut y_second_moment_se = 0.0_f64;
    for k in 0..=cfg.n_steps {
        let node: Vec<f64> = y_sq_paths.iter().map(|p| p[k]).collect();
        let m = stats::mean(&node);
        if m > y_second_moment_sup {
            y_second_moment_sup = m;
            y_second_moment_se = stats::std_error(&node);
        }
    }
    for v in regularity.iter_mut() {
        *v /= count as f64;
    }
    Ok(EpsRowStats {
        x_norm_sq,
        xhat_norm_sq,
        xbar_norm_sq,
        y_second_moment_sup,
        y_second_moment_se,
        block_fluct_norm_sq,
        hat_bar_gap_sq,
        regularity,
    })
}

/// Largest drift between Monte Carlo means relative to their combined
/// standard errors; "stable" means no pair separates beyond 3 combined
/// standard errors.
fn stability_check(means: &[f64], ses: &[f64]) -> (bool, f64) {
    let mut worst = 0.0_f64;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let se = ses[i] + ses[j];
            if se > 0.0 {
                worst = worst.max((means[i] - means[j]).abs() / se);
            } else if means[i] != means[j] {
                worst = f64::INFINITY;
            }
        }
    }
    (worst <= 3.0, worst)
}

fn scaling_exponent(xs: &[f64], means: &[f64]) -> Result<f64> {
    if means.iter().all(|&v| v == 0.0) {
        // Identically zero error metrics (trivial systems) scale with any
        // exponent.
        return Ok(f64::NAN);
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = means.iter().map(|v| v.max(1e-300).ln()).collect();
    Ok(stats::linear_fit(&lx, &ly)?.slope)
}

/// Runs every quantitative lemma check on the supplied benchmark system.
/// Individual failures are reported in the outcome list; the suite only
/// errors on infrastructure problems.
pub fn run_lemma_suite(
    cfg_template: &FastSlowConfig,
    hyp: &HypothesisSet,
    bbar1: &dyn AveragedDrift,
    opts: &LemmaSuiteOptions,
) -> Result<LemmaSuiteReport> {
    let mut outcomes = Vec::new();
    let lags = [1usize, 2, 4, 8, 16];

    // Epsilon sweep: a-priori norms, fast moments, regularity, block
    // fluctuation decay, averaged-gap decay.
    let mut per_eps = Vec::new();
    for (i, &eps) in opts.eps_list.iter().enumerate() {
        let mut cfg = cfg_template.clone();
        cfg.epsilon = eps;
        cfg.delta = delta_schedule(eps);
        cfg.fast_substeps = FastSlowConfig::required_fast_substeps(
            cfg.t_end,
            cfg.n_steps,
            eps,
            hyp.fast_lipschitz(),
        );
        cfg.seed = cfg_template.seed.offset((i as u64 + 1) * STREAM_SPACING);
        cfg.validate(hyp)?;
        per_eps.push(eps_row_stats(&cfg, hyp, bbar1, opts.n_paths_eps, &lags)?);
    }

    // A-priori bounds: E|X|^2_{alpha,oo} (and the hatted/averaged
    // variants) stay bounded uniformly in eps.
    for (name, extract) in [
        (
            "a_priori_x_alpha_norm",
            (|s: &EpsRowStats| &s.x_norm_sq) as fn(&EpsRowStats) -> &Vec<f64>,
        ),
        ("a_priori_xhat_alpha_norm", |s: &EpsRowStats| {
            &s.xhat_norm_sq
        }),
        ("a_priori_xbar_alpha_norm", |s: &EpsRowStats| {
            &s.xbar_norm_sq
        }),
    ] {
        let means: Vec<f64> = per_eps.iter().map(|s| stats::mean(extract(s))).collect();
        let ses: Vec<f64> = per_eps
            .iter()
            .map(|s| stats::std_error(extract(s)))
            .collect();
        let finite = means.iter().all(|v| v.is_finite());
        let (stable, worst) = stability_check(&means, &ses);
        outcomes.push(LemmaOutcome {
            name: name.to_string(),
            pass: finite && stable,
            statistic: worst,
            detail: format!("means across eps: {means:?}"),
            values: means,
        });
    }

    // Fast moments: sup_t E|Y|^2 uniformly bounded in eps (no trend
    // beyond the combined confidence intervals).
    {
        let values: Vec<f64> = per_eps.iter().map(|s| s.y_second_moment_sup).collect();
        let ses: Vec<f64> = per_eps.iter().map(|s| s.y_second_moment_se).collect();
        let finite = values.iter().all(|v| v.is_finite());
        let (stable, worst) = stability_check(&values, &ses);
        outcomes.push(LemmaOutcome {
            name: "fast_second_moment".to_string(),
            pass: finite && stable,
            statistic: worst,
            detail: format!("sup_t E|Y|^2 across eps: {values:?}"),
            values,
        });
    }

    // Time regularity: E|X_{t+h} - X_t|^2 ~ h^{2-2alpha} (slope at least
    // 2 - 2 alpha - 0.1; the benchmark's true slope is 2H).
    {
        let reg = &per_eps.last().expect("non-empty eps list").regularity;
        let h = cfg_template.h_slow();
        let xs: Vec<f64> = lags.iter().map(|&l| (l as f64 * h).ln()).collect();
        let all_zero = reg.iter().all(|&v| v == 0.0);
        let (slope, pass) = if all_zero {
            (f64::NAN, true)
        } else {
            let ys: Vec<f64> = reg.iter().map(|v| v.max(1e-300).ln()).collect();
            let slope = stats::linear_fit(&xs, &ys)?.slope;
            let gate = 2.0 - 2.0 * cfg_template.alpha.value() - 0.1;
            (slope, slope >= gate)
        };
        outcomes.push(LemmaOutcome {
            name: "time_regularity".to_string(),
            pass,
            statistic: slope,
            detail: format!(
                "increment slope {slope:.3} vs gate {:.3}",
                2.0 - 2.0 * cfg_template.alpha.value() - 0.1
            ),
            values: reg.clone(),
        });
    }

    // Block fluctuation integral decays as eps shrinks (the
    // (eps/delta + delta) bound at delta = delta(eps)).
    {
        let means: Vec<f64> = per_eps
            .iter()
            .map(|s| stats::mean(&s.block_fluct_norm_sq))
            .collect();
        let all_zero = means.iter().all(|&v| v == 0.0);
        let pass = all_zero || means.last().unwrap() < means.first().unwrap();
        outcomes.push(LemmaOutcome {
            name: "block_average_decay".to_string(),
            pass,
            statistic: means.last().unwrap() / means.first().unwrap().max(1e-300),
            detail: format!("E|int (b1 - bbar1)|^2_alpha across eps: {means:?}"),
            values: means,
        });
    }

    // E sup |Xhat - Xbar|^2_alpha decays as eps shrinks.
    {
        let means: Vec<f64> = per_eps
            .iter()
            .map(|s| stats::mean(&s.hat_bar_gap_sq))
            .collect();
        let all_zero = means.iter().all(|&v| v == 0.0);
        let pass = all_zero || means.last().unwrap() < means.first().unwrap();
        outcomes.push(LemmaOutcome {
            name: "averaged_gap_decay".to_string(),
            pass,
            statistic: means.last().unwrap() / means.first().unwrap().max(1e-300),
            detail: format!("E|Xhat - Xbar|^2_alpha across eps: {means:?}"),
            values: means,
        });
    }

    // Delta sweep at fixed epsilon: the block-process gaps scale with
    // exponent 1 +- 0.25 in delta. Statistics follow the estimates
    // verbatim: sup over grid nodes of the Monte Carlo mean
    // E|Y_t - Yhat_t|^2 for the fast gap, and the Monte Carlo mean of
    // sup_t |X_t - Xhat_t| for the slow sup-error.
    {
        let eps = opts.delta_sweep_eps;
        let n_steps = opts.delta_sweep_n_steps.unwrap_or(cfg_template.n_steps);
        let mut yhat_means = Vec::new();
        let mut xhat_means = Vec::new();
        for (i, &delta) in opts.delta_list.iter().enumerate() {
            let mut cfg = cfg_template.clone();
            cfg.epsilon = eps;
            cfg.delta = delta;
            cfg.n_steps = n_steps;
            cfg.fast_substeps = FastSlowConfig::required_fast_substeps(
                cfg.t_end,
                n_steps,
                eps,
                hyp.fast_lipschitz(),
            );
            cfg.seed = cfg_template.seed.offset((100 + i as u64) * STREAM_SPACING);
            cfg.validate(hyp)?;
            let sampler = FbmSampler::auto(cfg.t_end, cfg.n_fast(), cfg.hurst)?;
            let results: Vec<Result<(Vec<f64>, f64)>> = (0..opts.n_paths_delta as u64)
                .into_par_iter()
                .map(|p| {
                    let (bh, w) = replica_noises(&sampler, &cfg, hyp.dims.m, hyp.dims.r, p)?;
                    let coupled = sde::solve_fast_slow(&cfg, hyp, &bh, &w)?;
                    let aux = sde::khasminskii_auxiliary(&cfg, hyp, &coupled.x, &bh, &w)?;
                    let mut y_gap_sq = vec![0.0_f64; cfg.n_steps + 1];
                    let mut x_gap_sup = 0.0_f64;
                    for k in 0..=cfg.n_steps {
                        y_gap_sq[k] = (0..hyp.dims.d2)
                            .map(|c| (coupled.y.coord(k, c) - aux.y_hat.coord(k, c)).powi(2))
                            .sum();
                        let xg: f64 = (0..hyp.dims.d1)
                            .map(|c| (coupled.x.coord(k, c) - aux.x_hat.coord(k, c)).powi(2))
                            .sum();
                        x_gap_sup = x_gap_sup.max(xg.sqrt());
                    }
                    Ok((y_gap_sq, x_gap_sup))
                })
                .collect();
            let mut y_node_means = vec![0.0_f64; n_steps + 1];
            let mut x_sups = Vec::new();
            let mut count = 0usize;
            for r in results {
                let (ysq, xs) = r?;
                for (k, v) in ysq.iter().enumerate() {
                    y_node_means[k] += v;
                }
                x_sups.push(xs);
                count += 1;
            }
            let y_stat = y_node_means
                .iter()
                .map(|v| v / count as f64)
                .fold(0.0, f64::max);
            yhat_means.push(y_stat);
            xhat_means.push(stats::mean(&x_sups));
        }
        for (name, means) in [
            ("yhat_delta_scaling", &yhat_means),
            ("xhat_delta_scaling", &xhat_means),
        ] {
            let e = scaling_exponent(&opts.delta_list, means)?;
            let pass = e.is_nan() || (e - 1.0).abs() <= 0.25;
            outcomes.push(LemmaOutcome {
                name: name.to_string(),
                pass,
                statistic: e,
                detail: format!("delta sweep {:?} -> {means:?}", opts.delta_list),
                values: means.clone(),
            });
        }
    }

    // Decorrelation of the drift fluctuation: rate at least beta1/2 - 0.2.
    {
        let x0 = cfg_template.x0.clone();
        let mut bbar = vec![0.0; hyp.dims.d1];
        bbar1.eval(0.0, &x0, &mut bbar);
        let s_grid: Vec<f64> = (0..14).map(|k| 2.0 + 0.25 * k as f64).collect();
        let hyp_clone = hyp.clone();
        let x_for_b1 = x0.clone();
        let b1_frozen = move |y: &[f64], out: &mut [f64]| {
            hyp_clone
                .eval_b1(0.0, &x_for_b1, y, out)
                .expect("b1 bound violated inside decorrelation probe");
        };
        let est = averaging::decorrelation_estimate(
            &x0,
            &cfg_template.y0,
            hyp,
            &b1_frozen,
            &bbar,
            &s_grid,
            cfg_template.seed.offset(200 * STREAM_SPACING),
            opts.n_paths_decorrelation,
        );
        let (pass, stat, detail, values) = match est {
            Ok(e) => {
                let gate = hyp.beta1 / 2.0 - 0.2;
                (
                    e.fit.rate >= gate && e.diagonal >= 0.0,
                    e.fit.rate,
                    format!(
                        "rate {:.3} (gate {gate:.3}), r2 {:.3}, diagonal {:.3e}",
                        e.fit.rate, e.fit.r_squared, e.diagonal
                    ),
                    e.j_values.iter().map(|p| p.1).collect(),
                )
            }
            Err(Error::FitFailure(msg)) => {
                // A fluctuation that is identically zero has nothing to
                // decorrelate; degenerate pass.
                (true, f64::NAN, format!("degenerate: {msg}"), Vec::new())
            }
            Err(e) => return Err(e),
        };
        outcomes.push(LemmaOutcome {
            name: "decorrelation_rate".to_string(),
            pass,
            statistic: stat,
            detail,
            values,
        });
    }

    // Stopping-time Chebyshev bound.
    {
        let diags = stopping_diagnostics(
            cfg_template.hurst,
            cfg_template.alpha,
            cfg_template.t_end,
            &[1.0, 2.0, 10.0],
            opts.n_paths_stopping,
            opts.stopping_grid_steps,
            cfg_template.seed.offset(300 * STREAM_SPACING),
        )?;
        let pass = diags.iter().all(|d| d.holds)
            && diags
                .windows(2)
                .all(|w| w[1].chebyshev_bound <= w[0].chebyshev_bound);
        outcomes.push(LemmaOutcome {
            name: "stopping_chebyshev".to_string(),
            pass,
            statistic: diags
                .iter()
                .map(|d| d.empirical_p_tau_lt_t - d.chebyshev_bound)
                .fold(f64::NEG_INFINITY, f64::max),
            detail: diags
                .iter()
                .map(|d| {
                    format!(
                        "R={:.3}: p={:.4} bound={:.4}",
                        d.r, d.empirical_p_tau_lt_t, d.chebyshev_bound
                    )
                })
                .collect::<Vec<_>>()
                .join("; "),
            values: diags.iter().map(|d| d.empirical_p_tau_lt_t).collect(),
        });
    }

    let all_pass = outcomes.iter().all(|o| o.pass);
    Ok(LemmaSuiteReport { outcomes, all_pass })
}

// ---------------------------------------------------------------------
// Stopping-time diagnostics
// ---------------------------------------------------------------------

/// One row of the stopping-time tail check: `tau_R` is the first time the
/// running `(1-alpha)`-norm of `B^H` reaches `R`, so `P(tau_R < T)` is
/// bounded by `E|B^H|^2_{1-alpha,oo,T} / R` (Chebyshev with R > 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoppingDiagnostics {
    pub r: f64,
    pub empirical_p_tau_lt_t: f64,
    pub empirical_se: f64,
    pub chebyshev_bound: f64,
    pub bound_se: f64,
    /// One-sided: `p <= bound + 3 (se_p + se_bound)`.
    pub holds: bool,
}

/// Samples `|B^H|_{1-alpha,oo,T}` over `n_paths` fBm draws and evaluates
/// the Chebyshev bound at `R = multiplier * median` for each multiplier.
pub fn stopping_diagnostics(
    hurst: HurstParam,
    alpha: AlphaParam,
    t_end: f64,
    r_multipliers: &[f64],
    n_paths: usize,
    grid_steps: usize,
    seed: SeedSpec,
) -> Result<Vec<StoppingDiagnostics>> {
    if n_paths < 100 {
        return Err(Error::invalid("need at least 100 paths"));
    }
    let sampler = FbmSampler::auto(t_end, grid_steps, hurst)?;
    let norms: Vec<Result<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = sampler.sample(1, seed.offset(p))?;
            Ok(fraccalc::integrator_norms(&path, alpha).0)
        })
        .collect();
    let norms: Vec<f64> = norms.into_iter().collect::<Result<_>>()?;
    let mut sorted = norms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let squares: Vec<f64> = norms.iter().map(|v| v * v).collect();
    let second_moment = stats::mean(&squares);
    let second_moment_se = stats::std_error(&squares);
    let mut out = Vec::with_capacity(r_multipliers.len());
    for &mult in r_multipliers {
        let r = mult * median;
        let exceed = norms.iter().filter(|&&v| v >= r).count();
        let p = exceed as f64 / n_paths as f64;
        let p_se = (p * (1.0 - p) / n_paths as f64).sqrt();
        let bound = second_moment / r;
        let bound_se = second_moment_se / r;
        out.push(StoppingDiagnostics {
            r,
            empirical_p_tau_lt_t: p,
            empirical_se: p_se,
            chebyshev_bound: bound,
            bound_se,
            holds: p <= bound + 3.0 * (p_se + bound_se),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine {
    Manifest(StudyManifest),
    Row(ConvergenceRow),
}

pub const REPORT_CSV_HEADER: &str =
    "epsilon,delta_used,n_paths,mse_sup,mse_sup_se,mse_alpha,mse_alpha_se,runtime_s";

/// Writes a convergence report. CSV keeps exactly the documented columns
/// and stores the manifest in a `.manifest.json` sidecar; JSONL puts a
/// manifest line before the row lines. Serialization is deterministic:
/// floats use the shortest round-trip representation.
pub fn emit_report(
    report: &ConvergenceReport,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Csv => {
            let mut text = String::from(REPORT_CSV_HEADER);
            text.push('\n');
            for r in &report.rows {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{},{},{},{}",
                    r.epsilon,
                    r.delta_used,
                    r.n_paths,
                    r.mse_sup,
                    r.mse_sup_se,
                    r.mse_alpha,
                    r.mse_alpha_se,
                    r.runtime_s
                );
            }
            std::fs::write(path, text)?;
            let manifest = serde_json::to_string_pretty(&report.manifest)
                .map_err(|e| Error::numeric(format!("manifest serialization: {e}")))?;
            std::fs::write(manifest_sidecar(path), manifest)?;
        }
        ReportFormat::Jsonl => {
            let mut text = String::new();
            let line = serde_json::to_string(&ReportLine::Manifest(report.manifest.clone()))
                .map_err(|e| Error::numeric(format!("manifest serialization: {e}")))?;
            text.push_str(&line);
            text.push('\n');
            for r in &report.rows {
                let line = serde_json::to_string(&ReportLine::Row(r.clone()))
                    .map_err(|e| Error::numeric(format!("row serialization: {e}")))?;
                text.push_str(&line);
                text.push('\n');
            }
            std::fs::write(path, text)?;
        }
    }
    Ok(())
}

fn manifest_sidecar(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".manifest.json");
    std::path::PathBuf::from(os)
}

/// Reads a report written by [`emit_report`]; the CSV form requires its
/// manifest sidecar.
pub fn read_report(format: ReportFormat, path: impl AsRef<Path>) -> Result<ConvergenceReport> {
    let path = path.as_ref();
    match format {
        ReportFormat::Csv => {
            let text = std::fs::read_to_string(path)?;
            let mut lines = text.lines();
            let header = lines.next().ok_or_else(|| Error::invalid("empty report"))?;
            if header != REPORT_CSV_HEADER {
                return Err(Error::invalid(format!(
                    "unexpected csv schema {header:?}; want {REPORT_CSV_HEADER:?}"
                )));
            }
            let mut rows = Vec::new();
            for line in lines {
                if line.trim().is_empty() {
                    continue;
                }
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 8 {
                    return Err(Error::invalid(format!("bad report row {line:?}")));
                }
                let num = |s: &str| -> Result<f64> {
                    s.parse::<f64>()
                        .map_err(|e| Error::invalid(format!("bad number {s:?}: {e}")))
                };
                rows.push(ConvergenceRow {
                    epsilon: num(f[0])?,
                    delta_used: num(f[1])?,
                    n_paths: f[2]
                        .parse()
                        .map_err(|e| Error::invalid(format!("bad n_paths: {e}")))?,
                    mse_sup: num(f[3])?,
                    mse_sup_se: num(f[4])?,
                    mse_alpha: num(f[5])?,
                    mse_alpha_se: num(f[6])?,
                    runtime_s: num(f[7])?,
                });
            }
            let manifest_text = std::fs::read_to_string(manifest_sidecar(path))?;
            let manifest: StudyManifest = serde_json::from_str(&manifest_text)
                .map_err(|e| Error::invalid(format!("bad manifest sidecar: {e}")))?;
            Ok(ConvergenceReport { rows, manifest })
        }
        ReportFormat::Jsonl => {
            let text = std::fs::read_to_string(path)?;
            let mut manifest = None;
            let mut rows = Vec::new();
            for line in text.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: ReportLine = serde_json::from_str(line)
                    .map_err(|e| Error::invalid(format!("bad jsonl line: {e}")))?;
                match parsed {
                    ReportLine::Manifest(m) => manifest = Some(m),
                    ReportLine::Row(r) => rows.push(r),
                }
            }
            Ok(ConvergenceReport {
                rows,
                manifest: manifest
                    .ok_or_else(|| Error::invalid("jsonl report lacks a manifest line"))?,
            })
        }
    }
}

// ---------------------------------------------------------------------
// Self test
// ---------------------------------------------------------------------

/// Runs compiled-in renditions of every module's worked examples and
/// writes one deterministic line per check (no timings, so the output
/// bytes depend only on the master seed). Returns true when all checks
/// pass.
pub fn run_selftest(out: &mut dyn IoWrite, master_seed: u64) -> Result<bool> {
    let mut all = true;
    let emit = |out: &mut dyn IoWrite, line: String, pass: bool, all: &mut bool| -> Result<()> {
        *all &= pass;
        writeln!(out, "{} {}", if pass { "PASS" } else { "FAIL" }, line)?;
        Ok(())
    };
    let seed = SeedSpec::new(master_seed, 0);
    let h75 = HurstParam::new(0.75)?;
    let a30 = AlphaParam::new(0.3)?;

    // noise
    {
        let c = noise::fbm_covariance(2.0, 1.0, h75)?;
        emit(
            out,
            format!("noise.covariance_sqrt2 value={c:.12e}"),
            (c - std::f64::consts::SQRT_2).abs() < 1e-12,
            &mut all,
        )?;
        let path = noise::sample_fbm_cholesky(1.0, 1, h75, 1, seed)?;
        let mut s = crate::rng::GaussianStream::new(seed);
        let z = s.next_gaussian();
        emit(
            out,
            format!("noise.single_increment value={:.12e}", path.scalar(1)),
            path.scalar(1) == z,
            &mut all,
        )?;
        let sampler = FbmSampler::davies_harte(1.0, 16, h75)?;
        let mut sq = Vec::new();
        for p in 0..4_000u64 {
            let b = sampler.sample(1, seed.offset(10 + p))?;
            sq.push(b.scalar(16).powi(2));
        }
        let got = stats::mean(&sq);
        let se = stats::std_error(&sq);
        emit(
            out,
            format!("noise.dh_terminal_variance value={got:.6e} se={se:.3e}"),
            (got - 1.0).abs() < 3.0 * se,
            &mut all,
        )?;
        let w = noise::sample_bm(1.0, 10_000, 1, seed.offset(5))?;
        let qv: f64 = (0..10_000)
            .map(|i| (w.scalar(i + 1) - w.scalar(i)).powi(2))
            .sum();
        emit(
            out,
            format!("noise.bm_quadratic_variation value={qv:.6e}"),
            (qv - 1.0).abs() < 0.05,
            &mut all,
        )?;
    }

    // fraccalc
    {
        let one = GridPath::from_fn(1.0, 512, |_| 1.0)?;
        let i_one = fraccalc::frac_integral_left(&one, 0.5)?;
        emit(
            out,
            format!("fraccalc.integral_of_one value={:.12e}", i_one.scalar(512)),
            (i_one.scalar(512) - std::f64::consts::FRAC_2_SQRT_PI).abs() < 1e-12,
            &mut all,
        )?;
        let lin = GridPath::from_fn(1.0, 1024, |t| t)?;
        let i_lin = fraccalc::frac_integral_left(&lin, 0.5)?;
        emit(
            out,
            format!(
                "fraccalc.integral_power_rule value={:.8e}",
                i_lin.scalar(1024)
            ),
            (i_lin.scalar(1024) - 0.7522527780636751).abs() < 1e-3,
            &mut all,
        )?;
        let f = GridPath::from_fn(1.0, 2048, |t| (2.0 * t).sin())?;
        let inv = fraccalc::weyl_left(&fraccalc::frac_integral_left(&f, 0.4)?, 0.4)?;
        let mut worst = 0.0_f64;
        for i in 1..=2048 {
            worst = worst.max((inv.path.scalar(i) - f.scalar(i)).abs());
        }
        emit(
            out,
            format!("fraccalc.inversion_sup_error value={worst:.3e}"),
            worst <= 1e-2 * f.sup_norm(),
            &mut all,
        )?;
        let t1000 = GridPath::from_fn(1.0, 1000, |t| t)?;
        let young = fraccalc::young_integral_sum(&t1000, &t1000)?;
        emit(
            out,
            format!("fraccalc.young_linear value={young:.12e}"),
            (young - 0.4995).abs() < 1e-12,
            &mut all,
        )?;
        let g = noise::sample_fbm_davies_harte(1.0, 4096, h75, 1, seed.offset(20))?;
        let f = GridPath::from_fn(1.0, 4096, |t| t)?;
        let y = fraccalc::young_integral_sum(&f, &g)?;
        let rs = fraccalc::rs_integral_fractional(&f, &g, a30)?;
        emit(
            out,
            format!("fraccalc.rs_vs_young value={:.3e}", (rs - y).abs()),
            (rs - y).abs() <= 1e-3 * (1.0 + y.abs()),
            &mut all,
        )?;
        let mut bound_ok = 0;
        for s in 0..10u64 {
            let g = noise::sample_fbm_davies_harte(1.0, 512, h75, 1, seed.offset(30 + s))?;
            let f = GridPath::from_fn(1.0, 512, |t| (4.0 * t + s as f64).sin())?;
            if fraccalc::young_bound_check(&f, &g, a30)?.holds {
                bound_ok += 1;
            }
        }
        emit(
            out,
            format!("fraccalc.young_bound value={bound_ok}/10"),
            bound_ok == 10,
            &mut all,
        )?;
        let probe = fraccalc::fernique_moment_probe(h75, a30, 1e-9, 100, seed.offset(50))?;
        emit(
            out,
            format!("fraccalc.fernique_theta0 value={:.9e}", probe.estimate),
            (probe.estimate - std::f64::consts::E).abs() < 1e-6,
            &mut all,
        )?;
    }

    // sde + averaging + harness on the benchmark
    {
        let sys = crate::systems::build("ou-sin")?;
        let cfg = FastSlowConfig {
            epsilon: 0.05,
            delta: delta_schedule(0.05),
            t_end: 1.0,
            n_steps: 50,
            fast_substeps: FastSlowConfig::required_fast_substeps(
                1.0,
                50,
                0.05,
                sys.hyp.fast_lipschitz(),
            ),
            x0: vec![0.5],
            y0: vec![0.0],
            hurst: HurstParam::new(0.7)?,
            alpha: AlphaParam::new(0.35)?,
            seed: seed.offset(100),
        };
        let bh = noise::sample_fbm(1.0, cfg.n_fast(), cfg.hurst, 1, seed.offset(101))?;
        let w = noise::sample_bm(1.0, cfg.n_fast(), 1, seed.offset(102))?;
        let sol = sde::solve_fast_slow(&cfg, &sys.hyp, &bh, &w)?;
        emit(
            out,
            format!("sde.solver_finite value={:.6e}", sol.x.sup_norm()),
            sol.x.sup_norm().is_finite(),
            &mut all,
        )?;
        let aux = sde::khasminskii_auxiliary(&cfg, &sys.hyp, &sol.x, &bh, &w)?;
        emit(
            out,
            format!("sde.delta_snapped value={:.6e}", aux.delta_used),
            (aux.delta_used - cfg.delta_snapped()).abs() < 1e-15,
            &mut all,
        )?;

        let opts = averaging::MeasureOptions::defaults(&sys.hyp, 4_000, seed.offset(110));
        let measure = averaging::sample_invariant_measure(&[0.8], &sys.hyp, &opts)?;
        let mean = measure.component_mean(0);
        let var = measure.component_variance(0);
        emit(
            out,
            format!("averaging.invariant_mean value={mean:.6e}"),
            (mean - 0.8).abs() < 0.05,
            &mut all,
        )?;
        emit(
            out,
            format!("averaging.invariant_variance value={var:.6e}"),
            (var - 1.0).abs() < 0.07,
            &mut all,
        )?;
        let est = averaging::averaged_drift(&sys.hyp, &measure, 0.0, &[0.8], false)?;
        let want = crate::systems::OU_SIN_AVERAGED_COEF * 0.8_f64.sin();
        emit(
            out,
            format!(
                "averaging.drift value={:.6e} want={want:.6e}",
                est.value[0]
            ),
            (est.value[0] - want).abs() < 3.0 * est.std_error[0] + 2e-3,
            &mut all,
        )?;
        let fit = averaging::contraction_estimate(
            &[0.5],
            &[3.0],
            &[1.0],
            &sys.hyp,
            3.0,
            200,
            seed.offset(120),
        )?;
        emit(
            out,
            format!("averaging.contraction_rate value={:.4}", fit.rate),
            fit.rate >= 1.8 && fit.rate <= 2.2,
            &mut all,
        )?;
        let chk = sde::time_shift_scaling_check(
            &FastSlowConfig {
                epsilon: 0.1,
                delta: 0.3,
                y0: vec![2.5],
                seed: seed.offset(130),
                ..cfg.clone()
            },
            &sys.hyp,
            1,
            2_000,
        )?;
        emit(
            out,
            format!("sde.time_shift_law p={:.4}", chk.p_value),
            chk.pass,
            &mut all,
        )?;

        // Convergence smoke test: the y-free control is exactly zero and
        // the benchmark error shrinks with eps.
        let yfree = crate::systems::build("ou-yfree")?;
        let drift = yfree.closed_form_averaged.clone().unwrap();
        let report = run_convergence_study(
            &FastSlowConfig {
                seed: seed.offset(140),
                ..cfg.clone()
            },
            &yfree.hyp,
            drift.as_ref(),
            &[0.1, 0.02],
            20,
            "ou-yfree",
        )?;
        let worst = report.rows.iter().map(|r| r.mse_sup).fold(0.0, f64::max);
        emit(
            out,
            format!("harness.yfree_control value={worst:.3e}"),
            worst <= 1e-20,
            &mut all,
        )?;
        let drift = sys.closed_form_averaged.clone().unwrap();
        let report = run_convergence_study(
            &FastSlowConfig {
                seed: seed.offset(150),
                ..cfg.clone()
            },
            &sys.hyp,
            drift.as_ref(),
            &[0.1, 0.01],
            48,
            "ou-sin",
        )?;
        emit(
            out,
            format!(
                "harness.mse_decay values={:.4e},{:.4e}",
                report.rows[0].mse_sup, report.rows[1].mse_sup
            ),
            report.rows[1].mse_sup < report.rows[0].mse_sup,
            &mut all,
        )?;

        let diag =
            stopping_diagnostics(h75, a30, 1.0, &[1.0, 10.0], 1_000, 128, seed.offset(160))?;
        emit(
            out,
            format!(
                "harness.stopping_chebyshev p={:.4} bound={:.4}",
                diag[0].empirical_p_tau_lt_t, diag[0].chebyshev_bound
            ),
            diag.iter().all(|d| d.holds),
            &mut all,
        )?;
    }

    Ok(all)
}
