//! Command-line entry point: noise synthesis, pathwise integration,
//! fast-slow simulation, frozen-equation ergodics, the convergence study,
//! the lemma suite, and the self test.
//!
//! Exit codes: 0 success, 2 completed with failed checks, 1 execution
//! error, 64 usage or configuration error.

use clap::{Parser, Subcommand, ValueEnum};
use fastslow::averaging::{self, MeasureOptions};
use fastslow::config;
use fastslow::error::Error;
use fastslow::fraccalc::{self, AlphaParam};
use fastslow::grid::GridPath;
use fastslow::harness::{self, LemmaSuiteOptions, ReportFormat};
use fastslow::noise::{self, HurstParam};
use fastslow::rng::SeedSpec;
use fastslow::sde;
use fastslow::systems;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_RUN_ERROR: u8 = 1;
const EXIT_CHECKS_FAILED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "fastslow",
    about = "Mixed fast-slow systems driven by fractional Brownian motion: noise synthesis, fractional calculus, averaging experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FbmMethod {
    Cholesky,
    DaviesHarte,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum IntegrateMethod {
    Fractional,
    Young,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DriftMode {
    ClosedForm,
    Sampled,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a fractional Brownian motion path to CSV.
    Fbm {
        #[arg(long)]
        hurst: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        stream: u64,
        #[arg(long, value_enum)]
        method: Option<FbmMethod>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate f against g along a path, both by the fractional-calculus
    /// route and by the left-point Young sum; prints JSON lines.
    Integrate {
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        g: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "both")]
        method: IntegrateMethod,
    },
    /// Solve one fast-slow replica plus its Khasminskii auxiliaries and
    /// the averaged equation; writes X/Y/Xhat/Yhat/Xbar CSVs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the invariant measure of the frozen equation.
    Frozen {
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        #[arg(long, default_value = "ou-sin")]
        system: String,
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Record every THIN-th Euler step.
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average the slow drift over a stored empirical measure.
    Average {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long, default_value = "ou-sin")]
        system: String,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        #[arg(long, default_value_t = false)]
        allow_x_mismatch: bool,
    },
    /// Mean-square convergence study over an epsilon sweep.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05, 0.02, 0.01])]
        eps: Vec<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long, value_enum, default_value = "closed-form")]
        drift_mode: DriftMode,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantitative lemma suite on a benchmark config.
    Lemmas {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compiled-in worked-example suite; deterministic report.
    Selftest {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error value too.
            let _ = e.print();
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_RUN_ERROR,
            }
        }
    };
    ExitCode::from(code)
}

/// FASTSLOW_THREADS caps the rayon pool; default is the available
/// parallelism. Results do not depend on the choice.
fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("FASTSLOW_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::invalid(format!("FASTSLOW_THREADS must be an integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::invalid("FASTSLOW_THREADS must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn write_manifest(out: &Path, body: serde_json::Value) -> Result<(), Error> {
    let mut os = out.as_os_str().to_owned();
    os.push(".manifest.json");
    let text = serde_json::to_string_pretty(&body)
        .map_err(|e| Error::numeric(format!("manifest serialization: {e}")))?;
    std::fs::write(PathBuf::from(os), text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Fbm {
            hurst,
            steps,
            horizon,
            dim,
            seed,
            stream,
            method,
            out,
        } => {
            let h = HurstParam::new(hurst)?;
            let spec = SeedSpec::new(seed, stream);
            let method_name;
            let path = match method {
                Some(FbmMethod::Cholesky) => {
                    method_name = "cholesky";
                    noise::sample_fbm_cholesky(horizon, steps, h, dim, spec)?
                }
                Some(FbmMethod::DaviesHarte) => {
                    method_name = "davies-harte";
                    noise::sample_fbm_davies_harte(horizon, steps, h, dim, spec)?
                }
                None => {
                    method_name = if steps > 512 { "davies-harte" } else { "cholesky" };
                    noise::sample_fbm(horizon, steps, h, dim, spec)?
                }
            };
            path.write_csv(&out)?;
            write_manifest(
                &out,
                json!({
                    "command": "fbm",
                    "hurst": hurst,
                    "steps": steps,
                    "horizon": horizon,
                    "dim": dim,
                    "master_seed": seed,
                    "stream_id": stream,
                    "method": method_name,
                    "build": fastslow::BUILD_DESCRIBE,
                }),
            )?;
            println!("wrote {} nodes to {}", path.n_nodes(), out.display());
            Ok(EXIT_OK)
        }

        Command::Integrate { f, g, alpha, method } => {
            let fp = GridPath::read_csv(&f)?;
            let gp = GridPath::read_csv(&g)?;
            let a = AlphaParam::new(alpha)?;
            println!(
                "{}",
                json!({
                    "manifest": {
                        "command": "integrate",
                        "f": f.display().to_string(),
                        "g": g.display().to_string(),
                        "alpha": alpha,
                        "build": fastslow::BUILD_DESCRIBE,
                    }
                })
            );
            if method != IntegrateMethod::Fractional {
                let young = fraccalc::young_integral_sum(&fp, &gp)?;
                println!("{}", json!({ "method": "young", "value": young }));
            }
            if method != IntegrateMethod::Young {
                let rs = fraccalc::rs_integral_fractional(&fp, &gp, a)?;
                println!("{}", json!({ "method": "fractional", "value": rs }));
            }
            let chk = fraccalc::young_bound_check(&fp, &gp, a)?;
            println!(
                "{}",
                json!({
                    "young_bound": { "lhs": chk.lhs, "rhs": chk.rhs, "holds": chk.holds }
                })
            );
            Ok(EXIT_OK)
        }

        Command::Simulate { config, out } => {
            let file = config::load(&config)?;
            let (cfg, sys) = file.realize()?;
            std::fs::create_dir_all(&out)?;
            let bh =
                noise::sample_fbm(cfg.t_end, cfg.n_fast(), cfg.hurst, sys.hyp.dims.m, cfg.seed)?;
            let w = noise::sample_bm(cfg.t_end, cfg.n_fast(), sys.hyp.dims.r, cfg.seed.offset(1))?;
            let sol = sde::solve_fast_slow(&cfg, &sys.hyp, &bh, &w)?;
            let aux = sde::khasminskii_auxiliary(&cfg, &sys.hyp, &sol.x, &bh, &w)?;
            let drift = sys
                .closed_form_averaged
                .clone()
                .ok_or_else(|| Error::invalid("system ships no averaged drift"))?;
            let avg = sde::solve_averaged(&cfg, &sys.hyp, drift.as_ref(), &bh)?;
            sol.x.write_csv(out.join("X.csv"))?;
            sol.y.write_csv(out.join("Y.csv"))?;
            aux.x_hat.write_csv(out.join("Xhat.csv"))?;
            aux.y_hat.write_csv(out.join("Yhat.csv"))?;
            avg.x.write_csv(out.join("Xbar.csv"))?;
            let manifest = format!(
                "fastslow simulate run manifest\n\
                 system = {}\n\
                 epsilon = {}\n\
                 delta_requested = {}\n\
                 delta_used = {}\n\
                 t_horizon = {}\n\
                 n_steps = {}\n\
                 fast_substeps = {}\n\
                 hurst = {}\n\
                 alpha = {}\n\
                 x0 = {:?}\n\
                 y0 = {:?}\n\
                 master_seed = {}\n\
                 base_stream = {}\n\
                 fbm_stream = {}\n\
                 bm_stream = {}\n\
                 increment_checksum = {:#018x}\n\
                 build = {}\n",
                sys.name,
                cfg.epsilon,
                cfg.delta,
                aux.delta_used,
                cfg.t_end,
                cfg.n_steps,
                cfg.fast_substeps,
                cfg.hurst.value(),
                cfg.alpha.value(),
                cfg.x0,
                cfg.y0,
                cfg.seed.master_seed,
                cfg.seed.stream_id,
                cfg.seed.stream_id,
                cfg.seed.stream_id + 1,
                sol.increment_checksum,
                fastslow::BUILD_DESCRIBE,
            );
            std::fs::write(out.join("manifest.txt"), manifest)?;
            println!("wrote X/Y/Xhat/Yhat/Xbar and manifest to {}", out.display());
            Ok(EXIT_OK)
        }

        Command::Frozen {
            x,
            system,
            burn_in,
            horizon,
            thin,
            seed,
            out,
        } => {
            let sys = systems::build(&system)?;
            let defaults = MeasureOptions::defaults(&sys.hyp, 4_000, SeedSpec::new(seed, 0));
            let opts = MeasureOptions {
                burn_in: burn_in.unwrap_or(defaults.burn_in),
                horizon: horizon.unwrap_or(defaults.horizon),
                thinning: thin.unwrap_or(defaults.thinning),
                seed: SeedSpec::new(seed, 0),
            };
            let measure = averaging::sample_invariant_measure(&x, &sys.hyp, &opts)?;
            measure.write_csv(&out)?;
            write_manifest(
                &out,
                json!({
                    "command": "frozen",
                    "system": system,
                    "x": x,
                    "burn_in": opts.burn_in,
                    "horizon": opts.horizon,
                    "thinning": opts.thinning,
                    "master_seed": seed,
                    "n_samples": measure.len(),
                    "build": fastslow::BUILD_DESCRIBE,
                }),
            )?;
            println!("wrote {} samples to {}", measure.len(), out.display());
            Ok(EXIT_OK)
        }

        Command::Average {
            measure,
            system,
            t,
            x,
            allow_x_mismatch,
        } => {
            let sys = systems::build(&system)?;
            let m = averaging::EmpiricalMeasure::read_csv(&measure)?;
            let est = averaging::averaged_drift(&sys.hyp, &m, t, &x, allow_x_mismatch)?;
            println!(
                "{}",
                json!({
                    "manifest": {
                        "command": "average",
                        "system": system,
                        "measure": measure.display().to_string(),
                        "t": t,
                        "x": x,
                        "n_samples": est.n_samples,
                        "build": fastslow::BUILD_DESCRIBE,
                    }
                })
            );
            println!(
                "{}",
                json!({ "bbar1": est.value, "std_error": est.std_error })
            );
            Ok(EXIT_OK)
        }

        Command::Converge {
            config,
            eps,
            paths,
            drift_mode,
            format,
            out,
        } => {
            let file = config::load(&config)?;
            let (cfg, sys) = file.realize()?;
            let n_paths = paths.unwrap_or(file.experiment.n_paths);
            let drift: std::sync::Arc<dyn sde::AveragedDrift> = match drift_mode {
                DriftMode::ClosedForm => sys
                    .closed_form_averaged
                    .clone()
                    .ok_or_else(|| Error::invalid("system ships no closed-form averaged drift"))?,
                DriftMode::Sampled => std::sync::Arc::new(sampled_drift_table(&cfg, &sys)?),
            };
            let report = harness::run_convergence_study(
                &cfg,
                &sys.hyp,
                drift.as_ref(),
                &eps,
                n_paths,
                sys.name,
            )?;
            let fmt = match format {
                OutFormat::Csv => ReportFormat::Csv,
                OutFormat::Jsonl => ReportFormat::Jsonl,
            };
            harness::emit_report(&report, fmt, &out)?;
            for row in &report.rows {
                println!(
                    "eps={:<6} delta={:<7.4} mse_sup={:.4e} (se {:.1e}) mse_alpha={:.4e} (se {:.1e}) [{:.2}s]",
                    row.epsilon,
                    row.delta_used,
                    row.mse_sup,
                    row.mse_sup_se,
                    row.mse_alpha,
                    row.mse_alpha_se,
                    row.runtime_s
                );
            }
            for aborted in &report.manifest.aborted_rows {
                println!(
                    "eps={:<6} ABORTED ({} replica blow-ups)",
                    aborted.epsilon, aborted.blow_ups
                );
            }
            let ok = convergence_checks_pass(&report);
            println!(
                "decay check: {} (report written to {})",
                if ok { "PASS" } else { "FAIL" },
                out.display()
            );
            Ok(if ok { EXIT_OK } else { EXIT_CHECKS_FAILED })
        }

        Command::Lemmas { config, out } => {
            let file = config::load(&config)?;
            let (cfg, sys) = file.realize()?;
            let drift = sys
                .closed_form_averaged
                .clone()
                .ok_or_else(|| Error::invalid("system ships no averaged drift"))?;
            let opts = LemmaSuiteOptions::default();
            let report = harness::run_lemma_suite(&cfg, &sys.hyp, drift.as_ref(), &opts)?;
            for o in &report.outcomes {
                println!(
                    "{} {:<28} statistic={:<12.4} {}",
                    if o.pass { "PASS" } else { "FAIL" },
                    o.name,
                    o.statistic,
                    o.detail
                );
            }
            if let Some(out) = out {
                let text = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::numeric(format!("report serialization: {e}")))?;
                std::fs::write(&out, text)?;
                println!("report written to {}", out.display());
            }
            Ok(if report.all_pass {
                EXIT_OK
            } else {
                EXIT_CHECKS_FAILED
            })
        }

        Command::Selftest { seed, out } => {
            let mut buffer = Vec::new();
            let pass = harness::run_selftest(&mut buffer, seed)?;
            print!("{}", String::from_utf8_lossy(&buffer));
            if let Some(out) = out {
                std::fs::write(&out, &buffer)?;
                write_manifest(
                    &out,
                    json!({
                        "command": "selftest",
                        "master_seed": seed,
                        "build": fastslow::BUILD_DESCRIBE,
                    }),
                )?;
            }
            println!("selftest: {}", if pass { "PASS" } else { "FAIL" });
            Ok(if pass { EXIT_OK } else { EXIT_CHECKS_FAILED })
        }
    }
}

/// Tabulated averaged drift for sampled-mode experiments. The x-grid
/// covers the slow range observed in a pilot run with 20% margin.
fn sampled_drift_table(
    cfg: &sde::FastSlowConfig,
    sys: &systems::BenchmarkSystem,
) -> Result<averaging::DriftTable, Error> {
    if sys.hyp.dims.d1 != 1 {
        return Err(Error::invalid(
            "sampled drift mode is implemented for scalar slow states",
        ));
    }
    // Pilot: a handful of coupled replicas at the template epsilon.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in 0..8u64 {
        let bh = noise::sample_fbm(
            cfg.t_end,
            cfg.n_fast(),
            cfg.hurst,
            sys.hyp.dims.m,
            cfg.seed.offset(7_000_000 + 2 * p),
        )?;
        let w = noise::sample_bm(
            cfg.t_end,
            cfg.n_fast(),
            sys.hyp.dims.r,
            cfg.seed.offset(7_000_001 + 2 * p),
        )?;
        let sol = sde::solve_fast_slow(cfg, &sys.hyp, &bh, &w)?;
        for k in 0..=sol.x.n_steps() {
            lo = lo.min(sol.x.scalar(k));
            hi = hi.max(sol.x.scalar(k));
        }
    }
    let margin = 0.2 * (hi - lo).max(0.5);
    let (lo, hi) = (lo - margin, hi + margin);
    let x_grid: Vec<f64> = (0..33).map(|i| lo + (hi - lo) * i as f64 / 32.0).collect();
    averaging::DriftTable::from_invariant_sampling(
        &sys.hyp,
        &[0.0],
        &x_grid,
        4_000,
        cfg.seed.offset(8_000_000),
    )
}

/// Decay verdict used for the converge exit code: both error metrics must
/// shrink from the largest to the smallest epsilon beyond the combined
/// 95% confidence half-widths, with no aborted rows.
fn convergence_checks_pass(report: &harness::ConvergenceReport) -> bool {
    if !report.manifest.aborted_rows.is_empty() || report.rows.len() < 2 {
        return false;
    }
    let first = &report.rows[0];
    let last = &report.rows[report.rows.len() - 1];
    let sup_ok = last.mse_sup + 1.96 * last.mse_sup_se < first.mse_sup - 1.96 * first.mse_sup_se;
    let alpha_ok =
        last.mse_alpha + 1.96 * last.mse_alpha_se < first.mse_alpha - 1.96 * first.mse_alpha_se;
    // The exactly-zero control (y-free drift) is also a pass.
    let all_zero = report
        .rows
        .iter()
        .all(|r| r.mse_sup == 0.0 && r.mse_alpha == 0.0);
    all_zero || (sup_ok && alpha_ok)
}
