//! Numerical toolkit for mixed fast-slow stochastic systems driven by
//! fractional Brownian motion (Hurst `H > 1/2`) and standard Brownian
//! motion.
//!
//! The crate synthesizes both noises exactly, solves the two-time-scale
//! system, builds the averaged equation from the frozen equation's
//! invariant measure, and verifies mean-square convergence of the slow
//! component to the averaged one as the time-scale ratio vanishes,
//! together with the supporting quantitative estimates (contraction and
//! ergodicity rates of the fast dynamics, Khasminskii block-process
//! scalings, stopping-time tail bounds).
//!
//! Modules:
//!
//! * [`noise`] — exact fBm (Cholesky / Davies-Harte) and Bm generators.
//! * [`fraccalc`] — fractional integrals, Weyl derivatives, the
//!   generalized Riemann-Stieltjes integral, and the pathwise norms.
//! * [`sde`] — hybrid Euler solvers for the coupled, frozen, averaged and
//!   Khasminskii auxiliary systems.
//! * [`averaging`] — invariant-measure sampling and the averaged drift,
//!   plus decay-rate estimators.
//! * [`harness`] — the convergence study, the lemma suite, and report
//!   emission.
//! * [`systems`] — the compiled-in benchmark registry.
//!
//! Everything is deterministic given a master seed: randomness flows
//! through named counter-based streams and Monte Carlo reductions run in
//! a fixed order, so results are identical across thread counts.

// Negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
// along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops here usually walk several arrays in lockstep.
#![allow(clippy::needless_range_loop)]

pub mod averaging;
pub mod config;
pub mod error;
pub mod fraccalc;
pub mod grid;
pub mod harness;
pub mod noise;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod systems;

pub use error::{Error, Result};
pub use grid::GridPath;
pub use rng::SeedSpec;

/// Build identifier embedded in run manifests.
pub const BUILD_DESCRIBE: &str = env!("FASTSLOW_GIT_DESCRIBE");
