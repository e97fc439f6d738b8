//! Compiled-in benchmark system registry.
//!
//! Coefficients are compiled in rather than scripted so the core carries
//! no interpreter; custom systems enter through [`HypothesisSet::new`]
//! directly.
//!
//! Registered systems:
//!
//! * `ou-sin` — the reference benchmark. Slow drift `b1 = sin(y)`, slow
//!   diffusion `sigma1(t,x) = 0.5 (1 + 0.1 cos x)`, fast
//!   Ornstein-Uhlenbeck block `b2 = -(y - x)`, `sigma2 = sqrt(2)`. The
//!   frozen equation's invariant law is `N(x, 1)`, so the averaged drift
//!   is `exp(-1/2) sin(x)` in closed form. Declared constants:
//!   `beta = gamma = 1`, `beta1 = beta2 = 2`, `|b1| <= 1`.
//! * `ou-yfree` — identical fast block but `b1 = exp(-1/2) sin(x)`
//!   (no fast variable in the drift): averaging is exactly the identity,
//!   so coupled and averaged slow recursions coincide bit for bit.
//! * `ou-sin-ydiff` — negative control with a fast-variable-dependent
//!   slow diffusion `sigma1 + 0.25 tanh(y)`. Strong averaging is known to
//!   fail for such diffusions; the convergence study plateaus instead of
//!   vanishing. Not hypothesis-conforming.

use crate::error::{Error, Result};
use crate::sde::{AveragedDrift, HypothesisSet, LipschitzConstants, SystemDims};
use std::sync::Arc;

/// Averaged drift of the `ou-sin` benchmark: `E_{N(x,1)} sin = e^{-1/2} sin(x)`.
pub const OU_SIN_AVERAGED_COEF: f64 = 0.606_530_659_712_633_4;

/// One registry entry: coefficients, declared constants, and (when known)
/// the closed-form averaged drift.
#[derive(Clone)]
pub struct BenchmarkSystem {
    pub name: &'static str,
    pub description: &'static str,
    pub hyp: HypothesisSet,
    /// Closed-form averaged drift, when the system ships one.
    pub closed_form_averaged: Option<Arc<dyn AveragedDrift>>,
    /// False for deliberate negative controls that violate the standing
    /// assumptions.
    pub conforming: bool,
}

/// Names of all registered systems.
pub fn registry() -> &'static [&'static str] {
    &["ou-sin", "ou-yfree", "ou-sin-ydiff"]
}

fn dims1() -> SystemDims {
    SystemDims {
        d1: 1,
        d2: 1,
        m: 1,
        r: 1,
    }
}

fn ou_lipschitz() -> LipschitzConstants {
    LipschitzConstants {
        grad_sigma1: 0.05,
        grad_sigma1_holder: 0.05,
        sigma1_time: 0.0,
        sigma1_growth: 0.55,
        b1: 1.0,
        fast: 2.0,
        growth: 1.0 + std::f64::consts::SQRT_2,
    }
}

/// Builds a registered benchmark system by name.
pub fn build(name: &str) -> Result<BenchmarkSystem> {
    match name {
        "ou-sin" => {
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
                Some(ou_lipschitz()),
            )?;
            Ok(BenchmarkSystem {
                name: "ou-sin",
                description: "sin drift averaged over an OU fast block; averaged drift exp(-1/2) sin(x)",
                hyp,
                closed_form_averaged: Some(Arc::new(|_t: f64, x: &[f64], out: &mut [f64]| {
                    out[0] = OU_SIN_AVERAGED_COEF * x[0].sin();
                })),
                conforming: true,
            })
        }
        "ou-yfree" => {
            let hyp = HypothesisSet::new(
                dims1(),
                |_t, x, _y, out| out[0] = OU_SIN_AVERAGED_COEF * x[0].sin(),
                |_t, x, _y, out| out[0] = 0.5 * (1.0 + 0.1 * x[0].cos()),
                |x, y, out| out[0] = x[0] - y[0],
                |_x, _y, out| out[0] = std::f64::consts::SQRT_2,
                1.0,
                1.0,
                2.0,
                2.0,
                1.0,
                Some(ou_lipschitz()),
            )?;
            Ok(BenchmarkSystem {
                name: "ou-yfree",
                description: "slow drift free of the fast variable; averaging is the identity",
                hyp,
                closed_form_averaged: Some(Arc::new(|_t: f64, x: &[f64], out: &mut [f64]| {
                    out[0] = OU_SIN_AVERAGED_COEF * x[0].sin();
                })),
                conforming: true,
            })
        }
        "ou-sin-ydiff" => {
            let hyp = HypothesisSet::new(
                dims1(),
                |_t, _x, y, out| out[0] = y[0].sin(),
                |_t, x, y, out| {
                    // Fast-variable leak into the slow diffusion; y is
                    // empty when called from the averaged solver.
                    let yv = if y.is_empty() { 0.0 } else { y[0] };
                    out[0] = 0.5 * (1.0 + 0.1 * x[0].cos()) + 0.25 * yv.tanh();
                },
                |x, y, out| out[0] = x[0] - y[0],
                |_x, _y, out| out[0] = std::f64::consts::SQRT_2,
                1.0,
                1.0,
                2.0,
                2.0,
                1.0,
                None,
            )?;
            Ok(BenchmarkSystem {
                name: "ou-sin-ydiff",
                description: "negative control: fast-variable-dependent slow diffusion",
                hyp,
                closed_form_averaged: Some(Arc::new(|_t: f64, x: &[f64], out: &mut [f64]| {
                    out[0] = OU_SIN_AVERAGED_COEF * x[0].sin();
                })),
                conforming: false,
            })
        }
        other => Err(Error::invalid(format!(
            "unknown system {other:?}; registered: {}",
            registry().join(", ")
        ))),
    }
}
