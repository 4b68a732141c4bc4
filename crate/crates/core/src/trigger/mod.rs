//! Decentralized trigger rules and minimum inter-event time bounds.
//!
//! Each agent compares its drift since the last broadcast, `|x_i - x_i^k|`,
//! against a fraction `sigma` of its own residual. The rule uses only the
//! agent's state, its local cost, the held coupling gradient and a
//! Lipschitz bound on `grad g`, so it can be checked without any knowledge
//! of the other agents.

mod self_triggered;

pub use self_triggered::{
    schedule_next, self_triggered_next, IntegratorConfig, Schedule, SelfTriggerOutcome,
};

use serde::{Deserialize, Serialize};

use crate::dynamics::{residuals, SupervisorSnapshot};
use crate::error::{Error, Result};
use crate::problem::{BoxConstraint, NetworkProblem};

pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

fn default_zero_tol() -> f64 {
    DEFAULT_ZERO_TOL
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerParams {
    pub sigma: f64,
    pub lambda: f64,
    /// Lipschitz bound on `grad g` (over the sublevel set, or over the boxes).
    pub lipschitz: f64,
    /// Bound on the local second derivatives.
    pub hessian_bound: f64,
    /// Residuals at or below this magnitude count as zero.
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
}

impl TriggerParams {
    pub fn new(sigma: f64, lambda: f64, lipschitz: f64, hessian_bound: f64) -> Result<Self> {
        let p = TriggerParams {
            sigma,
            lambda,
            lipschitz,
            hessian_bound,
            zero_tol: DEFAULT_ZERO_TOL,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must lie in (0, 1), got {}",
                self.sigma
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.lipschitz >= 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lipschitz bound must be finite and nonnegative, got {}",
                self.lipschitz
            )));
        }
        if !(self.hessian_bound >= 0.0 && self.hessian_bound.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "hessian bound must be finite and nonnegative, got {}",
                self.hessian_bound
            )));
        }
        if !(self.zero_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "zero tolerance must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Whether the constrained inter-event bound applies (`lambda < 1/H`).
    pub fn constrained_miet_applies(&self) -> bool {
        self.lambda * self.hessian_bound < 1.0
    }
}

/// Shared predicate: `scale * drift >= sigma |residual|` with a nonzero residual.
fn fires(drift: f64, residual: f64, scale: f64, params: &TriggerParams) -> bool {
    residual.abs() > params.zero_tol && scale * drift >= params.sigma * residual.abs()
}

/// Unconstrained rule: request an update once `L |x_i - x_i^k| >= sigma |z_i|`, `z_i != 0`.
pub fn check_unconstrained(
    x_i: f64,
    anchor_i: f64,
    held_gradient_i: f64,
    local_gradient_i: f64,
    params: &TriggerParams,
) -> bool {
    let z = local_gradient_i + held_gradient_i;
    fires((x_i - anchor_i).abs(), z, params.lipschitz, params)
}

/// Constrained rule: `lambda L |x_i - x_i^k| >= sigma |P_i(x_i - lambda z_i) - x_i|`, nonzero.
pub fn check_constrained(
    x_i: f64,
    anchor_i: f64,
    held_gradient_i: f64,
    local_gradient_i: f64,
    bx: &BoxConstraint,
    params: &TriggerParams,
) -> bool {
    let zbar = bx.project(x_i - params.lambda * (local_gradient_i + held_gradient_i)) - x_i;
    fires(
        (x_i - anchor_i).abs(),
        zbar,
        params.lambda * params.lipschitz,
        params,
    )
}

/// Per-agent drift and residual relative to the current snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct TriggerSignal {
    pub drift: Vec<f64>,
    pub residual: Vec<f64>,
    pub constrained: bool,
}

impl TriggerSignal {
    pub fn compute(
        p: &NetworkProblem,
        x: &[f64],
        snap: &SupervisorSnapshot,
        params: &TriggerParams,
        constrained: bool,
    ) -> Result<Self> {
        let residual = residuals(p, x, &snap.held_gradient, params.lambda, constrained)?;
        let drift = x
            .iter()
            .zip(&snap.anchor_state)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(TriggerSignal {
            drift,
            residual,
            constrained,
        })
    }

    /// Per-agent update requests.
    pub fn requests(&self, params: &TriggerParams) -> Vec<bool> {
        let scale = if self.constrained {
            params.lambda * params.lipschitz
        } else {
            params.lipschitz
        };
        self.drift
            .iter()
            .zip(&self.residual)
            .map(|(d, r)| fires(*d, *r, scale, params))
            .collect()
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual.iter().map(|r| r * r).sum::<f64>().sqrt()
    }
}

/// `(1/(lambda H)) ln(sigma lambda H / L + 1)`.
pub fn miet_unconstrained(params: &TriggerParams) -> Result<f64> {
    params.validate()?;
    if !(params.hessian_bound > 0.0) {
        return Err(Error::UndefinedFormula(
            "hessian bound must be positive; use the affine limit".into(),
        ));
    }
    if !(params.lipschitz > 0.0) {
        return Err(Error::UndefinedFormula(
            "lipschitz bound must be positive".into(),
        ));
    }
    let a = params.lambda * params.hessian_bound;
    Ok((params.sigma * a / params.lipschitz).ln_1p() / a)
}

/// `H -> 0` limit of [`miet_unconstrained`]: `sigma / L`.
pub fn miet_unconstrained_affine(params: &TriggerParams) -> Result<f64> {
    params.validate()?;
    if !(params.lipschitz > 0.0) {
        return Err(Error::UndefinedFormula(
            "lipschitz bound must be positive".into(),
        ));
    }
    Ok(params.sigma / params.lipschitz)
}

/// `ln(sigma / (lambda L) + 1)`, valid for `lambda < 1/H`.
pub fn miet_constrained(params: &TriggerParams) -> Result<f64> {
    params.validate()?;
    if !params.constrained_miet_applies() {
        return Err(Error::Precondition(format!(
            "lambda = {} must be below 1/H = {}",
            params.lambda,
            1.0 / params.hessian_bound
        )));
    }
    if !(params.lipschitz > 0.0) {
        return Err(Error::UndefinedFormula(
            "lipschitz bound must be positive".into(),
        ));
    }
    Ok((params.sigma / (params.lambda * params.lipschitz)).ln_1p())
}

/// Upper bound on `|x_i - x_i^k| / |z_i|` after `elapsed` seconds:
/// `(e^{rate * elapsed} - 1) / rate`, with limit `elapsed` as `rate -> 0`.
pub fn ratio_bound(rate: f64, elapsed: f64) -> f64 {
    if rate == 0.0 {
        elapsed
    } else {
        (rate * elapsed).exp_m1() / rate
    }
}
