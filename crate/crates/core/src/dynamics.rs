//! Vector fields of the continuous and event-triggered flows.
//!
//! Local gradients are always evaluated at the current state; only the
//! coupling gradient is held between supervisor broadcasts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{check_dim, NetworkProblem};

/// Coupling-gradient information broadcast by the supervisor at `time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisorSnapshot {
    pub anchor_state: Vec<f64>,
    pub held_gradient: Vec<f64>,
    pub time: f64,
    pub sequence: u64,
}

impl SupervisorSnapshot {
    pub fn capture(p: &NetworkProblem, x: &[f64], time: f64, sequence: u64) -> Result<Self> {
        Ok(SupervisorSnapshot {
            anchor_state: x.to_vec(),
            held_gradient: p.grad_coupling(x)?,
            time,
            sequence,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    ContinuousUnconstrained,
    EventUnconstrained,
    ContinuousConstrained,
    EventConstrained,
}

impl FlowKind {
    pub fn is_event(self) -> bool {
        matches!(
            self,
            FlowKind::EventUnconstrained | FlowKind::EventConstrained
        )
    }

    pub fn is_constrained(self) -> bool {
        matches!(
            self,
            FlowKind::ContinuousConstrained | FlowKind::EventConstrained
        )
    }

    pub fn continuous_counterpart(self) -> FlowKind {
        if self.is_constrained() {
            FlowKind::ContinuousConstrained
        } else {
            FlowKind::ContinuousUnconstrained
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FlowKind::ContinuousUnconstrained => "continuous-unconstrained",
            FlowKind::EventUnconstrained => "event-unconstrained",
            FlowKind::ContinuousConstrained => "continuous-constrained",
            FlowKind::EventConstrained => "event-constrained",
        }
    }
}

impl std::fmt::Display for FlowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )))
    }
}

/// Per-agent residuals against a given coupling gradient.
///
/// Unconstrained: `z_i = f_i'(x_i) + h_i`. Constrained:
/// `z_i = P_i(x_i - lambda (f_i'(x_i) + h_i)) - x_i`.
pub fn residuals(
    p: &NetworkProblem,
    x: &[f64],
    coupling_grad: &[f64],
    lambda: f64,
    constrained: bool,
) -> Result<Vec<f64>> {
    check_dim(p.n(), x.len())?;
    check_dim(p.n(), coupling_grad.len())?;
    if constrained {
        let boxes = p.require_boxes()?;
        Ok(p.costs()
            .iter()
            .zip(boxes)
            .zip(x.iter().zip(coupling_grad))
            .map(|((f, b), (xi, hi))| b.project(xi - lambda * (f.grad(*xi) + hi)) - xi)
            .collect())
    } else {
        Ok(p.costs()
            .iter()
            .zip(x.iter().zip(coupling_grad))
            .map(|(f, (xi, hi))| f.grad(*xi) + hi)
            .collect())
    }
}

fn field_with(
    p: &NetworkProblem,
    x: &[f64],
    coupling_grad: &[f64],
    lambda: f64,
    constrained: bool,
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let mut z = residuals(p, x, coupling_grad, lambda, constrained)?;
    if !constrained {
        z.iter_mut().for_each(|v| *v *= -lambda);
    }
    Ok(z)
}

/// `-lambda (grad f(x) + held gradient)`.
pub fn field_unconstrained_event(
    p: &NetworkProblem,
    x: &[f64],
    snap: &SupervisorSnapshot,
    lambda: f64,
) -> Result<Vec<f64>> {
    field_with(p, x, &snap.held_gradient, lambda, false)
}

/// `P(x - lambda (grad f(x) + held gradient)) - x`.
pub fn field_constrained_event(
    p: &NetworkProblem,
    x: &[f64],
    snap: &SupervisorSnapshot,
    lambda: f64,
) -> Result<Vec<f64>> {
    field_with(p, x, &snap.held_gradient, lambda, true)
}

pub fn field_event(
    p: &NetworkProblem,
    x: &[f64],
    snap: &SupervisorSnapshot,
    lambda: f64,
    kind: FlowKind,
) -> Result<Vec<f64>> {
    field_with(p, x, &snap.held_gradient, lambda, kind.is_constrained())
}

/// Field of the flow with a fresh coupling gradient at `x`.
pub fn field_continuous(
    p: &NetworkProblem,
    x: &[f64],
    lambda: f64,
    kind: FlowKind,
) -> Result<Vec<f64>> {
    let g = p.grad_coupling(x)?;
    field_with(p, x, &g, lambda, kind.is_constrained())
}
