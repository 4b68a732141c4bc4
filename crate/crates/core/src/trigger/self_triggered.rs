//! Self-triggered scheduling: each agent integrates its own scalar closed
//! loop from the latest broadcast and reports when its trigger will fire.
//!
//! Between broadcasts agent `i` evolves independently of the others, since
//! the coupling gradient is frozen, so the crossing time can be computed
//! locally right after each broadcast.

use serde::{Deserialize, Serialize};

use super::TriggerParams;
use crate::dynamics::{FlowKind, SupervisorSnapshot};
use crate::error::{Error, Result};
use crate::integrator::{step_scalar, Scheme};
use crate::problem::{BoxConstraint, LocalCost, NetworkProblem};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub step: f64,
    /// Longest look-ahead past the broadcast time.
    pub horizon: f64,
    pub scheme: Scheme,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            step: 1e-3,
            horizon: 1e3,
            scheme: Scheme::Rk4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SelfTriggerOutcome {
    /// Absolute time at which the trigger equality is reached.
    At(f64),
    /// The residual vanished first; the agent never requests an update.
    Never,
    /// No crossing before the look-ahead horizon (absolute time reported).
    Truncated(f64),
}

impl SelfTriggerOutcome {
    pub fn time(&self) -> Option<f64> {
        match self {
            SelfTriggerOutcome::At(t) => Some(*t),
            _ => None,
        }
    }
}

struct AgentLoop<'a> {
    cost: &'a LocalCost,
    bx: Option<&'a BoxConstraint>,
    anchor: f64,
    held: f64,
    params: &'a TriggerParams,
}

impl AgentLoop<'_> {
    fn field(&self, x: f64) -> f64 {
        let z = self.cost.grad(x) + self.held;
        match self.bx {
            Some(b) => b.project(x - self.params.lambda * z) - x,
            None => -self.params.lambda * z,
        }
    }

    fn residual(&self, x: f64) -> f64 {
        let z = self.cost.grad(x) + self.held;
        match self.bx {
            Some(b) => b.project(x - self.params.lambda * z) - x,
            None => z,
        }
    }

    /// Negative before the crossing, nonnegative after.
    fn trigger_function(&self, x: f64) -> f64 {
        let scale = match self.bx {
            Some(_) => self.params.lambda * self.params.lipschitz,
            None => self.params.lipschitz,
        };
        scale * (x - self.anchor).abs() - self.params.sigma * self.residual(x).abs()
    }
}

/// Next trigger time of one agent, starting from the broadcast at `t_k`.
///
/// The crossing inside the final step is located by bisection on the
/// length of a single integrator step from the start of that step.
pub fn self_triggered_next(
    cost: &LocalCost,
    bx: Option<&BoxConstraint>,
    anchor: f64,
    held_gradient: f64,
    t_k: f64,
    params: &TriggerParams,
    cfg: &IntegratorConfig,
) -> Result<SelfTriggerOutcome> {
    params.validate()?;
    if !(cfg.step > 0.0 && cfg.horizon > 0.0) {
        return Err(Error::InvalidParameter(
            "integrator step and horizon must be positive".into(),
        ));
    }
    let agent = AgentLoop {
        cost,
        bx,
        anchor,
        held: held_gradient,
        params,
    };
    if agent.residual(anchor).abs() <= params.zero_tol {
        return Ok(SelfTriggerOutcome::Never);
    }
    let steps = (cfg.horizon / cfg.step * (1.0 - 1e-12)).ceil() as usize;
    let mut x = anchor;
    for j in 0..steps {
        let next = step_scalar(cfg.scheme, x, cfg.step, |v| agent.field(v));
        if !next.is_finite() {
            return Err(Error::NonFinite(format!(
                "self-triggered state at step {j}"
            )));
        }
        if agent.residual(next).abs() <= params.zero_tol {
            return Ok(SelfTriggerOutcome::Never);
        }
        if agent.trigger_function(next) >= 0.0 {
            let (mut lo, mut hi) = (0.0_f64, cfg.step);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let xm = step_scalar(cfg.scheme, x, mid, |v| agent.field(v));
                if agent.trigger_function(xm) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= f64::EPSILON * cfg.step {
                    break;
                }
            }
            return Ok(SelfTriggerOutcome::At(t_k + j as f64 * cfg.step + hi));
        }
        x = next;
    }
    Ok(SelfTriggerOutcome::Truncated(t_k + cfg.horizon))
}

/// Network-wide schedule: the earliest of the agents' self-triggered times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub outcome: SelfTriggerOutcome,
    /// Agent attaining the minimum, when some agent fires.
    pub agent: Option<usize>,
}

pub fn schedule_next(
    p: &NetworkProblem,
    snap: &SupervisorSnapshot,
    params: &TriggerParams,
    kind: FlowKind,
    cfg: &IntegratorConfig,
) -> Result<Schedule> {
    let boxes = if kind.is_constrained() {
        Some(p.require_boxes()?)
    } else {
        None
    };
    let mut best: Option<(f64, usize)> = None;
    let mut truncated = false;
    for (i, cost) in p.costs().iter().enumerate() {
        let outcome = self_triggered_next(
            cost,
            boxes.map(|b| &b[i]),
            snap.anchor_state[i],
            snap.held_gradient[i],
            snap.time,
            params,
            cfg,
        )?;
        match outcome {
            SelfTriggerOutcome::At(t) if best.is_none_or(|(b, _)| t < b) => best = Some((t, i)),
            SelfTriggerOutcome::Truncated(_) => truncated = true,
            _ => {}
        }
    }
    Ok(match best {
        Some((t, i)) => Schedule {
            outcome: SelfTriggerOutcome::At(t),
            agent: Some(i),
        },
        None if truncated => Schedule {
            outcome: SelfTriggerOutcome::Truncated(snap.time + cfg.horizon),
            agent: None,
        },
        None => Schedule {
            outcome: SelfTriggerOutcome::Never,
            agent: None,
        },
    })
}
