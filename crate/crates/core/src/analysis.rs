//! Post-hoc audits of a simulated run.
//!
//! Each check reports a status and a margin: the worst-case excess of the
//! audited quantity over its allowed limit. A positive margin means the
//! check failed; skipped checks carry no margin.

use serde::{Deserialize, Serialize};

use crate::coordinator::{interevent_gaps, EventRecord};
use crate::dynamics::FlowKind;
use crate::error::Result;
use crate::problem::{norm, NetworkProblem};
use crate::simulator::{Trajectory, FEASIBILITY_TOL};
use crate::trigger::{
    miet_constrained, miet_unconstrained, miet_unconstrained_affine, ratio_bound, TriggerParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub status: CheckStatus,
    pub margin: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    fn from_margin(margin: f64, tolerance: f64, detail: String) -> Self {
        CheckResult {
            status: if margin <= 0.0 {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            margin: Some(margin),
            tolerance: Some(tolerance),
            detail,
        }
    }

    fn skipped(detail: impl Into<String>) -> Self {
        CheckResult {
            status: CheckStatus::Skipped,
            margin: None,
            tolerance: None,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Allowed objective increase per step is `factor * step^2`.
    pub descent_slack_factor: f64,
    pub feasibility_tol: f64,
    pub ratio_tol: f64,
    pub convergence_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            descent_slack_factor: 10.0,
            feasibility_tol: FEASIBILITY_TOL,
            ratio_tol: 1e-6,
            convergence_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub monotone_descent: CheckResult,
    pub feasibility: CheckResult,
    pub miet: CheckResult,
    pub ratio_bound: CheckResult,
    pub convergence: CheckResult,
}

impl VerificationReport {
    pub fn checks(&self) -> [(&'static str, &CheckResult); 5] {
        [
            ("monotone_descent", &self.monotone_descent),
            ("feasibility", &self.feasibility),
            ("miet", &self.miet),
            ("ratio_bound", &self.ratio_bound),
            ("convergence", &self.convergence),
        ]
    }

    /// No check failed (skipped checks are allowed).
    pub fn passed(&self) -> bool {
        self.checks()
            .iter()
            .all(|(_, c)| c.status != CheckStatus::Fail)
    }

    pub fn summary(&self) -> String {
        self.checks()
            .iter()
            .map(|(name, c)| {
                let status = match c.status {
                    CheckStatus::Pass => "PASS",
                    CheckStatus::Fail => "FAIL",
                    CheckStatus::Skipped => "SKIP",
                };
                match c.margin {
                    Some(m) => format!("{status} {name:<17} margin {m:+.3e}  {}\n", c.detail),
                    None => format!("{status} {name:<17} {}\n", c.detail),
                }
            })
            .collect()
    }
}

pub fn verify(
    traj: &Trajectory,
    events: &[EventRecord],
    problem: &NetworkProblem,
    params: &TriggerParams,
    optimizer: Option<&[f64]>,
) -> Result<VerificationReport> {
    verify_with(
        traj,
        events,
        problem,
        params,
        optimizer,
        &VerifyOptions::default(),
    )
}

pub fn verify_with(
    traj: &Trajectory,
    events: &[EventRecord],
    problem: &NetworkProblem,
    params: &TriggerParams,
    optimizer: Option<&[f64]>,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    Ok(VerificationReport {
        monotone_descent: check_descent(traj, opts),
        feasibility: check_feasibility(traj, problem, opts),
        miet: check_miet(traj, events, params),
        ratio_bound: check_ratio(traj, events, problem, params, opts),
        convergence: check_convergence(traj, optimizer, opts),
    })
}

fn check_descent(traj: &Trajectory, opts: &VerifyOptions) -> CheckResult {
    if traj.len() < 2 {
        return CheckResult::skipped("fewer than two samples");
    }
    let slack = opts.descent_slack_factor * traj.step * traj.step;
    let worst = traj
        .objective
        .windows(2)
        .enumerate()
        .filter(|(j, _)| !traj.disturbance_samples.contains(&(j + 1)))
        .map(|(_, w)| w[1] - w[0] - slack)
        .fold(f64::NEG_INFINITY, f64::max);
    CheckResult::from_margin(worst, slack, format!("per-step slack {slack:e}"))
}

fn check_feasibility(
    traj: &Trajectory,
    problem: &NetworkProblem,
    opts: &VerifyOptions,
) -> CheckResult {
    if !traj.flow.is_constrained() {
        return CheckResult::skipped("unconstrained flow");
    }
    let Some(boxes) = problem.boxes() else {
        return CheckResult::skipped("problem has no boxes");
    };
    let worst = traj
        .states
        .iter()
        .flat_map(|x| boxes.iter().zip(x).map(|(b, v)| b.violation(*v)))
        .fold(0.0, f64::max);
    CheckResult::from_margin(
        worst - opts.feasibility_tol,
        opts.feasibility_tol,
        format!("max box violation {worst:e}"),
    )
}

/// Formula bound on the inter-event time for the given flow, if it applies.
pub fn formula_miet(flow: FlowKind, params: &TriggerParams) -> std::result::Result<f64, String> {
    let r = match flow {
        FlowKind::EventUnconstrained if params.hessian_bound == 0.0 => {
            miet_unconstrained_affine(params)
        }
        FlowKind::EventUnconstrained => miet_unconstrained(params),
        FlowKind::EventConstrained => miet_constrained(params),
        _ => return Err("continuous flow".into()),
    };
    r.map_err(|e| e.to_string())
}

fn check_miet(traj: &Trajectory, events: &[EventRecord], params: &TriggerParams) -> CheckResult {
    let tau = match formula_miet(traj.flow, params) {
        Ok(t) => t,
        Err(why) => return CheckResult::skipped(why),
    };
    let gaps = interevent_gaps(events);
    if gaps.is_empty() {
        return CheckResult::skipped("fewer than two events");
    }
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let limit = tau - traj.step;
    CheckResult::from_margin(
        limit - min_gap,
        traj.step,
        format!("min gap {min_gap:.6} vs bound {tau:.6}"),
    )
}

fn check_ratio(
    traj: &Trajectory,
    events: &[EventRecord],
    problem: &NetworkProblem,
    params: &TriggerParams,
    opts: &VerifyOptions,
) -> CheckResult {
    if traj.flow != FlowKind::EventUnconstrained {
        return CheckResult::skipped("only audited for the unconstrained event flow");
    }
    if !problem.costs().iter().all(|c| c.is_quadratic()) {
        return CheckResult::skipped("requires quadratic local costs (exact H)");
    }
    let h = problem
        .costs()
        .iter()
        .map(|c| c.hess(0.0))
        .fold(0.0, f64::max);
    let rate = params.lambda * h;
    let mut worst = f64::NEG_INFINITY;
    for (k, rec) in events.iter().enumerate() {
        let end = events
            .get(k + 1)
            .map(|r| r.step)
            .unwrap_or(traj.len() - 1)
            .min(traj.len() - 1);
        let snap = &rec.snapshot;
        for (i, cost) in problem.costs().iter().enumerate() {
            let z0 = cost.grad(snap.anchor_state[i]) + snap.held_gradient[i];
            if z0.abs() <= params.zero_tol {
                continue;
            }
            for s in rec.step + 1..=end {
                let xi = traj.states[s][i];
                let z = cost.grad(xi) + snap.held_gradient[i];
                if z.abs() <= params.zero_tol {
                    continue;
                }
                let ratio = (xi - snap.anchor_state[i]).abs() / z.abs();
                let bound = ratio_bound(rate, traj.times[s] - rec.time);
                worst = worst.max(ratio - bound - opts.ratio_tol);
            }
        }
    }
    if worst == f64::NEG_INFINITY {
        return CheckResult::skipped("no samples between events");
    }
    CheckResult::from_margin(worst, opts.ratio_tol, format!("lambda H = {rate}"))
}

fn check_convergence(
    traj: &Trajectory,
    optimizer: Option<&[f64]>,
    opts: &VerifyOptions,
) -> CheckResult {
    let Some(xs) = optimizer else {
        return CheckResult::skipped("no reference optimizer");
    };
    let diff: Vec<f64> = traj
        .final_state()
        .iter()
        .zip(xs)
        .map(|(a, b)| a - b)
        .collect();
    let err = norm(&diff);
    CheckResult::from_margin(
        err - opts.convergence_tol,
        opts.convergence_tol,
        format!("final distance {err:e}"),
    )
}

/// Histogram of consecutive inter-event gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Histogram {
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `(lower, upper, count)` per bin.
    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.counts.iter().enumerate().map(|(b, c)| {
            let lo = self.lower + b as f64 * self.bin_width;
            (lo, lo + self.bin_width, *c)
        })
    }
}

pub fn interevent_histogram(records: &[EventRecord], bins: usize) -> Histogram {
    let gaps = interevent_gaps(records);
    if gaps.is_empty() || bins == 0 {
        return Histogram {
            lower: 0.0,
            bin_width: 0.0,
            counts: Vec::new(),
            min: None,
            max: None,
        };
    }
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 1e-12 * max.abs().max(1.0) {
        return Histogram {
            lower: min,
            bin_width: 0.0,
            counts: vec![gaps.len()],
            min: Some(min),
            max: Some(max),
        };
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0; bins];
    for g in &gaps {
        let b = (((g - min) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram {
        lower: min,
        bin_width: width,
        counts,
        min: Some(min),
        max: Some(max),
    }
}
