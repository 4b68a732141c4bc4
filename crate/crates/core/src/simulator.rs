//! Fixed-step simulation of the coordinated flows.
//!
//! Every step advances the state with the current snapshot, applies any due
//! load disturbances, evaluates every agent's trigger at the new state and
//! hands the requests to the coordinator. A trigger crossing is detected at
//! the first step boundary where the inequality holds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::{
    summarize, CoordinationMode, Coordinator, EventCause, EventRecord, MessageStats,
};
use crate::dynamics::{residuals, FlowKind};
use crate::error::{Error, Result};
use crate::integrator::{self, Scheme};
use crate::problem::{check_dim, NetworkProblem};
use crate::trigger::{TriggerParams, TriggerSignal};

pub const DEFAULT_STEP: f64 = 1e-2;
pub const DEFAULT_STOP_TOL: f64 = 1e-8;
/// Samples within this distance of every box count as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Step change of the aggregator's load constant at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub t: f64,
    pub dc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub flow: FlowKind,
    pub params: TriggerParams,
    pub step: f64,
    pub horizon: f64,
    pub initial_state: Vec<f64>,
    pub mode: CoordinationMode,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    pub scheme: Scheme,
    /// Stop once the residual norm drops below this (and no disturbance is pending).
    pub stop_tol: f64,
}

impl SimConfig {
    pub fn new(
        flow: FlowKind,
        params: TriggerParams,
        initial_state: Vec<f64>,
        horizon: f64,
    ) -> Self {
        SimConfig {
            flow,
            params,
            step: DEFAULT_STEP,
            horizon,
            initial_state,
            mode: CoordinationMode::SensingBased,
            disturbances: Vec::new(),
            scheme: Scheme::Euler,
            stop_tol: DEFAULT_STOP_TOL,
        }
    }

    pub fn validate(&self, p: &NetworkProblem) -> Result<()> {
        self.params.validate()?;
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidParameter(
                "stop tolerance must be nonnegative".into(),
            ));
        }
        check_dim(p.n(), self.initial_state.len())?;
        if self
            .disturbances
            .iter()
            .any(|d| !d.t.is_finite() || !d.dc.is_finite())
        {
            return Err(Error::InvalidParameter(
                "disturbances must be finite".into(),
            ));
        }
        if self.flow.is_constrained() {
            let boxes = p.require_boxes()?;
            for (i, (b, xi)) in boxes.iter().zip(&self.initial_state).enumerate() {
                if b.violation(*xi) > 0.0 || !xi.is_finite() {
                    return Err(Error::InfeasibleStart {
                        agent: i,
                        value: *xi,
                        lo: b.lower(),
                        hi: b.upper(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Configuration notes that do not prevent a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.flow == FlowKind::EventConstrained && !self.params.constrained_miet_applies() {
            w.push(format!(
                "lambda * H = {} >= 1: the constrained inter-event bound does not apply",
                self.params.lambda * self.params.hessian_bound
            ));
        }
        if self.flow == FlowKind::EventUnconstrained && self.params.lambda > 1.0 {
            w.push("lambda > 1: the unconstrained inter-event bound is not guaranteed".into());
        }
        w
    }
}

/// Uniformly spaced samples of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub flow: FlowKind,
    pub step: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub objective: Vec<f64>,
    pub feasible: Vec<bool>,
    /// `F(x) - F(x*)`, filled by [`Trajectory::attach_lyapunov`].
    pub lyapunov: Option<Vec<f64>>,
    /// Sample indices at which a disturbance changed the objective.
    pub disturbance_samples: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Records `V = F(x) - F(x*)` for every sample using `p`.
    pub fn attach_lyapunov(&mut self, p: &NetworkProblem, optimizer: &[f64]) -> Result<()> {
        let f_star = p.eval_objective(optimizer)?;
        self.lyapunov = Some(
            self.states
                .iter()
                .map(|x| p.eval_objective(x).map(|f| f - f_star))
                .collect::<Result<_>>()?,
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub trajectory: Trajectory,
    pub events: Vec<EventRecord>,
    pub stats: MessageStats,
    /// Problem in force at the end of the run (after all disturbances).
    pub final_problem: NetworkProblem,
}

pub fn run(p: &NetworkProblem, cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate(p)?;
    let constrained = cfg.flow.is_constrained();
    let mut problem = if constrained {
        p.clone()
    } else {
        p.without_boxes()
    };
    let n = problem.n();
    let lambda = cfg.params.lambda;
    let step_tol = 1e-9 * cfg.step;

    let mut disturbances = cfg.disturbances.clone();
    disturbances.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut pending = 0;
    while pending < disturbances.len() && disturbances[pending].t <= step_tol {
        problem = problem.with_load_shift(disturbances[pending].dc)?;
        pending += 1;
    }

    let mut x = cfg.initial_state.clone();
    let mut coordinator = Coordinator::start(&problem, &x, cfg.mode)?;
    let steps = ((cfg.horizon / cfg.step).round() as usize).max(1);

    let mut traj = Trajectory {
        flow: cfg.flow,
        step: cfg.step,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        objective: Vec::with_capacity(steps + 1),
        feasible: Vec::with_capacity(steps + 1),
        lyapunov: None,
        disturbance_samples: Vec::new(),
    };
    let record =
        |traj: &mut Trajectory, problem: &NetworkProblem, t: f64, x: &[f64]| -> Result<()> {
            traj.times.push(t);
            traj.objective.push(problem.eval_objective(x)?);
            traj.feasible
                .push(problem.max_violation(x) <= FEASIBILITY_TOL);
            traj.states.push(x.to_vec());
            Ok(())
        };
    record(&mut traj, &problem, 0.0, &x)?;

    for j in 1..=steps {
        let t = j as f64 * cfg.step;
        x = if cfg.flow.is_event() {
            let held = &coordinator.snapshot().held_gradient;
            integrator::step(cfg.scheme, &x, cfg.step, |y| {
                field(&problem, y, held, lambda, constrained)
            })?
        } else {
            integrator::step(cfg.scheme, &x, cfg.step, |y| {
                let g = problem.grad_coupling(y)?;
                field(&problem, y, &g, lambda, constrained)
            })?
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state diverged at t = {t}")));
        }

        let mut forced = None;
        while pending < disturbances.len() && disturbances[pending].t <= t + step_tol {
            problem = problem.with_load_shift(disturbances[pending].dc)?;
            pending += 1;
            forced = Some(EventCause::Disturbance);
        }
        let requests = if cfg.flow.is_event() {
            TriggerSignal::compute(
                &problem,
                &x,
                coordinator.snapshot(),
                &cfg.params,
                constrained,
            )?
            .requests(&cfg.params)
        } else {
            vec![false; n]
        };
        coordinator.process_step(&problem, t, j, &x, &requests, forced)?;
        if forced.is_some() {
            traj.disturbance_samples.push(traj.len());
        }
        record(&mut traj, &problem, t, &x)?;

        if pending == disturbances.len() {
            let held = if cfg.flow.is_event() {
                coordinator.snapshot().held_gradient.clone()
            } else {
                problem.grad_coupling(&x)?
            };
            let z = residuals(&problem, &x, &held, lambda, constrained)?;
            if z.iter().map(|v| v * v).sum::<f64>().sqrt() < cfg.stop_tol {
                break;
            }
        }
    }

    let events = coordinator.into_records();
    let stats = summarize(&events, cfg.horizon);
    Ok(SimOutput {
        trajectory: traj,
        events,
        stats,
        final_problem: problem,
    })
}

fn field(
    p: &NetworkProblem,
    x: &[f64],
    coupling_grad: &[f64],
    lambda: f64,
    constrained: bool,
) -> Result<Vec<f64>> {
    let mut z = residuals(p, x, coupling_grad, lambda, constrained)?;
    if !constrained {
        z.iter_mut().for_each(|v| *v *= -lambda);
    }
    Ok(z)
}

/// Same loop with the coupling gradient refreshed continuously.
pub fn run_baseline(p: &NetworkProblem, cfg: &SimConfig) -> Result<Trajectory> {
    let cfg = SimConfig {
        flow: cfg.flow.continuous_counterpart(),
        ..cfg.clone()
    };
    Ok(run(p, &cfg)?.trajectory)
}

/// Draws initial conditions for sweeps.
pub trait InitialSampler: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64>;
}

/// Independent uniform draws per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformBox {
    pub intervals: Vec<(f64, f64)>,
}

impl InitialSampler for UniformBox {
    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let (lo, hi) = self.intervals[i % self.intervals.len()];
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub index: usize,
    pub initial_state: Vec<f64>,
    pub stats: Option<MessageStats>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub runs_ok: usize,
    pub runs_failed: usize,
    /// Mean and population standard deviation over runs of each run's minimum gap.
    pub mean_min_interevent: Option<f64>,
    pub std_min_interevent: Option<f64>,
    pub mean_interevent: Option<f64>,
    /// Mean number of trigger-caused broadcasts per run.
    pub mean_updates: Option<f64>,
    pub std_updates: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub count: usize,
    pub runs: Vec<SweepRun>,
    pub aggregate: SweepAggregate,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64;
    (Some(m), Some(var.sqrt()))
}

/// Runs `count` simulations from sampled initial states on up to `jobs` threads.
///
/// Initial states are drawn sequentially from one seeded stream before any
/// run starts, so results do not depend on `jobs`.
pub fn sweep(
    p: &NetworkProblem,
    template: &SimConfig,
    sampler: &dyn InitialSampler,
    count: usize,
    seed: u64,
    jobs: usize,
) -> Result<SweepReport> {
    if count == 0 {
        return Err(Error::InvalidParameter(
            "sweep count must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inits: Vec<Vec<f64>> = (0..count)
        .map(|_| sampler.sample(&mut rng, p.n()))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        inits
            .into_par_iter()
            .enumerate()
            .map(|(index, x0)| {
                let cfg = SimConfig {
                    initial_state: x0.clone(),
                    ..template.clone()
                };
                match run(p, &cfg) {
                    Ok(out) => SweepRun {
                        index,
                        initial_state: x0,
                        stats: Some(out.stats),
                        error: None,
                    },
                    Err(e) => SweepRun {
                        index,
                        initial_state: x0,
                        stats: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });

    let ok: Vec<&MessageStats> = runs.iter().filter_map(|r| r.stats.as_ref()).collect();
    let mins: Vec<f64> = ok.iter().filter_map(|s| s.min_interevent).collect();
    let means: Vec<f64> = ok.iter().filter_map(|s| s.mean_interevent).collect();
    let updates: Vec<f64> = ok.iter().map(|s| s.triggered_events as f64).collect();
    let (mean_min, std_min) = mean_std(&mins);
    let (mean_updates, std_updates) = mean_std(&updates);
    let aggregate = SweepAggregate {
        runs_ok: ok.len(),
        runs_failed: runs.len() - ok.len(),
        mean_min_interevent: mean_min,
        std_min_interevent: std_min,
        mean_interevent: mean_std(&means).0,
        mean_updates,
        std_updates,
    };
    Ok(SweepReport {
        seed,
        count,
        runs,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{reference_optimizer, BoxConstraint, CouplingCost, LocalCost};

    fn half_sq(center: f64) -> LocalCost {
        LocalCost::poly(vec![0.5 * center * center, -center, 0.5])
    }

    fn two_agent() -> NetworkProblem {
        NetworkProblem::new(
            vec![half_sq(1.0), half_sq(2.0)],
            CouplingCost::Quadratic {
                matrix: vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
                q: vec![0.0, 0.0],
            },
            None,
        )
        .unwrap()
    }

    fn params(l: f64, h: f64) -> TriggerParams {
        TriggerParams::new(0.9, 0.2, l, h).unwrap()
    }

    #[test]
    fn uncoupled_never_triggers() {
        let p = NetworkProblem::new(
            vec![half_sq(1.0), half_sq(-3.0)],
            CouplingCost::zero(2),
            None,
        )
        .unwrap();
        let cfg = SimConfig::new(
            FlowKind::EventUnconstrained,
            params(0.0, 1.0),
            vec![5.0, 5.0],
            20.0,
        );
        let out = run(&p, &cfg).unwrap();
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.stats.triggered_events, 0);
    }

    #[test]
    fn two_agent_converges() {
        let p = two_agent();
        let cfg = SimConfig::new(
            FlowKind::EventUnconstrained,
            params(2.0, 1.0),
            vec![0.0, 0.0],
            60.0,
        );
        let out = run(&p, &cfg).unwrap();
        let x = out.trajectory.final_state();
        assert!((x[0] - 4.0 / 3.0).abs() < 1e-4, "{x:?}");
        assert!((x[1] - 5.0 / 3.0).abs() < 1e-4, "{x:?}");
        assert!(out.stats.triggered_events > 0);
        let base = run_baseline(&p, &cfg).unwrap();
        let y = base.final_state();
        assert!((x[0] - y[0]).abs() < 1e-4 && (x[1] - y[1]).abs() < 1e-4);
        assert!(base.objective.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infeasible_start_rejected() {
        let p = NetworkProblem::new(
            vec![half_sq(1.0)],
            CouplingCost::zero(1),
            Some(vec![BoxConstraint::new(0.0, 0.5).unwrap()]),
        )
        .unwrap();
        let cfg = SimConfig::new(FlowKind::EventConstrained, params(1.0, 1.0), vec![0.6], 1.0);
        assert!(matches!(
            run(&p, &cfg),
            Err(Error::InfeasibleStart { agent: 0, .. })
        ));
        let cfg = SimConfig::new(
            FlowKind::ContinuousConstrained,
            params(1.0, 1.0),
            vec![0.1],
            30.0,
        );
        let traj = run(&p, &cfg).unwrap().trajectory;
        assert!(traj.feasible.iter().all(|f| *f));
        assert!((traj.final_state()[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn constrained_requires_boxes() {
        let cfg = SimConfig::new(
            FlowKind::EventConstrained,
            params(1.0, 1.0),
            vec![0.0, 0.0],
            1.0,
        );
        assert!(matches!(run(&two_agent(), &cfg), Err(Error::MissingBoxes)));
    }

    #[test]
    fn blow_up_is_reported() {
        // Euler on x' = -lambda * 1e4 x with h = 1e-2 and lambda = 0.2 diverges.
        let p = NetworkProblem::new(
            vec![LocalCost::poly(vec![0.0, 0.0, 5e4])],
            CouplingCost::zero(1),
            None,
        )
        .unwrap();
        let cfg = SimConfig::new(
            FlowKind::ContinuousUnconstrained,
            params(1.0, 1e5),
            vec![1.0],
            60.0,
        );
        assert!(matches!(run(&p, &cfg), Err(Error::NonFinite(_))));
    }

    #[test]
    fn disturbance_forces_refresh() {
        let p = NetworkProblem::new(
            vec![half_sq(0.0); 2],
            CouplingCost::aggregator(vec![0.0, 0.0, 1.0], 2.0),
            None,
        )
        .unwrap();
        let mut cfg = SimConfig::new(
            FlowKind::EventUnconstrained,
            params(4.0, 1.0),
            vec![0.0, 0.0],
            10.0,
        );
        cfg.disturbances = vec![Disturbance { t: 5.0, dc: 1.0 }];
        let out = run(&p, &cfg).unwrap();
        let forced: Vec<_> = out
            .events
            .iter()
            .filter(|r| r.cause == EventCause::Disturbance)
            .collect();
        assert_eq!(forced.len(), 1);
        assert!((forced[0].time - 5.0).abs() < 1e-9);
        assert_eq!(
            forced[0].snapshot.held_gradient,
            out.final_problem
                .grad_coupling(&forced[0].snapshot.anchor_state)
                .unwrap()
        );
        assert_eq!(out.trajectory.disturbance_samples, vec![500]);
        let xs = reference_optimizer(&out.final_problem, 1e-12).unwrap();
        for (a, b) in out.trajectory.final_state().iter().zip(&xs) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_rejects_zero() {
        let p = two_agent();
        let cfg = SimConfig::new(
            FlowKind::EventUnconstrained,
            params(2.0, 1.0),
            vec![0.0, 0.0],
            5.0,
        );
        let sampler = UniformBox {
            intervals: vec![(-2.0, 2.0)],
        };
        let a = sweep(&p, &cfg, &sampler, 4, 7, 1).unwrap();
        let b = sweep(&p, &cfg, &sampler, 4, 7, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 4);
        assert!(a.aggregate.mean_min_interevent.is_some());
        assert!(sweep(&p, &cfg, &sampler, 0, 7, 1).is_err());

        let single = sweep(&p, &cfg, &sampler, 1, 9, 1).unwrap();
        let direct = run(
            &p,
            &SimConfig {
                initial_state: single.runs[0].initial_state.clone(),
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(single.runs[0].stats.as_ref().unwrap(), &direct.stats);
    }
}
