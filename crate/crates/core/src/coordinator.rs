//! Agent-supervisor protocol: update requests, synchronous broadcasts, and
//! message accounting for the sensing-based and computation-based modes.

use serde::{Deserialize, Serialize};

use crate::dynamics::SupervisorSnapshot;
use crate::error::Result;
use crate::problem::NetworkProblem;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordinationMode {
    /// The supervisor measures what it needs; agents only send requests.
    #[default]
    SensingBased,
    /// The supervisor gathers every agent's state before evaluating `grad g`.
    ComputationBased,
}

/// Why a broadcast happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventCause {
    /// Broadcast at `t = 0`.
    Initial,
    /// At least one agent's trigger fired.
    Trigger,
    /// The problem data changed (load step); the held gradient went stale.
    Disturbance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub k: u64,
    pub time: f64,
    /// Integration step at which the broadcast happened.
    pub step: usize,
    pub cause: EventCause,
    /// Zero-based indices of the agents whose trigger fired at this step.
    pub initiators: Vec<usize>,
    pub messages_up: usize,
    pub messages_down: usize,
    pub snapshot: SupervisorSnapshot,
}

pub fn message_counts(mode: CoordinationMode, initiators: usize, n: usize) -> (usize, usize) {
    match mode {
        CoordinationMode::SensingBased => (initiators, n),
        CoordinationMode::ComputationBased => (initiators + n, n),
    }
}

/// Result of one protocol step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Replacement snapshot, if a broadcast happened.
    pub snapshot: Option<SupervisorSnapshot>,
    pub record: Option<EventRecord>,
}

/// Turns per-agent requests into at most one broadcast.
///
/// Simultaneous requests collapse into a single event. `forced` broadcasts
/// (initial or disturbance) happen even without requests.
#[allow(clippy::too_many_arguments)]
pub fn process_step(
    p: &NetworkProblem,
    t: f64,
    step: usize,
    x: &[f64],
    requests: &[bool],
    mode: CoordinationMode,
    current: &SupervisorSnapshot,
    forced: Option<EventCause>,
) -> Result<StepOutcome> {
    let initiators: Vec<usize> = requests
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.then_some(i))
        .collect();
    let cause = match forced {
        Some(c) => c,
        None if !initiators.is_empty() => EventCause::Trigger,
        None => {
            return Ok(StepOutcome {
                snapshot: None,
                record: None,
            })
        }
    };
    let k = if cause == EventCause::Initial {
        0
    } else {
        current.sequence + 1
    };
    let snapshot = SupervisorSnapshot::capture(p, x, t, k)?;
    let (messages_up, messages_down) = message_counts(mode, initiators.len(), p.n());
    let record = EventRecord {
        k,
        time: t,
        step,
        cause,
        initiators,
        messages_up,
        messages_down,
        snapshot: snapshot.clone(),
    };
    Ok(StepOutcome {
        snapshot: Some(snapshot),
        record: Some(record),
    })
}

/// Serialization point for a single run: owns the current snapshot and the log.
#[derive(Clone, Debug)]
pub struct Coordinator {
    mode: CoordinationMode,
    snapshot: SupervisorSnapshot,
    records: Vec<EventRecord>,
}

impl Coordinator {
    /// Takes the initial snapshot at `t = 0`.
    pub fn start(p: &NetworkProblem, x0: &[f64], mode: CoordinationMode) -> Result<Self> {
        let placeholder = SupervisorSnapshot::capture(p, x0, 0.0, 0)?;
        let out = process_step(
            p,
            0.0,
            0,
            x0,
            &[],
            mode,
            &placeholder,
            Some(EventCause::Initial),
        )?;
        Ok(Coordinator {
            mode,
            snapshot: out.snapshot.unwrap_or(placeholder),
            records: out.record.into_iter().collect(),
        })
    }

    pub fn snapshot(&self) -> &SupervisorSnapshot {
        &self.snapshot
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EventRecord> {
        self.records
    }

    /// Returns true when a broadcast happened.
    pub fn process_step(
        &mut self,
        p: &NetworkProblem,
        t: f64,
        step: usize,
        x: &[f64],
        requests: &[bool],
        forced: Option<EventCause>,
    ) -> Result<bool> {
        let out = process_step(p, t, step, x, requests, self.mode, &self.snapshot, forced)?;
        if let Some(s) = out.snapshot {
            self.snapshot = s;
        }
        match out.record {
            Some(r) => {
                self.records.push(r);
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

/// Aggregate communication statistics of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageStats {
    /// All broadcasts, including the initial one and disturbance refreshes.
    pub total_events: usize,
    /// Broadcasts caused by at least one trigger.
    pub triggered_events: usize,
    pub messages_up: usize,
    pub messages_down: usize,
    pub per_agent_initiations: Vec<usize>,
    pub min_interevent: Option<f64>,
    pub mean_interevent: Option<f64>,
    /// Population standard deviation of the inter-event gaps.
    pub std_interevent: Option<f64>,
    pub horizon: f64,
}

/// Gaps between consecutive broadcasts, excluding gaps that end in a
/// disturbance refresh (those are not produced by the trigger rule).
pub fn interevent_gaps(records: &[EventRecord]) -> Vec<f64> {
    records
        .windows(2)
        .filter(|w| w[1].cause != EventCause::Disturbance)
        .map(|w| w[1].time - w[0].time)
        .collect()
}

pub fn summarize(records: &[EventRecord], horizon: f64) -> MessageStats {
    let n = records
        .first()
        .map(|r| r.snapshot.anchor_state.len())
        .unwrap_or(0);
    let mut per_agent = vec![0usize; n];
    for r in records {
        for &i in &r.initiators {
            per_agent[i] += 1;
        }
    }
    let gaps = interevent_gaps(records);
    let (min, mean, std) = if gaps.is_empty() {
        (None, None, None)
    } else {
        let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let var = gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() / gaps.len() as f64;
        (
            Some(gaps.iter().copied().fold(f64::INFINITY, f64::min)),
            Some(m),
            Some(var.sqrt()),
        )
    };
    MessageStats {
        total_events: records.len(),
        triggered_events: records
            .iter()
            .filter(|r| r.cause == EventCause::Trigger)
            .count(),
        messages_up: records.iter().map(|r| r.messages_up).sum(),
        messages_down: records.iter().map(|r| r.messages_down).sum(),
        per_agent_initiations: per_agent,
        min_interevent: min,
        mean_interevent: mean,
        std_interevent: std,
        horizon,
    }
}
