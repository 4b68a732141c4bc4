//! Scenario files and plot-ready exports.
//!
//! CSV floats use 17 significant digits so every value round-trips exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::Histogram;
use crate::coordinator::{CoordinationMode, EventRecord};
use crate::dynamics::FlowKind;
use crate::error::Result;
use crate::problem::{BoxConstraint, CouplingCost, Domain, LocalCost, NetworkProblem};
use crate::scenarios::{build_power, PowerScenario, QuadraticScenario, Topology};
use crate::simulator::{Disturbance, Trajectory};

/// Externally supplied `L_g` and `H`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsOverride {
    pub lipschitz: f64,
    pub hessian_bound: f64,
}

/// Run settings stored in a scenario file; command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<CoordinationMode>,
}

/// Problem definition plus the simulation extensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub n: usize,
    pub costs: Vec<LocalCost>,
    pub coupling: CouplingCost,
    #[serde(default)]
    pub boxes: Option<Vec<BoxConstraint>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disturbances: Vec<Disturbance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    /// Region for bound estimation and sweep sampling when there are no boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl ScenarioFile {
    pub fn from_problem(p: &NetworkProblem) -> Self {
        ScenarioFile {
            n: p.n(),
            costs: p.costs().to_vec(),
            coupling: p.coupling().clone(),
            boxes: p.boxes().map(<[_]>::to_vec),
            disturbances: Vec::new(),
            initial_state: None,
            domain: None,
            bounds: None,
            config: None,
            topology: None,
            metadata: None,
        }
    }

    pub fn from_power(s: &PowerScenario) -> Result<Self> {
        let built = build_power(s)?;
        Ok(ScenarioFile {
            disturbances: built.disturbances,
            initial_state: Some(built.initial_state),
            topology: s.topology.clone(),
            metadata: Some(serde_json::json!({
                "units": "MW",
                "reactive_load_mvar": s.reactive_load,
            })),
            ..ScenarioFile::from_problem(&built.problem)
        })
    }

    /// Quadratic instance with its closed-form bounds recorded.
    pub fn from_quadratic(s: &QuadraticScenario) -> Result<Self> {
        Ok(ScenarioFile {
            bounds: Some(BoundsOverride {
                lipschitz: s.lipschitz(),
                hessian_bound: s.hessian_bound(),
            }),
            ..ScenarioFile::from_problem(&s.problem()?)
        })
    }

    pub fn problem(&self) -> Result<NetworkProblem> {
        let p = NetworkProblem::new(
            self.costs.clone(),
            self.coupling.clone(),
            self.boxes.clone(),
        )?;
        if p.n() != self.n {
            return Err(crate::error::Error::InvalidProblem(format!(
                "n = {} but {} costs given",
                self.n,
                p.n()
            )));
        }
        Ok(p)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ScenarioFile = serde_json::from_str(s)?;
        f.problem()?;
        Ok(f)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Reads a scenario file, returning it with the raw bytes.
pub fn load_scenario(path: &Path) -> Result<(ScenarioFile, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    Ok((ScenarioFile::from_json(&text)?, bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_json<T: Serialize>(mut w: impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// `t,x_1..x_n,objective,feasible`, one row per sample.
pub fn write_trajectory_csv(mut w: impl Write, traj: &Trajectory) -> Result<()> {
    let n = traj.states.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.push("objective".into());
    header.push("feasible".into());
    writeln!(w, "{}", header.join(","))?;
    for j in 0..traj.len() {
        let mut row = vec![fmt_f64(traj.times[j])];
        row.extend(traj.states[j].iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(traj.objective[j]));
        row.push(u8::from(traj.feasible[j]).to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// `k,t,initiators,msgs_up,msgs_down`; initiators are 1-based and `;`-separated.
pub fn write_events_csv(mut w: impl Write, events: &[EventRecord]) -> Result<()> {
    writeln!(w, "k,t,initiators,msgs_up,msgs_down")?;
    for r in events {
        let who: Vec<String> = r.initiators.iter().map(|i| (i + 1).to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            r.k,
            fmt_f64(r.time),
            who.join(";"),
            r.messages_up,
            r.messages_down
        )?;
    }
    Ok(())
}

pub fn write_histogram_csv(mut w: impl Write, h: &Histogram) -> Result<()> {
    writeln!(w, "bin_lo,bin_hi,count")?;
    for (lo, hi, c) in h.bins() {
        writeln!(w, "{},{},{c}", fmt_f64(lo), fmt_f64(hi))?;
    }
    Ok(())
}

/// Merged plot data for an event-triggered run and its continuous baseline.
///
/// `sample` rows carry both states at each step (blank once a run has
/// stopped); `event` rows mark each broadcast of the event-triggered run.
pub fn write_compare_csv(
    mut w: impl Write,
    event_run: &Trajectory,
    baseline: &Trajectory,
    events: &[EventRecord],
) -> Result<()> {
    let n = event_run.states.first().map_or(0, Vec::len);
    let mut header = vec!["row".to_string(), "t".into(), "k".into()];
    header.extend((1..=n).map(|i| format!("event_x_{i}")));
    header.extend((1..=n).map(|i| format!("continuous_x_{i}")));
    writeln!(w, "{}", header.join(","))?;
    let cells = |traj: &Trajectory, j: usize| -> Vec<String> {
        match traj.states.get(j) {
            Some(x) => x.iter().map(|v| fmt_f64(*v)).collect(),
            None => vec![String::new(); n],
        }
    };
    let len = event_run.len().max(baseline.len());
    let step = event_run.step;
    for j in 0..len {
        let t = event_run
            .times
            .get(j)
            .or_else(|| baseline.times.get(j))
            .copied()
            .unwrap_or(j as f64 * step);
        let mut row = vec!["sample".to_string(), fmt_f64(t), String::new()];
        row.extend(cells(event_run, j));
        row.extend(cells(baseline, j));
        writeln!(w, "{}", row.join(","))?;
    }
    for r in events {
        let mut row = vec!["event".to_string(), fmt_f64(r.time), r.k.to_string()];
        row.extend(r.snapshot.anchor_state.iter().map(|v| fmt_f64(*v)));
        row.extend(cells(baseline, r.step));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_file_round_trip() {
        let f = ScenarioFile::from_power(&PowerScenario::default()).unwrap();
        let back = ScenarioFile::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(f, back);
        assert_eq!(back.disturbances, vec![Disturbance { t: 40.0, dc: 1.0 }]);
        assert_eq!(back.problem().unwrap().n(), 5);
    }

    #[test]
    fn plain_problem_schema_is_a_scenario() {
        let s = r#"{"n": 1, "costs": [{"poly": [0, 0, 1]}],
                    "coupling": {"aggregator": {"f0_poly": [0, 1], "c": 1.5}}, "boxes": null}"#;
        let f = ScenarioFile::from_json(s).unwrap();
        assert!(f.disturbances.is_empty());
        assert!(f.boxes.is_none());
        let bad = r#"{"n": 2, "costs": [{"poly": [0, 0, 1]}],
                      "coupling": {"aggregator": {"f0_poly": [0, 1], "c": 1.5}}}"#;
        assert!(ScenarioFile::from_json(bad).is_err());
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456.789, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(sha256_hex(b"abc").len(), 64);
    }
}
