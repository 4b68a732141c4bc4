//! Canonical problem builders: a five-generator dispatch case and seeded
//! random convex quadratics with closed-form bounds.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{reference_optimizer, BoxConstraint, CouplingCost, LocalCost, NetworkProblem};
use crate::simulator::Disturbance;

/// Descriptive network information. Not used by the dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub name: String,
    pub supervisor_node: usize,
    pub generator_nodes: Vec<usize>,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
}

/// Generation dispatch behind a substation.
///
/// The substation supplies `x_0 = c - sum_i x_i` at cost `f0(x_0)`, so the
/// coupling is an aggregator on `c`. Powers are in MW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerScenario {
    /// Generator cost polynomials, ascending coefficients.
    pub generator_costs: Vec<Vec<f64>>,
    /// Substation cost polynomial.
    pub substation_cost: Vec<f64>,
    /// Base net active demand.
    pub base_load: f64,
    pub lower: Vec<f64>,
    pub capacities: Vec<f64>,
    pub load_steps: Vec<Disturbance>,
    /// Reactive demand, kept as metadata only (MVAR).
    pub reactive_load: f64,
    pub topology: Option<Topology>,
}

impl Default for PowerScenario {
    fn default() -> Self {
        let a = [0.5, 0.8, 1.2, 1.6, 2.0];
        let b = [0.1, 0.2, 0.3, 0.4, 0.5];
        PowerScenario {
            generator_costs: a.iter().zip(&b).map(|(a, b)| vec![0.0, *b, *a]).collect(),
            substation_cost: vec![0.0, 1.0, 2.0],
            base_load: 2.0,
            lower: vec![0.0; 5],
            capacities: vec![0.7, 1.0, 0.8, 0.5, 0.3],
            load_steps: vec![Disturbance { t: 40.0, dc: 1.0 }],
            reactive_load: 1.0,
            topology: Some(Topology {
                name: "IEEE 37-bus test feeder, single-phase equivalent".into(),
                supervisor_node: 0,
                generator_nodes: vec![1, 2, 3, 4, 5],
                edges: Vec::new(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerBuild {
    pub problem: NetworkProblem,
    pub disturbances: Vec<Disturbance>,
    pub initial_state: Vec<f64>,
}

pub fn build_power(s: &PowerScenario) -> Result<PowerBuild> {
    let n = s.generator_costs.len();
    if s.capacities.len() != n || s.lower.len() != n {
        return Err(Error::InvalidProblem(format!(
            "{n} generators but {} capacities and {} lower bounds",
            s.capacities.len(),
            s.lower.len()
        )));
    }
    if let Some(i) = s.capacities.iter().position(|c| !(*c > 0.0)) {
        return Err(Error::InvalidProblem(format!(
            "capacity of generator {} must be positive, got {}",
            i + 1,
            s.capacities[i]
        )));
    }
    if !s.base_load.is_finite() {
        return Err(Error::InvalidProblem("base load must be finite".into()));
    }
    let boxes = s
        .lower
        .iter()
        .zip(&s.capacities)
        .map(|(lo, hi)| BoxConstraint::new(*lo, *hi))
        .collect::<Result<Vec<_>>>()?;
    let initial_state: Vec<f64> = boxes.iter().map(|b| b.project(0.0)).collect();
    let problem = NetworkProblem::new(
        s.generator_costs
            .iter()
            .cloned()
            .map(LocalCost::poly)
            .collect(),
        CouplingCost::aggregator(s.substation_cost.clone(), s.base_load),
        Some(boxes),
    )?;
    Ok(PowerBuild {
        problem,
        disturbances: s.load_steps.clone(),
        initial_state,
    })
}

/// Random convex quadratic instance with closed-form bounds.
///
/// Local costs are `a_i x^2 + b_i x`; the coupling is `x^T Q x / 2 + q^T x`
/// with `Q = M^T M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticScenario {
    pub n: usize,
    pub seed: u64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub boxes: Option<Vec<(f64, f64)>>,
}

pub fn build_quadratic(n: usize, seed: u64, with_boxes: bool) -> Result<QuadraticScenario> {
    if n == 0 {
        return Err(Error::InvalidProblem(
            "at least one agent is required".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..=2.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect();
    let scale = 1.0 / (n as f64).sqrt();
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0) * scale);
    let qm = m.transpose() * &m;
    let matrix: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (qm[(i, j)] + qm[(j, i)])).collect())
        .collect();
    let q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let boxes = with_boxes.then(|| {
        (0..n)
            .map(|_| (rng.random_range(-2.0..=-0.5), rng.random_range(0.5..=2.0)))
            .collect()
    });
    Ok(QuadraticScenario {
        n,
        seed,
        a,
        b,
        matrix,
        q,
        boxes,
    })
}

impl QuadraticScenario {
    pub fn problem(&self) -> Result<NetworkProblem> {
        let costs = self
            .a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| LocalCost::poly(vec![0.0, *b, *a]))
            .collect();
        let boxes = self
            .boxes
            .as_ref()
            .map(|bs| {
                bs.iter()
                    .map(|(lo, hi)| BoxConstraint::new(*lo, *hi))
                    .collect()
            })
            .transpose()?;
        NetworkProblem::new(
            costs,
            CouplingCost::Quadratic {
                matrix: self.matrix.clone(),
                q: self.q.clone(),
            },
            boxes,
        )
    }

    /// `lambda_max(Q)`.
    pub fn lipschitz(&self) -> f64 {
        let qm = DMatrix::from_fn(self.n, self.n, |i, j| self.matrix[i][j]);
        qm.symmetric_eigenvalues().max().max(0.0)
    }

    /// `max_i 2 a_i`.
    pub fn hessian_bound(&self) -> f64 {
        self.a.iter().fold(0.0, |m, a| f64::max(m, 2.0 * a))
    }

    pub fn optimizer(&self) -> Result<Vec<f64>> {
        reference_optimizer(&self.problem()?, 1e-12)
    }
}
