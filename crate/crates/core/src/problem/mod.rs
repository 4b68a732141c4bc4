//! Problem data: separable local costs, a coupling cost, and per-agent boxes.
//!
//! The network objective is `sum_i f_i(x_i) + g(x)` where each `f_i` is
//! known only to agent `i` and `g` is evaluated by the supervisor. Boxes are
//! optional; without them the feasible set is all of `R^n`.

mod bounds;
mod oracle;

pub use bounds::{estimate_bounds, BoundEstimates, Domain, DEFAULT_INFLATION, DEFAULT_SAMPLES};
pub use oracle::{reference_optimizer, stationarity_residual, ORACLE_STEP};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense polynomial with coefficients in ascending order of degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree after dropping trailing zero coefficients. The zero polynomial has degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * x + (k * (k - 1)) as f64 * c)
    }

    fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

/// A twice-differentiable scalar cost held privately by one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalCost {
    Poly(Polynomial),
}

impl LocalCost {
    pub fn poly(coeffs: Vec<f64>) -> Self {
        LocalCost::Poly(Polynomial::new(coeffs))
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            LocalCost::Poly(p) => p.eval(x),
        }
    }

    pub fn grad(&self, x: f64) -> f64 {
        match self {
            LocalCost::Poly(p) => p.derivative(x),
        }
    }

    pub fn hess(&self, x: f64) -> f64 {
        match self {
            LocalCost::Poly(p) => p.second_derivative(x),
        }
    }

    /// True when the second derivative is constant, so Hessian bounds are exact.
    pub fn is_quadratic(&self) -> bool {
        match self {
            LocalCost::Poly(p) => p.degree() <= 2,
        }
    }

    /// Samples the second derivative on `[lo, hi]` and reports whether it is
    /// nonnegative everywhere it was evaluated.
    pub fn is_convex_on(&self, lo: f64, hi: f64, samples: usize) -> bool {
        let samples = samples.max(2);
        (0..samples).all(|j| {
            let x = lo + (hi - lo) * j as f64 / (samples - 1) as f64;
            self.hess(x) >= -1e-12
        })
    }

    fn is_finite(&self) -> bool {
        match self {
            LocalCost::Poly(p) => p.is_finite(),
        }
    }
}

/// Closed interval `[lower, upper]` for a single agent's decision variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct BoxConstraint {
    lower: f64,
    upper: f64,
}

impl BoxConstraint {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "box bounds must be finite, got [{lower}, {upper}]"
            )));
        }
        if lower > upper {
            return Err(Error::InvalidProblem(format!(
                "box lower bound {lower} exceeds upper bound {upper}"
            )));
        }
        Ok(BoxConstraint { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn project(&self, y: f64) -> f64 {
        y.clamp(self.lower, self.upper)
    }

    /// Distance by which `x` lies outside the box (zero when inside).
    pub fn violation(&self, x: f64) -> f64 {
        (self.lower - x).max(x - self.upper).max(0.0)
    }
}

impl TryFrom<[f64; 2]> for BoxConstraint {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        BoxConstraint::new(v[0], v[1])
    }
}

impl From<BoxConstraint> for [f64; 2] {
    fn from(b: BoxConstraint) -> Self {
        [b.lower, b.upper]
    }
}

pub fn project_box(b: &BoxConstraint, y: f64) -> f64 {
    b.project(y)
}

/// Componentwise projection onto the product of boxes.
pub fn project_all(boxes: &[BoxConstraint], y: &[f64]) -> Result<Vec<f64>> {
    check_dim(boxes.len(), y.len())?;
    Ok(boxes.iter().zip(y).map(|(b, v)| b.project(*v)).collect())
}

/// The non-separable part of the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingCost {
    /// `g(x) = x'Qx/2 + q'x` with `Q` symmetric positive semidefinite.
    Quadratic {
        #[serde(rename = "Q")]
        matrix: Vec<Vec<f64>>,
        q: Vec<f64>,
    },
    /// `g(x) = f0(c - sum_i x_i)`: a supervisor cost on the aggregate residual.
    Aggregator { f0_poly: Polynomial, c: f64 },
}

impl CouplingCost {
    /// `g = 0` on `R^n`.
    pub fn zero(n: usize) -> Self {
        CouplingCost::Quadratic {
            matrix: vec![vec![0.0; n]; n],
            q: vec![0.0; n],
        }
    }

    pub fn aggregator(f0: Vec<f64>, c: f64) -> Self {
        CouplingCost::Aggregator {
            f0_poly: Polynomial::new(f0),
            c,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            CouplingCost::Quadratic { matrix, q } => {
                let quad: f64 = matrix.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum();
                0.5 * quad + dot(q, x)
            }
            CouplingCost::Aggregator { f0_poly, c } => f0_poly.eval(c - x.iter().sum::<f64>()),
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            CouplingCost::Quadratic { matrix, q } => {
                for ((o, row), qi) in out.iter_mut().zip(matrix).zip(q) {
                    *o = dot(row, x) + qi;
                }
            }
            CouplingCost::Aggregator { f0_poly, c } => {
                let g = -f0_poly.derivative(c - x.iter().sum::<f64>());
                out.fill(g);
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.gradient_into(x, &mut out);
        out
    }

    /// Returns the coupling with the aggregate load constant shifted by `dc`.
    pub fn with_load_shift(&self, dc: f64) -> Result<Self> {
        match self {
            CouplingCost::Aggregator { f0_poly, c } => Ok(CouplingCost::Aggregator {
                f0_poly: f0_poly.clone(),
                c: c + dc,
            }),
            CouplingCost::Quadratic { .. } => Err(Error::InvalidParameter(
                "load disturbances apply only to aggregator couplings".into(),
            )),
        }
    }

    /// True when `grad g` is affine in `x`.
    pub fn is_quadratic(&self) -> bool {
        match self {
            CouplingCost::Quadratic { .. } => true,
            CouplingCost::Aggregator { f0_poly, .. } => f0_poly.degree() <= 2,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            CouplingCost::Quadratic { matrix, q } => {
                if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidProblem(format!("Q must be {n}x{n}")));
                }
                if q.len() != n {
                    return Err(Error::InvalidProblem(format!("q must have length {n}")));
                }
                if matrix.iter().flatten().chain(q).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidProblem("Q and q must be finite".into()));
                }
                let scale = matrix.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
                for i in 0..n {
                    for j in 0..i {
                        if (matrix[i][j] - matrix[j][i]).abs() > 1e-12 * scale {
                            return Err(Error::InvalidProblem("Q must be symmetric".into()));
                        }
                    }
                }
                let min_eig = symmetric_eigenvalues(matrix)
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                if n > 0 && min_eig < -1e-10 * scale {
                    return Err(Error::InvalidProblem(format!(
                        "Q must be positive semidefinite (min eigenvalue {min_eig:e})"
                    )));
                }
                Ok(())
            }
            CouplingCost::Aggregator { f0_poly, c } => {
                if !f0_poly.is_finite() || !c.is_finite() {
                    return Err(Error::InvalidProblem(
                        "aggregator coefficients must be finite".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Eigenvalues of a symmetric matrix given as rows.
pub(crate) fn symmetric_eigenvalues(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    SymmetricEigen::new(m).eigenvalues.iter().copied().collect()
}

#[derive(Deserialize)]
struct RawProblem {
    n: usize,
    costs: Vec<LocalCost>,
    coupling: CouplingCost,
    #[serde(default)]
    boxes: Option<Vec<BoxConstraint>>,
}

/// A complete network optimization instance. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem")]
pub struct NetworkProblem {
    n: usize,
    costs: Vec<LocalCost>,
    coupling: CouplingCost,
    boxes: Option<Vec<BoxConstraint>>,
}

impl TryFrom<RawProblem> for NetworkProblem {
    type Error = Error;

    fn try_from(raw: RawProblem) -> Result<Self> {
        if raw.costs.len() != raw.n {
            return Err(Error::InvalidProblem(format!(
                "n = {} but {} costs given",
                raw.n,
                raw.costs.len()
            )));
        }
        NetworkProblem::new(raw.costs, raw.coupling, raw.boxes)
    }
}

impl NetworkProblem {
    pub fn new(
        costs: Vec<LocalCost>,
        coupling: CouplingCost,
        boxes: Option<Vec<BoxConstraint>>,
    ) -> Result<Self> {
        let n = costs.len();
        if n == 0 {
            return Err(Error::InvalidProblem(
                "at least one agent is required".into(),
            ));
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidProblem(
                "cost coefficients must be finite".into(),
            ));
        }
        coupling.validate(n)?;
        if let Some(b) = &boxes {
            if b.len() != n {
                return Err(Error::InvalidProblem(format!(
                    "{} boxes given for {n} agents",
                    b.len()
                )));
            }
            for (i, (cost, bx)) in costs.iter().zip(b).enumerate() {
                if !cost.is_convex_on(bx.lower, bx.upper, 257) {
                    return Err(Error::InvalidProblem(format!(
                        "local cost {i} is not convex on its box"
                    )));
                }
            }
        } else {
            for (i, cost) in costs.iter().enumerate() {
                if cost.is_quadratic() && cost.hess(0.0) < 0.0 {
                    return Err(Error::InvalidProblem(format!("local cost {i} is concave")));
                }
            }
        }
        Ok(NetworkProblem {
            n,
            costs,
            coupling,
            boxes,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn costs(&self) -> &[LocalCost] {
        &self.costs
    }

    pub fn coupling(&self) -> &CouplingCost {
        &self.coupling
    }

    pub fn boxes(&self) -> Option<&[BoxConstraint]> {
        self.boxes.as_deref()
    }

    pub fn require_boxes(&self) -> Result<&[BoxConstraint]> {
        self.boxes().ok_or(Error::MissingBoxes)
    }

    pub fn without_boxes(&self) -> Self {
        NetworkProblem {
            boxes: None,
            ..self.clone()
        }
    }

    /// Same problem with the aggregator's load constant shifted by `dc`.
    pub fn with_load_shift(&self, dc: f64) -> Result<Self> {
        Ok(NetworkProblem {
            coupling: self.coupling.with_load_shift(dc)?,
            ..self.clone()
        })
    }

    /// Every local cost and the coupling have affine gradients.
    pub fn is_all_quadratic(&self) -> bool {
        self.coupling.is_quadratic() && self.costs.iter().all(LocalCost::is_quadratic)
    }

    pub fn eval_objective(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.n, x.len())?;
        let local: f64 = self.costs.iter().zip(x).map(|(f, xi)| f.value(*xi)).sum();
        Ok(local + self.coupling.value(x))
    }

    pub fn grad_local(&self, i: usize, xi: f64) -> Result<f64> {
        Ok(self.cost(i)?.grad(xi))
    }

    pub fn hess_local(&self, i: usize, xi: f64) -> Result<f64> {
        Ok(self.cost(i)?.hess(xi))
    }

    pub fn grad_coupling(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        Ok(self.coupling.gradient(x))
    }

    /// `grad f(x) + grad g(x)`.
    pub fn total_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.grad_coupling(x)?;
        for ((gi, f), xi) in g.iter_mut().zip(&self.costs).zip(x) {
            *gi += f.grad(*xi);
        }
        Ok(g)
    }

    /// Projection onto the feasible set; identity when unconstrained.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self.boxes() {
            Some(b) => project_all(b, y),
            None => {
                check_dim(self.n, y.len())?;
                Ok(y.to_vec())
            }
        }
    }

    /// Largest box violation over all agents (zero when unconstrained).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        match self.boxes() {
            Some(b) => b
                .iter()
                .zip(x)
                .map(|(bx, xi)| bx.violation(*xi))
                .fold(0.0, f64::max),
            None => 0.0,
        }
    }

    pub(crate) fn cost(&self, i: usize) -> Result<&LocalCost> {
        self.costs.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            n: self.n,
        })
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_sq(center: f64) -> LocalCost {
        // (x - c)^2 / 2
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

    #[test]
    fn objective_zero_case() {
        let p = NetworkProblem::new(
            vec![LocalCost::poly(vec![0.0, 0.0, 1.0]); 2],
            CouplingCost::zero(2),
            None,
        )
        .unwrap();
        assert_eq!(p.eval_objective(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn objective_two_agent_quadratic() {
        // Scalar evaluation: f1(1) = 0, f2(2) = 0, g = (1 - 2)^2 / 2.
        let expected = 0.0 + 0.0 + (1.0_f64 - 2.0).powi(2) / 2.0;
        assert_eq!(two_agent().eval_objective(&[1.0, 2.0]).unwrap(), expected);
        assert_eq!(expected, 0.5);
    }

    #[test]
    fn objective_aggregator() {
        let costs = vec![half_sq(1.0), half_sq(2.0)];
        let local: f64 = costs[0].value(0.5) + costs[1].value(0.5);
        let p = NetworkProblem::new(
            costs,
            CouplingCost::aggregator(vec![0.0, 0.0, 1.0], 2.0),
            None,
        )
        .unwrap();
        assert_eq!(p.eval_objective(&[0.5, 0.5]).unwrap(), local + 1.0);
    }

    #[test]
    fn objective_dimension_mismatch() {
        assert!(matches!(
            two_agent().eval_objective(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn local_derivatives() {
        let p = NetworkProblem::new(
            vec![LocalCost::poly(vec![0.0, 0.0, 1.0]), half_sq(1.0)],
            CouplingCost::zero(2),
            None,
        )
        .unwrap();
        assert_eq!(p.grad_local(0, 3.0).unwrap(), 6.0);
        assert_eq!(p.hess_local(0, 3.0).unwrap(), 2.0);
        assert_eq!(p.grad_local(1, 1.0).unwrap(), 0.0);
        assert!(matches!(
            p.grad_local(2, 0.0),
            Err(Error::IndexOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn coupling_gradients() {
        let p = NetworkProblem::new(
            vec![half_sq(0.0); 2],
            CouplingCost::Quadratic {
                matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                q: vec![0.0, 0.0],
            },
            None,
        )
        .unwrap();
        assert_eq!(p.grad_coupling(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);

        // f0(y) = y^2/2, f0'(y) = y, y = 2 - 1 = 1.
        let agg = NetworkProblem::new(
            vec![half_sq(0.0); 2],
            CouplingCost::aggregator(vec![0.0, 0.0, 0.5], 2.0),
            None,
        )
        .unwrap();
        assert_eq!(agg.grad_coupling(&[0.5, 0.5]).unwrap(), vec![-1.0, -1.0]);

        let zero = NetworkProblem::new(vec![half_sq(0.0); 3], CouplingCost::zero(3), None).unwrap();
        assert_eq!(zero.grad_coupling(&[1.0, -4.0, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn projection_examples() {
        let b = BoxConstraint::new(0.0, 0.7).unwrap();
        assert_eq!(project_box(&b, 0.9), 0.7);
        assert_eq!(project_box(&b, 0.3), 0.3);
        assert_eq!(project_box(&b, -0.1), 0.0);
        assert!(project_all(&[b], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(BoxConstraint::new(1.0, 0.0).is_err());
        assert!(BoxConstraint::new(0.0, f64::INFINITY).is_err());
        assert!(NetworkProblem::new(vec![], CouplingCost::zero(0), None).is_err());
        let not_psd = CouplingCost::Quadratic {
            matrix: vec![vec![1.0, 0.0], vec![0.0, -1.0]],
            q: vec![0.0, 0.0],
        };
        assert!(NetworkProblem::new(vec![half_sq(0.0); 2], not_psd, None).is_err());
        let asym = CouplingCost::Quadratic {
            matrix: vec![vec![1.0, 0.5], vec![0.0, 1.0]],
            q: vec![0.0, 0.0],
        };
        assert!(NetworkProblem::new(vec![half_sq(0.0); 2], asym, None).is_err());
        let concave = LocalCost::poly(vec![0.0, 0.0, -1.0]);
        assert!(NetworkProblem::new(vec![concave], CouplingCost::zero(1), None).is_err());
        // x^3 is convex on [0, 1] but not on [-1, 1].
        let cubic = LocalCost::poly(vec![0.0, 0.0, 0.0, 1.0]);
        let ok = BoxConstraint::new(0.0, 1.0).unwrap();
        let bad = BoxConstraint::new(-1.0, 1.0).unwrap();
        assert!(
            NetworkProblem::new(vec![cubic.clone()], CouplingCost::zero(1), Some(vec![ok])).is_ok()
        );
        assert!(NetworkProblem::new(vec![cubic], CouplingCost::zero(1), Some(vec![bad])).is_err());
    }

    #[test]
    fn json_schema() {
        let s = r#"{
            "n": 2,
            "costs": [{"poly": [0.5, -1.0, 0.5]}, {"poly": [2.0, -2.0, 0.5]}],
            "coupling": {"quadratic": {"Q": [[1, -1], [-1, 1]], "q": [0, 0]}},
            "boxes": null
        }"#;
        let p = NetworkProblem::from_json(s).unwrap();
        assert_eq!(p, two_agent());
        let back: NetworkProblem =
            serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);

        let agg = r#"{"n": 1, "costs": [{"poly": [0, 0, 1]}],
                      "coupling": {"aggregator": {"f0_poly": [0, 1, 2], "c": 2.0}},
                      "boxes": [[0, 0.7]]}"#;
        let p = NetworkProblem::from_json(agg).unwrap();
        assert_eq!(p.boxes().unwrap()[0].upper(), 0.7);

        let wrong_n = r#"{"n": 3, "costs": [{"poly": [0, 0, 1]}],
                          "coupling": {"aggregator": {"f0_poly": [0], "c": 0}}, "boxes": null}"#;
        assert!(NetworkProblem::from_json(wrong_n).is_err());
        let bad_box = r#"{"n": 1, "costs": [{"poly": [0, 0, 1]}],
                          "coupling": {"aggregator": {"f0_poly": [0], "c": 0}}, "boxes": [[1, 0]]}"#;
        assert!(NetworkProblem::from_json(bad_box).is_err());
    }

    #[test]
    fn load_shift_only_for_aggregator() {
        assert!(two_agent().with_load_shift(1.0).is_err());
        let p = NetworkProblem::new(
            vec![half_sq(0.0)],
            CouplingCost::aggregator(vec![0.0, 0.0, 1.0], 2.0),
            None,
        )
        .unwrap();
        let shifted = p.with_load_shift(1.0).unwrap();
        assert_eq!(shifted.eval_objective(&[0.0]).unwrap(), 9.0);
    }
}
