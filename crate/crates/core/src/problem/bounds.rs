use serde::{Deserialize, Serialize};

use super::{
    symmetric_eigenvalues, BoxConstraint, CouplingCost, LocalCost, NetworkProblem, Polynomial,
};
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 1001;
pub const DEFAULT_INFLATION: f64 = 1.1;

/// Axis-aligned bounding box over which bounds are computed.
///
/// For unconstrained runs it must contain the initial sublevel set of the
/// objective; that containment is the caller's responsibility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Domain(pub Vec<BoxConstraint>);

impl Domain {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        pairs
            .iter()
            .map(|&(lo, hi)| {
                BoxConstraint::new(lo, hi).map_err(|e| Error::EmptyDomain(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()
            .map(Domain)
    }

    /// Symmetric cube `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Result<Self> {
        Domain::from_pairs(&vec![(-r, r); n])
    }

    pub fn intervals(&self) -> &[BoxConstraint] {
        &self.0
    }
}

/// Bounds used by the trigger rules and inter-event time formulas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimates {
    /// Lipschitz constant of `grad g` over the domain.
    pub lipschitz_grad_g: f64,
    /// Largest second derivative of any local cost over the domain.
    pub hessian_bound: f64,
    pub domain: Domain,
    /// Whether each bound was computed in closed form (no sampling, no inflation).
    pub lipschitz_exact: bool,
    pub hessian_exact: bool,
}

/// Computes `L_g` and `H` over `domain`.
///
/// Closed forms are used whenever the relevant second derivative is affine
/// (quadratic coupling, polynomials of degree at most three); otherwise the
/// maximum is sampled on `samples` points and multiplied by `inflation`.
pub fn estimate_bounds(
    p: &NetworkProblem,
    domain: &Domain,
    samples: usize,
    inflation: f64,
) -> Result<BoundEstimates> {
    if domain.0.is_empty() || domain.0.len() != p.n() {
        return Err(Error::EmptyDomain(format!(
            "domain has {} intervals for {} agents",
            domain.0.len(),
            p.n()
        )));
    }
    if samples < 2 {
        return Err(Error::InvalidParameter(
            "at least two samples are required".into(),
        ));
    }
    if !(inflation >= 1.0 && inflation.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "inflation must be a finite value >= 1, got {inflation}"
        )));
    }

    let (lipschitz_grad_g, lipschitz_exact) = match p.coupling() {
        CouplingCost::Quadratic { matrix, .. } => {
            let top = symmetric_eigenvalues(matrix)
                .into_iter()
                .fold(0.0_f64, |m, e| m.max(e.abs()));
            (top, true)
        }
        CouplingCost::Aggregator { f0_poly, c } => {
            let sum_lo: f64 = domain.0.iter().map(|b| b.lower()).sum();
            let sum_hi: f64 = domain.0.iter().map(|b| b.upper()).sum();
            let (m, exact) = max_abs_second_derivative(f0_poly, c - sum_hi, c - sum_lo, samples)?;
            let m = if exact { m } else { m * inflation };
            // Jacobian of grad g is f0'' * 11^T, whose spectral norm is n |f0''|.
            (p.n() as f64 * m, exact)
        }
    };

    let mut hessian_bound = 0.0_f64;
    let mut hessian_exact = true;
    for (cost, b) in p.costs().iter().zip(domain.intervals()) {
        let LocalCost::Poly(poly) = cost;
        let (h, exact) = max_second_derivative(poly, b.lower(), b.upper(), samples)?;
        let h = if exact { h } else { h * inflation };
        hessian_exact &= exact;
        hessian_bound = hessian_bound.max(h);
    }

    Ok(BoundEstimates {
        lipschitz_grad_g,
        hessian_bound,
        domain: domain.clone(),
        lipschitz_exact,
        hessian_exact,
    })
}

fn sample_points(lo: f64, hi: f64, samples: usize) -> impl Iterator<Item = f64> {
    (0..samples).map(move |j| lo + (hi - lo) * j as f64 / (samples - 1) as f64)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("second derivative sample".into()))
    }
}

fn max_second_derivative(p: &Polynomial, lo: f64, hi: f64, samples: usize) -> Result<(f64, bool)> {
    if p.degree() <= 3 {
        let m = finite(p.second_derivative(lo))?.max(finite(p.second_derivative(hi))?);
        return Ok((m, true));
    }
    let mut m = f64::NEG_INFINITY;
    for x in sample_points(lo, hi, samples) {
        m = m.max(finite(p.second_derivative(x))?);
    }
    Ok((m, false))
}

fn max_abs_second_derivative(
    p: &Polynomial,
    lo: f64,
    hi: f64,
    samples: usize,
) -> Result<(f64, bool)> {
    if p.degree() <= 3 {
        let m = finite(p.second_derivative(lo))?
            .abs()
            .max(finite(p.second_derivative(hi))?.abs());
        return Ok((m, true));
    }
    let mut m = 0.0_f64;
    for y in sample_points(lo, hi, samples) {
        m = m.max(finite(p.second_derivative(y))?.abs());
    }
    Ok((m, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq_costs(n: usize) -> Vec<LocalCost> {
        vec![LocalCost::poly(vec![0.0, 0.0, 1.0]); n]
    }

    #[test]
    fn quadratic_coupling_is_spectral_norm() {
        let p = NetworkProblem::new(
            sq_costs(2),
            CouplingCost::Quadratic {
                matrix: vec![vec![2.0, 0.0], vec![0.0, 1.0]],
                q: vec![0.0, 0.0],
            },
            None,
        )
        .unwrap();
        let b = estimate_bounds(&p, &Domain::cube(2, 10.0).unwrap(), 11, 1.1).unwrap();
        assert!((b.lipschitz_grad_g - 2.0).abs() < 1e-12);
        assert!(b.lipschitz_exact);
        assert_eq!(b.hessian_bound, 2.0);
    }

    #[test]
    fn aggregator_scales_with_n() {
        let p = NetworkProblem::new(
            sq_costs(5),
            CouplingCost::aggregator(vec![0.0, 0.0, 0.5], 2.0),
            None,
        )
        .unwrap();
        let b = estimate_bounds(&p, &Domain::cube(5, 1.0).unwrap(), 11, 1.0).unwrap();
        assert_eq!(b.lipschitz_grad_g, 5.0);
    }

    #[test]
    fn sampled_bounds_are_inflated() {
        // f(x) = x^4, f'' = 12 x^2, max on [-1, 1] is 12 (hit by the endpoints).
        let p = NetworkProblem::new(
            vec![LocalCost::poly(vec![0.0, 0.0, 0.0, 0.0, 1.0])],
            CouplingCost::aggregator(vec![0.0, 0.0, 0.0, 0.0, 1.0], 0.0),
            None,
        )
        .unwrap();
        let b = estimate_bounds(&p, &Domain::cube(1, 1.0).unwrap(), 21, 1.1).unwrap();
        assert!(!b.hessian_exact && !b.lipschitz_exact);
        assert!((b.hessian_bound - 13.2).abs() < 1e-12);
        assert!((b.lipschitz_grad_g - 13.2).abs() < 1e-12);
    }

    #[test]
    fn hessian_constant_for_squares() {
        let p = NetworkProblem::new(sq_costs(3), CouplingCost::zero(3), None).unwrap();
        for r in [0.1, 1.0, 100.0] {
            let b = estimate_bounds(&p, &Domain::cube(3, r).unwrap(), 5, 1.1).unwrap();
            assert_eq!(b.hessian_bound, 2.0);
            assert_eq!(b.lipschitz_grad_g, 0.0);
        }
    }

    #[test]
    fn errors() {
        let p = NetworkProblem::new(sq_costs(2), CouplingCost::zero(2), None).unwrap();
        assert!(matches!(
            estimate_bounds(&p, &Domain(vec![]), 11, 1.1),
            Err(Error::EmptyDomain(_))
        ));
        assert!(Domain::from_pairs(&[(1.0, 0.0)]).is_err());
        assert!(estimate_bounds(&p, &Domain::cube(2, 1.0).unwrap(), 1, 1.1).is_err());
        assert!(estimate_bounds(&p, &Domain::cube(2, 1.0).unwrap(), 11, 0.5).is_err());
        let huge = NetworkProblem::new(
            vec![LocalCost::poly(vec![0.0, 0.0, 0.0, 0.0, 1e300]); 1],
            CouplingCost::zero(1),
            None,
        )
        .unwrap();
        assert!(matches!(
            estimate_bounds(&huge, &Domain::cube(1, 1e10).unwrap(), 11, 1.1),
            Err(Error::NonFinite(_))
        ));
    }
}
