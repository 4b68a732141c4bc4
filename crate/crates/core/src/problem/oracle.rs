//! Independent solver for the optimizer `x*`, used only for verification.

use nalgebra::{DMatrix, DVector};

use super::{norm, NetworkProblem};
use crate::error::{Error, Result};

/// Step used in the projected-residual stationarity measure.
pub const ORACLE_STEP: f64 = 1.0;

const MAX_ITERATIONS: usize = 1_000_000;

/// `|| P(x - step * grad F(x)) - x ||` where `P` projects onto the feasible set.
pub fn stationarity_residual(p: &NetworkProblem, x: &[f64], step: f64) -> Result<f64> {
    let g = p.total_gradient(x)?;
    let y: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
    let py = p.project(&y)?;
    Ok(py
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Computes the constrained minimizer to a stationarity residual of `tol`.
///
/// Problems whose gradients are affine are solved by a direct linear solve
/// (on the free variables when boxes are active); everything else falls back
/// to projected gradient with a locally adapted step.
pub fn reference_optimizer(p: &NetworkProblem, tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let affine = if p.is_all_quadratic() {
        Some(AffineGradient::probe(p)?)
    } else {
        None
    };

    if let (Some(a), None) = (&affine, p.boxes()) {
        if let Some(x) = a.solve_free(&vec![true; p.n()], &vec![0.0; p.n()]) {
            if stationarity_residual(p, &x, ORACLE_STEP)? <= tol {
                return Ok(x);
            }
        }
    }

    let mut x = projected_gradient(p, tol)?;
    if let Some(a) = &affine {
        for _ in 0..p.n() + 1 {
            match polish_active_set(p, a, &x)? {
                Some(better) => x = better,
                None => break,
            }
        }
    }
    let residual = stationarity_residual(p, &x, ORACLE_STEP)?;
    if residual <= tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            iterations: MAX_ITERATIONS,
            residual,
        })
    }
}

/// `grad F(x) = A x + r`, recovered exactly by probing unit vectors.
struct AffineGradient {
    a: DMatrix<f64>,
    r: DVector<f64>,
}

impl AffineGradient {
    fn probe(p: &NetworkProblem) -> Result<Self> {
        let n = p.n();
        let zero = vec![0.0; n];
        let r = p.total_gradient(&zero)?;
        let mut a = DMatrix::zeros(n, n);
        let mut e = zero;
        for j in 0..n {
            e[j] = 1.0;
            let col = p.total_gradient(&e)?;
            for i in 0..n {
                a[(i, j)] = col[i] - r[i];
            }
            e[j] = 0.0;
        }
        Ok(AffineGradient {
            a,
            r: DVector::from_vec(r),
        })
    }

    /// Solves for the free coordinates with the others held at `fixed`.
    fn solve_free(&self, free: &[bool], fixed: &[f64]) -> Option<Vec<f64>> {
        let idx: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
        let mut x = fixed.to_vec();
        if idx.is_empty() {
            return Some(x);
        }
        let m = idx.len();
        let mut lhs = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for (a, &i) in idx.iter().enumerate() {
            let mut acc = -self.r[i];
            for j in 0..free.len() {
                if !free[j] {
                    acc -= self.a[(i, j)] * fixed[j];
                }
            }
            rhs[a] = acc;
            for (b, &j) in idx.iter().enumerate() {
                lhs[(a, b)] = self.a[(i, j)];
            }
        }
        let sol = lhs.lu().solve(&rhs)?;
        for (a, &i) in idx.iter().enumerate() {
            x[i] = sol[a];
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

fn projected_gradient(p: &NetworkProblem, tol: f64) -> Result<Vec<f64>> {
    let mut x = p.project(&vec![0.0; p.n()])?;
    let mut g = p.total_gradient(&x)?;
    let mut step = 1.0_f64;
    for _ in 0..MAX_ITERATIONS {
        if stationarity_residual(p, &x, ORACLE_STEP)? <= 0.1 * tol {
            return Ok(x);
        }
        // Shrink until 1/step bounds the local gradient variation.
        loop {
            let y: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let next = p.project(&y)?;
            let gn = p.total_gradient(&next)?;
            let dx: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            if step * norm(&dg) <= norm(&dx) || norm(&dx) == 0.0 {
                x = next;
                g = gn;
                step *= 1.25;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(Error::NonFinite("projected gradient step underflow".into()));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("oracle iterate".into()));
        }
    }
    Ok(x)
}

/// One active-set refinement; returns an improved point if it lowers the residual.
fn polish_active_set(
    p: &NetworkProblem,
    a: &AffineGradient,
    x: &[f64],
) -> Result<Option<Vec<f64>>> {
    let Some(boxes) = p.boxes() else {
        return Ok(None);
    };
    let g = p.total_gradient(x)?;
    let mut free = vec![true; x.len()];
    let mut fixed = x.to_vec();
    for (i, b) in boxes.iter().enumerate() {
        let width = (b.upper() - b.lower()).max(1.0);
        if x[i] - b.lower() <= 1e-7 * width && g[i] > 0.0 {
            free[i] = false;
            fixed[i] = b.lower();
        } else if b.upper() - x[i] <= 1e-7 * width && g[i] < 0.0 {
            free[i] = false;
            fixed[i] = b.upper();
        } else if b.lower() == b.upper() {
            free[i] = false;
            fixed[i] = b.lower();
        }
    }
    let Some(candidate) = a.solve_free(&free, &fixed) else {
        return Ok(None);
    };
    if p.max_violation(&candidate) > 0.0 {
        return Ok(None);
    }
    let before = stationarity_residual(p, x, ORACLE_STEP)?;
    let after = stationarity_residual(p, &candidate, ORACLE_STEP)?;
    Ok((after < before).then_some(candidate))
}
