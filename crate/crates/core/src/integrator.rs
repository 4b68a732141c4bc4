//! Fixed-step explicit integrators.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Euler,
    Rk4,
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Advances `x` by one step of length `h` under `field`.
pub fn step<F>(scheme: Scheme, x: &[f64], h: f64, mut field: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    match scheme {
        Scheme::Euler => Ok(axpy(x, h, &field(x)?)),
        Scheme::Rk4 => {
            let k1 = field(x)?;
            let k2 = field(&axpy(x, 0.5 * h, &k1))?;
            let k3 = field(&axpy(x, 0.5 * h, &k2))?;
            let k4 = field(&axpy(x, h, &k3))?;
            Ok(x.iter()
                .enumerate()
                .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect())
        }
    }
}

pub fn step_scalar<F: Fn(f64) -> f64>(scheme: Scheme, x: f64, h: f64, field: F) -> f64 {
    match scheme {
        Scheme::Euler => x + h * field(x),
        Scheme::Rk4 => {
            let k1 = field(x);
            let k2 = field(x + 0.5 * h * k1);
            let k3 = field(x + 0.5 * h * k2);
            let k4 = field(x + h * k3);
            x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_orders() {
        // x' = -x, x(0) = 1, exact x(1) = e^-1.
        let exact = (-1.0_f64).exp();
        let run = |scheme, h: f64| {
            let mut x = 1.0;
            for _ in 0..(1.0 / h).round() as usize {
                x = step_scalar(scheme, x, h, |v| -v);
            }
            (x - exact).abs()
        };
        let e1 = run(Scheme::Euler, 0.01);
        let e2 = run(Scheme::Euler, 0.005);
        assert!((e1 / e2 - 2.0).abs() < 0.05);
        let r1 = run(Scheme::Rk4, 0.1);
        let r2 = run(Scheme::Rk4, 0.05);
        assert!((r1 / r2 - 16.0).abs() < 1.0);
    }

    #[test]
    fn vector_matches_scalar() {
        for scheme in [Scheme::Euler, Scheme::Rk4] {
            let v = step(scheme, &[2.0, -1.0], 0.1, |x| {
                Ok(x.iter().map(|a| -3.0 * a).collect())
            })
            .unwrap();
            assert_eq!(v[0], step_scalar(scheme, 2.0, 0.1, |a| -3.0 * a));
            assert_eq!(v[1], step_scalar(scheme, -1.0, 0.1, |a| -3.0 * a));
        }
    }
}
