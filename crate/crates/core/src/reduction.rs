//! First-order reduction of `sum_j g_j x^(j) = f`.
//!
//! With `u = [x, x', ..., x^(m-1)]` the scalar equation becomes
//! `B u' + A u = F`, where `B = diag(1, ..., 1, g_m)`, `A` has `-1` on the
//! superdiagonal and `[g_0, ..., g_{m-1}]` as its last row, and
//! `F = [0, ..., 0, f]`.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::PolynomialNonlinearODE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderSystem {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    /// Boundary vector `u(0)`.
    pub u_star: Vec<f64>,
}

/// Builds `(A, B)` from `g_0..=g_m`; the boundary vector starts at zero.
pub fn build_system(g: &[f64]) -> Result<FirstOrderSystem> {
    if g.len() < 2 {
        return Err(Error::InvalidEquation(format!(
            "operator of order >= 1 needs at least 2 coefficients, got {}",
            g.len()
        )));
    }
    let m = g.len() - 1;
    if g[m] == 0.0 {
        return Err(Error::InvalidEquation("leading coefficient g_m is zero".into()));
    }
    let mut b = Array2::<f64>::eye(m);
    b[[m - 1, m - 1]] = g[m];
    let mut a = Array2::<f64>::zeros((m, m));
    for i in 0..m - 1 {
        a[[i, i + 1]] = -1.0;
    }
    for (j, &gj) in g[..m].iter().enumerate() {
        a[[m - 1, j]] = gj;
    }
    Ok(FirstOrderSystem {
        a,
        b,
        u_star: vec![0.0; m],
    })
}

impl FirstOrderSystem {
    /// System for the linear part of `ode`, with its boundary vector.
    pub fn from_ode(ode: &PolynomialNonlinearODE) -> Result<Self> {
        let mut sys = build_system(&ode.g)?;
        sys.u_star = ode.boundary_vector();
        Ok(sys)
    }

    pub fn with_boundary(mut self, u_star: Vec<f64>) -> Result<Self> {
        if u_star.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: u_star.len(),
                context: "boundary vector",
            });
        }
        self.u_star = u_star;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `B u' + A u - F`.
    pub fn residual(&self, u: &[f64], u_dot: &[f64], forcing: &[f64]) -> Result<Vec<f64>> {
        let m = self.dim();
        for (v, context) in [(u, "state"), (u_dot, "state derivative"), (forcing, "forcing")] {
            if v.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: v.len(),
                    context,
                });
            }
        }
        let r: Array1<f64> = self.b.dot(&ArrayView1::from(u_dot)) + self.a.dot(&ArrayView1::from(u))
            - ArrayView1::from(forcing);
        Ok(r.to_vec())
    }
}

/// `[0, ..., 0, value]` of length `m`.
pub fn lift_value(m: usize, value: f64) -> Vec<f64> {
    let mut v = vec![0.0; m];
    if m > 0 {
        v[m - 1] = value;
    }
    v
}

/// Lifts a scalar forcing into the last component of an `m`-vector.
pub fn lift_forcing<F>(m: usize, f: F) -> impl Fn(f64) -> Vec<f64>
where
    F: Fn(f64) -> f64,
{
    move |t| lift_value(m, f(t))
}
