//! Equation data model: `D x + eps * x^q = f(t)` with a constant-coefficient
//! linear operator `D = sum_j g_j d^j/dt^j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side `f(t)` of the equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forcing {
    Zero,
    /// `amplitude * cos(frequency * t)`.
    Cosine { amplitude: f64, frequency: f64 },
    /// `c_0 + c_1 t + c_2 t^2 + ...`.
    Polynomial { coefficients: Vec<f64> },
}

impl Forcing {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::Cosine {
                amplitude,
                frequency,
            } => amplitude * (frequency * t).cos(),
            Forcing::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
        }
    }

    pub fn eval_batch(&self, ts: &[f64]) -> Vec<f64> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }

    fn is_finite(&self) -> bool {
        match self {
            Forcing::Zero => true,
            Forcing::Cosine {
                amplitude,
                frequency,
            } => amplitude.is_finite() && frequency.is_finite(),
            Forcing::Polynomial { coefficients } => coefficients.iter().all(|c| c.is_finite()),
        }
    }
}

/// One instance of the equation class, including its initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialNonlinearODE {
    /// Operator coefficients `g_0 ..= g_m`.
    pub g: Vec<f64>,
    /// Degree of the nonlinearity.
    pub q: u32,
    pub epsilon: f64,
    pub forcing: Forcing,
    /// `x(0)`.
    pub bc_value: f64,
    /// `x^(j)(0)` for `j = 1 .. m-1`.
    pub bc_derivatives: Vec<f64>,
}

impl PolynomialNonlinearODE {
    pub fn new(
        g: Vec<f64>,
        q: u32,
        epsilon: f64,
        forcing: Forcing,
        bc_value: f64,
        bc_derivatives: Vec<f64>,
    ) -> Result<Self> {
        let ode = Self {
            g,
            q,
            epsilon,
            forcing,
            bc_value,
            bc_derivatives,
        };
        ode.validate()?;
        Ok(ode)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g.len() < 2 {
            return Err(Error::InvalidEquation(format!(
                "operator needs at least g_0 and g_1, got {} coefficients",
                self.g.len()
            )));
        }
        if self.g.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidEquation("non-finite operator coefficient".into()));
        }
        if self.g[self.g.len() - 1] == 0.0 {
            return Err(Error::InvalidEquation("leading coefficient g_m is zero".into()));
        }
        if self.q < 2 {
            return Err(Error::InvalidEquation(format!(
                "nonlinearity degree must be at least 2, got {}",
                self.q
            )));
        }
        if !self.epsilon.is_finite() {
            return Err(Error::InvalidEquation("non-finite epsilon".into()));
        }
        if !self.forcing.is_finite() {
            return Err(Error::InvalidEquation("non-finite forcing parameters".into()));
        }
        let m = self.order();
        if self.bc_derivatives.len() != m - 1 {
            return Err(Error::DimensionMismatch {
                expected: m - 1,
                actual: self.bc_derivatives.len(),
                context: "boundary derivatives",
            });
        }
        if !self.bc_value.is_finite() || self.bc_derivatives.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEquation("non-finite boundary value".into()));
        }
        Ok(())
    }

    /// Differential order `m`.
    pub fn order(&self) -> usize {
        self.g.len() - 1
    }

    /// `[x*, x^(1)*, ..., x^(m-1)*]`.
    pub fn boundary_vector(&self) -> Vec<f64> {
        std::iter::once(self.bc_value)
            .chain(self.bc_derivatives.iter().copied())
            .collect()
    }
}

/// `x'' + delta x' + alpha x + beta x^3 = gamma cos(omega t)`, `x(0) = x0`, `x'(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuffingParams {
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub omega: f64,
    pub x0: f64,
}

impl DuffingParams {
    pub fn to_ode(&self) -> Result<PolynomialNonlinearODE> {
        PolynomialNonlinearODE::new(
            vec![self.alpha, self.delta, 1.0],
            3,
            self.beta,
            self.forcing(),
            self.x0,
            vec![0.0],
        )
    }

    pub fn forcing(&self) -> Forcing {
        Forcing::Cosine {
            amplitude: self.gamma,
            frequency: self.omega,
        }
    }

    /// Same instance with the cubic term removed.
    pub fn linear_part(&self) -> Self {
        Self { beta: 0.0, ..*self }
    }

    /// Scalar residual `x'' + delta x' + alpha x + beta x^3 - gamma cos(omega t)`.
    pub fn residual(&self, t: f64, x: f64, xdot: f64, xddot: f64) -> f64 {
        xddot + self.delta * xdot + self.alpha * x + self.beta * x * x * x
            - self.gamma * (self.omega * t).cos()
    }
}
