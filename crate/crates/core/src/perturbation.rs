//! Perturbation cascade for `D x + eps x^q = f`.
//!
//! Substituting `x = sum_{i=0}^p eps^i x_i` and collecting powers of `eps` turns
//! the nonlinear equation into `p + 1` linear equations `D x_j = f_j`, where
//! `f_0 = f` and for `j >= 1`
//!
//! ```text
//! f_j = - sum_{|k| = q, sum_i i k_i = j - 1} q! / (k_0! ... k_p!) prod_i x_i^{k_i}
//! ```
//!
//! Every order shares the same boundary vector, scaled by `1 / sum_i eps^i` so
//! that the recombined series reproduces the original initial conditions.
//!
//! The text form of a [`CascadeSpec`] is TOML:
//!
//! ```toml
//! p = 2
//! q = 2
//! epsilon = 0.5
//! bc_scale = 0.5714285714285714
//!
//! [[levels]]
//! order = 1
//!
//! [[levels.terms]]
//! coefficient = -1.0
//! exponents = [2, 0, 0]
//! ```
//!
//! `levels` lists orders `1..=p` in ascending order; terms inside a level are
//! sorted lexicographically by exponent vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::PolynomialNonlinearODE;

/// Largest degree for which `q!` is computed exactly.
pub const MAX_DEGREE: u32 = 20;

/// One signed multinomial monomial `coefficient * prod_i x_i^{exponents[i]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingTerm {
    pub coefficient: f64,
    pub exponents: Vec<u32>,
}

impl ForcingTerm {
    /// Highest order this term reads, if any.
    pub fn max_order(&self) -> Option<usize> {
        self.exponents.iter().rposition(|&k| k > 0)
    }

    fn eval_at(&self, values: &[Vec<f64>], idx: usize) -> f64 {
        let mut prod = self.coefficient;
        for (i, &k) in self.exponents.iter().enumerate() {
            if k > 0 {
                prod *= values[i][idx].powi(k as i32);
            }
        }
        prod
    }
}

/// Forcing terms of one cascade order `j >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeLevel {
    pub order: usize,
    pub terms: Vec<ForcingTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSpec {
    pub p: usize,
    pub q: u32,
    pub epsilon: f64,
    /// `1 / sum_{i=0}^p eps^i`.
    pub bc_scale: f64,
    pub levels: Vec<CascadeLevel>,
}

/// Every `(k_0, ..., k_p) >= 0` with `sum k_i = q` and `sum i k_i = j - 1`,
/// in lexicographic order. Empty when `j` is outside `1..=p`.
pub fn enumerate_multi_indices(q: u32, p: usize, j: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if j == 0 || j > p {
        return out;
    }
    let mut current = vec![0u32; p + 1];
    fill_indices(0, q, (j - 1) as u64, &mut current, &mut out);
    out
}

fn fill_indices(pos: usize, remaining: u32, weight: u64, current: &mut [u32], out: &mut Vec<Vec<u32>>) {
    if pos == current.len() {
        if remaining == 0 && weight == 0 {
            out.push(current.to_vec());
        }
        return;
    }
    for k in 0..=remaining {
        let w = pos as u64 * k as u64;
        if w > weight {
            break;
        }
        current[pos] = k;
        fill_indices(pos + 1, remaining - k, weight - w, current, out);
    }
    current[pos] = 0;
}

fn factorial(n: u32) -> u128 {
    (1..=n as u128).product()
}

/// `q! / (k_0! k_1! ... k_p!)` in exact integer arithmetic.
pub fn multinomial_coefficient(exponents: &[u32]) -> u128 {
    let q: u32 = exponents.iter().sum();
    exponents
        .iter()
        .fold(factorial(q), |acc, &k| acc / factorial(k))
}

/// `sum_{i=0}^p eps^i`.
pub fn partial_geometric_sum(epsilon: f64, p: usize) -> f64 {
    let mut sum = 0.0;
    let mut pow = 1.0;
    for _ in 0..=p {
        sum += pow;
        pow *= epsilon;
    }
    sum
}

/// Builds the forcing-term table for orders `1..=p`.
pub fn build_cascade(ode: &PolynomialNonlinearODE, p: usize) -> Result<CascadeSpec> {
    build_cascade_raw(ode.q, ode.epsilon, p)
}

/// [`build_cascade`] without an equation instance.
pub fn build_cascade_raw(q: u32, epsilon: f64, p: usize) -> Result<CascadeSpec> {
    if q < 2 {
        return Err(Error::InvalidEquation(format!("degree {q} is not nonlinear")));
    }
    if q > MAX_DEGREE {
        return Err(Error::InvalidEquation(format!(
            "degree {q} exceeds the exact-factorial limit {MAX_DEGREE}"
        )));
    }
    let sum = partial_geometric_sum(epsilon, p);
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::InvalidEquation(format!(
            "sum of eps^i for eps = {epsilon}, p = {p} is {sum}; boundary split undefined"
        )));
    }
    if epsilon.abs() >= 1.0 {
        log::warn!("|eps| = {} >= 1: the truncated series is not expected to converge", epsilon.abs());
    }
    let levels = (1..=p)
        .map(|j| CascadeLevel {
            order: j,
            terms: enumerate_multi_indices(q, p, j)
                .into_iter()
                .map(|exponents| ForcingTerm {
                    coefficient: -(multinomial_coefficient(&exponents) as f64),
                    exponents,
                })
                .collect(),
        })
        .collect();
    Ok(CascadeSpec {
        p,
        q,
        epsilon,
        bc_scale: 1.0 / sum,
        levels,
    })
}

impl CascadeSpec {
    /// Terms of order `j` (`1..=p`). Order 0 has no nonlinear terms.
    pub fn terms(&self, j: usize) -> &[ForcingTerm] {
        if j == 0 || j > self.p {
            &[]
        } else {
            &self.levels[j - 1].terms
        }
    }

    /// Whether `|eps| >= 1`, where truncation is not expected to converge.
    pub fn outside_convergence_region(&self) -> bool {
        self.epsilon.abs() >= 1.0
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }
}

/// `f_j` at every sample, given the values of `x_0 .. x_{j-1}` at the same samples.
///
/// `solved[i][n]` is `x_i` at sample `n`. Terms are summed in table order, so
/// the result is independent of how callers batch the samples.
pub fn evaluate_forcing_values(spec: &CascadeSpec, j: usize, solved: &[Vec<f64>]) -> Result<Vec<f64>> {
    if j == 0 || j > spec.p {
        return Err(Error::InvalidEquation(format!(
            "cascade order {j} outside 1..={}",
            spec.p
        )));
    }
    if solved.len() < j {
        return Err(Error::MissingOrder(solved.len()));
    }
    let n = solved[0].len();
    for v in &solved[..j] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: v.len(),
                context: "solved order samples",
            });
        }
    }
    let terms = spec.terms(j);
    Ok((0..n)
        .map(|idx| terms.iter().fold(0.0, |acc, term| acc + term.eval_at(solved, idx)))
        .collect())
}

/// `f_j(t)` at each `t` from callable order solutions.
pub fn evaluate_forcing<F>(spec: &CascadeSpec, j: usize, solved: &[F], ts: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    if solved.len() < j {
        return Err(Error::MissingOrder(solved.len()));
    }
    let values: Vec<Vec<f64>> = solved[..j]
        .iter()
        .map(|x| ts.iter().map(|&t| x(t)).collect())
        .collect();
    evaluate_forcing_values(spec, j, &values)
}

/// The boundary vector each order receives (identical for all `p + 1` orders).
pub fn split_boundary(ode: &PolynomialNonlinearODE, spec: &CascadeSpec) -> Vec<Vec<f64>> {
    let scaled: Vec<f64> = ode
        .boundary_vector()
        .into_iter()
        .map(|v| v * spec.bc_scale)
        .collect();
    vec![scaled; spec.p + 1]
}

/// `sum_i eps^i x_i` pointwise from per-order sample vectors.
pub fn compose_values(solutions: &[Vec<f64>], epsilon: f64, p: usize) -> Result<Vec<f64>> {
    if solutions.len() != p + 1 {
        return Err(Error::DimensionMismatch {
            expected: p + 1,
            actual: solutions.len(),
            context: "order solutions",
        });
    }
    let n = solutions[0].len();
    let mut out = vec![0.0; n];
    let mut pow = 1.0;
    for sol in solutions {
        if sol.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: sol.len(),
                context: "order samples",
            });
        }
        for (o, v) in out.iter_mut().zip(sol) {
            *o += pow * v;
        }
        pow *= epsilon;
    }
    Ok(out)
}

/// `sum_i eps^i x_i(t)` at each `t` from callable order solutions.
pub fn compose_solution<F>(solutions: &[F], epsilon: f64, p: usize, ts: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    let values: Vec<Vec<f64>> = solutions
        .iter()
        .map(|x| ts.iter().map(|&t| x(t)).collect())
        .collect();
    compose_values(&values, epsilon, p)
}
