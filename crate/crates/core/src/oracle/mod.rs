//! Reference integrator: adaptive DOP853 with dense output.
//!
//! Step-size control and the initial step heuristic follow the usual
//! Hairer-Norsett-Wanner scheme with the 5th/3rd-order blended error estimate.

mod tableau;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::DuffingParams;

use tableau::{A, B, C, D, E3, E5, INTERPOLATOR_POWER, N_STAGES, N_STAGES_EXTENDED};

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;
/// State magnitude treated as finite-time blow-up.
pub const BLOW_UP: f64 = 1e8;

/// Integrator tolerances and step budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_steps: 200_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) || !self.rel_tol.is_finite() || !self.abs_tol.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "integrator tolerances must be positive (rel {}, abs {})",
                self.rel_tol, self.abs_tol
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn method(&self) -> &'static str {
        "dop853"
    }
}

fn rms(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    (v.map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

fn initial_step<F>(f: &mut F, t0: f64, y0: &[f64], f0: &[f64], span: f64, cfg: &IntegratorConfig) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let scale: Vec<f64> = y0.iter().map(|y| cfg.abs_tol + y.abs() * cfg.rel_tol).collect();
    let d0 = rms(y0.iter().zip(&scale).map(|(y, s)| y / s), n);
    let d1 = rms(f0.iter().zip(&scale).map(|(y, s)| y / s), n);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    f(t0 + h0, &y1, &mut f1);
    let d2 = rms(f1.iter().zip(f0).zip(&scale).map(|((a, b), s)| (a - b) / s), n) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 8.0)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `y' = f(t, y)` from `(t0, y0)` and returns the state at every
/// time in `grid` (non-decreasing, all `>= t0`).
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], grid: &[f64], cfg: &IntegratorConfig) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    cfg.validate()?;
    if let Some(w) = grid.windows(2).find(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidConfig(format!("grid not increasing at {} -> {}", w[0], w[1])));
    }
    if let Some(&t) = grid.iter().find(|&&t| !t.is_finite() || t < t0) {
        return Err(Error::InvalidConfig(format!("grid time {t} precedes the initial time {t0}")));
    }
    let n = y0.len();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(grid.len());
    let mut next = 0;
    while next < grid.len() && grid[next] == t0 {
        out.push(y0.to_vec());
        next += 1;
    }
    let Some(&t_end) = grid.last() else {
        return Ok(out);
    };
    if next == grid.len() {
        return Ok(out);
    }

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut fy = vec![0.0; n];
    f(t, &y, &mut fy);
    let mut h_abs = initial_step(&mut f, t, &y, &fy, t_end - t0, cfg);

    let mut k = vec![vec![0.0; n]; N_STAGES_EXTENDED];
    let mut y_new = vec![0.0; n];
    let mut f_new = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut steps = 0usize;

    while next < grid.len() {
        let min_step = 10.0 * (t.next_up() - t).abs();
        h_abs = h_abs.max(min_step);
        let mut rejected = false;
        let h = loop {
            if h_abs < min_step {
                return Err(Error::StepUnderflow { t });
            }
            steps += 1;
            if steps > cfg.max_steps {
                return Err(Error::StepLimit {
                    max_steps: cfg.max_steps,
                    t,
                });
            }
            let t_new = (t + h_abs).min(t_end);
            let h = t_new - t;

            k[0].copy_from_slice(&fy);
            for s in 1..N_STAGES {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[i];
                    }
                    stage[i] = y[i] + h * acc;
                }
                f(t + C[s] * h, &stage, &mut k[s]);
            }
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(N_STAGES) {
                    acc += B[j] * kj[i];
                }
                y_new[i] = y[i] + h * acc;
            }
            f(t + h, &y_new, &mut f_new);
            k[N_STAGES].copy_from_slice(&f_new);

            let mut e5 = 0.0;
            let mut e3 = 0.0;
            for i in 0..n {
                let scale = cfg.abs_tol + y[i].abs().max(y_new[i].abs()) * cfg.rel_tol;
                let (mut a5, mut a3) = (0.0, 0.0);
                for (j, kj) in k.iter().enumerate().take(N_STAGES + 1) {
                    a5 += E5[j] * kj[i];
                    a3 += E3[j] * kj[i];
                }
                e5 += (a5 / scale).powi(2);
                e3 += (a3 / scale).powi(2);
            }
            let err = if e5 == 0.0 && e3 == 0.0 {
                0.0
            } else {
                h.abs() * e5 / ((e5 + 0.01 * e3) * n as f64).sqrt()
            };
            if !err.is_finite() {
                // shrink and retry; a non-finite estimate means the trial step overflowed
                h_abs *= MIN_FACTOR;
                rejected = true;
                continue;
            }
            if err < 1.0 {
                let mut factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(ERROR_EXPONENT)).min(MAX_FACTOR)
                };
                if rejected {
                    factor = factor.min(1.0);
                }
                h_abs *= factor;
                break h;
            }
            h_abs *= (SAFETY * err.powf(ERROR_EXPONENT)).max(MIN_FACTOR);
            rejected = true;
        };
        let t_new = if t + h >= t_end { t_end } else { t + h };

        // dense output on any grid points inside (t, t_new]
        if next < grid.len() && grid[next] <= t_new {
            for s in N_STAGES + 1..N_STAGES_EXTENDED {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[i];
                    }
                    stage[i] = y[i] + h * acc;
                }
                f(t + C[s] * h, &stage, &mut k[s]);
            }
            let mut coeffs = vec![vec![0.0; n]; INTERPOLATOR_POWER];
            for i in 0..n {
                let dy = y_new[i] - y[i];
                coeffs[0][i] = dy;
                coeffs[1][i] = h * k[0][i] - dy;
                coeffs[2][i] = 2.0 * dy - h * (f_new[i] + k[0][i]);
                for (r, d) in D.iter().enumerate() {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate() {
                        acc += d[j] * kj[i];
                    }
                    coeffs[3 + r][i] = h * acc;
                }
            }
            while next < grid.len() && grid[next] <= t_new {
                if grid[next] == t_new {
                    out.push(y_new.clone());
                } else {
                    let x = (grid[next] - t) / h;
                    let mut v = vec![0.0; n];
                    for (p, c) in coeffs.iter().rev().enumerate() {
                        for i in 0..n {
                            v[i] += c[i];
                            v[i] *= if p % 2 == 0 { x } else { 1.0 - x };
                        }
                    }
                    for i in 0..n {
                        v[i] += y[i];
                    }
                    out.push(v);
                }
                next += 1;
            }
        }

        t = t_new;
        std::mem::swap(&mut y, &mut y_new);
        std::mem::swap(&mut fy, &mut f_new);
        let norm = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(norm <= BLOW_UP) {
            return Err(Error::BlowUp { t, norm });
        }
    }
    Ok(out)
}

/// Position and velocity samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// Integrates the full Duffing equation from `t = 0` with state `u0 = [x, x']`.
pub fn integrate_duffing(params: &DuffingParams, u0: [f64; 2], grid: &[f64], cfg: &IntegratorConfig) -> Result<Trajectory> {
    let p = *params;
    for (name, v) in [
        ("delta", p.delta),
        ("alpha", p.alpha),
        ("beta", p.beta),
        ("gamma", p.gamma),
        ("omega", p.omega),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidEquation(format!("{name} = {v}")));
        }
    }
    let rhs = move |t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = p.gamma * (p.omega * t).cos() - p.delta * y[1] - p.alpha * y[0] - p.beta * y[0] * y[0] * y[0];
    };
    let states = integrate(rhs, 0.0, &u0, grid, cfg)?;
    Ok(Trajectory {
        t: grid.to_vec(),
        x: states.iter().map(|s| s[0]).collect(),
        v: states.iter().map(|s| s[1]).collect(),
    })
}

/// Agreement between two sampled signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub linf: f64,
    pub rel_l2: f64,
}

/// `L_inf = max |a - b|` and `|a - b|_2 / max(|b|_2, 1e-12)`.
pub fn compare(a: &[f64], b: &[f64]) -> Result<Metrics> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            actual: a.len(),
            context: "compared trajectories",
        });
    }
    let mut linf = 0.0f64;
    let mut diff = 0.0;
    let mut base = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        linf = linf.max(d.abs());
        diff += d * d;
        base += y * y;
    }
    Ok(Metrics {
        linf,
        rel_l2: diff.sqrt() / base.sqrt().max(1e-12),
    })
}
