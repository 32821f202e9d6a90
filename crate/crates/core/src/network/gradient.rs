//! Reverse pass for the multi-head training objective.
//!
//! The loss reads both `H` and `dH/dt`, so the reverse pass carries two
//! adjoints per layer: one for the activations and one for their time
//! tangents. For a layer `a = tanh(z)`, `a' = (1 - a^2) z'` this gives
//!
//! ```text
//! zbar'  = (1 - a^2) * abar'
//! zbar   = (1 - a^2) * (abar - 2 a z' abar')
//! Wbar  += zbar^T a_prev + zbar'^T a_prev'
//! ```

use ndarray::{s, Array1, Array2, Zip};

use super::{column_sums, forward_tape, matmul, HeadWeights, TrunkParams, TrunkSpec};
use crate::error::{Error, Result};
use crate::ode::Forcing;
use crate::reduction::FirstOrderSystem;

/// One head's linear system `B u' + A u = [0, .., f(t)]`, `u(0) = u_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadProblem {
    pub system: FirstOrderSystem,
    pub forcing: Forcing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_head: Vec<f64>,
}

/// Gradient of the mean head loss, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub heads: Vec<Array1<f64>>,
}

impl Gradients {
    /// Parameter slices in a fixed order: layer weights, layer biases, heads.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .map(|w| w.as_slice().expect("standard layout"))
            .chain(self.biases.iter().map(|b| b.as_slice().expect("standard layout")))
            .chain(self.heads.iter().map(|h| h.as_slice().expect("standard layout")))
            .collect()
    }

    fn check_finite(&self) -> Result<()> {
        for (l, w) in self.weights.iter().enumerate() {
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    path: format!("trunk.layers[{l}].weights"),
                });
            }
        }
        for (l, b) in self.biases.iter().enumerate() {
            if !b.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    path: format!("trunk.layers[{l}].biases"),
                });
            }
        }
        for (k, h) in self.heads.iter().enumerate() {
            if !h.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    path: format!("heads[{k}]"),
                });
            }
        }
        Ok(())
    }
}

/// Loss `(1/K) sum_k L_k` over collocation times `ts` (boundary `t = 0` is
/// added internally) and its exact gradient with respect to every trunk and
/// head parameter.
pub fn loss_and_gradient(
    spec: &TrunkSpec,
    params: &TrunkParams,
    heads: &[HeadWeights],
    problems: &[HeadProblem],
    ts: &[f64],
) -> Result<(LossReport, Gradients)> {
    let (m, h) = (spec.m, spec.h);
    let k_heads = heads.len();
    if problems.len() != k_heads || k_heads == 0 {
        return Err(Error::DimensionMismatch {
            expected: k_heads,
            actual: problems.len(),
            context: "head problems",
        });
    }
    for (w, prob) in heads.iter().zip(problems) {
        if w.len() != h {
            return Err(Error::DimensionMismatch {
                expected: h,
                actual: w.len(),
                context: "head weights",
            });
        }
        if prob.system.dim() != m || prob.system.u_star.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: prob.system.dim(),
                context: "head system",
            });
        }
    }
    params.check_shapes(spec)?;

    let n_coll = ts.len();
    let mut times = ts.to_vec();
    times.push(0.0);
    let n = times.len();
    let tape = forward_tape(params, &times)?;
    let layers = params.weights.len();
    let top = &tape.acts[layers];
    let top_dot = &tape.act_tangents[layers];

    let mut w_mat = Array2::<f64>::zeros((h, k_heads));
    for (k, w) in heads.iter().enumerate() {
        w_mat.column_mut(k).assign(&w.0);
    }
    let u: Vec<Array2<f64>> = (0..m)
        .map(|r| matmul(&top.slice(s![.., r * h..(r + 1) * h]), &w_mat))
        .collect();
    let u_dot: Vec<Array2<f64>> = (0..m)
        .map(|r| matmul(&top_dot.slice(s![.., r * h..(r + 1) * h]), &w_mat))
        .collect();

    // adjoints of u and u' per row r, n x K
    let mut g_u: Vec<Array2<f64>> = (0..m).map(|_| Array2::zeros((n, k_heads))).collect();
    let mut g_u_dot: Vec<Array2<f64>> = (0..m).map(|_| Array2::zeros((n, k_heads))).collect();
    let mut per_head = vec![0.0; k_heads];

    let res_scale = if n_coll > 0 {
        2.0 / (m * n_coll * k_heads) as f64
    } else {
        0.0
    };
    let bc_scale = 2.0 / (m * k_heads) as f64;
    let mut state = vec![0.0; m];
    let mut state_dot = vec![0.0; m];
    let mut res = vec![0.0; m];
    for (k, prob) in problems.iter().enumerate() {
        let a = &prob.system.a;
        let b = &prob.system.b;
        let mut residual_sum = 0.0;
        for (i, &t) in ts.iter().enumerate() {
            for r in 0..m {
                state[r] = u[r][[i, k]];
                state_dot[r] = u_dot[r][[i, k]];
            }
            for r in 0..m {
                let mut acc = 0.0;
                for c in 0..m {
                    acc += b[[r, c]] * state_dot[c] + a[[r, c]] * state[c];
                }
                res[r] = acc;
            }
            res[m - 1] -= prob.forcing.eval(t);
            residual_sum += res.iter().map(|v| v * v).sum::<f64>();
            for c in 0..m {
                let mut ga = 0.0;
                let mut gb = 0.0;
                for r in 0..m {
                    ga += a[[r, c]] * res[r];
                    gb += b[[r, c]] * res[r];
                }
                g_u[c][[i, k]] = res_scale * ga;
                g_u_dot[c][[i, k]] = res_scale * gb;
            }
        }
        let mut bc = 0.0;
        for r in 0..m {
            let d = u[r][[n_coll, k]] - prob.system.u_star[r];
            bc += d * d;
            g_u[r][[n_coll, k]] = bc_scale * d;
        }
        per_head[k] = if n_coll > 0 {
            residual_sum / (m * n_coll) as f64
        } else {
            0.0
        } + bc / m as f64;
    }

    let mut g_w = Array2::<f64>::zeros((h, k_heads));
    let mut a_bar = Array2::<f64>::zeros((n, m * h));
    let mut a_dot_bar = Array2::<f64>::zeros((n, m * h));
    for r in 0..m {
        let block = top.slice(s![.., r * h..(r + 1) * h]);
        let block_dot = top_dot.slice(s![.., r * h..(r + 1) * h]);
        g_w += &matmul(&block.t(), &g_u[r]);
        g_w += &matmul(&block_dot.t(), &g_u_dot[r]);
        a_bar
            .slice_mut(s![.., r * h..(r + 1) * h])
            .assign(&matmul(&g_u[r], &w_mat.t()));
        a_dot_bar
            .slice_mut(s![.., r * h..(r + 1) * h])
            .assign(&matmul(&g_u_dot[r], &w_mat.t()));
    }

    let mut g_weights = vec![Array2::zeros((0, 0)); layers];
    let mut g_biases = vec![Array1::zeros(0); layers];
    for l in (0..layers).rev() {
        let act = &tape.acts[l + 1];
        let z_dot = &tape.pre_tangents[l];
        // zbar' = s * abar' ; zbar = s * (abar - 2 a z' abar')
        let mut z_dot_bar = a_dot_bar;
        let mut z_bar = a_bar;
        Zip::from(&mut z_bar)
            .and(&mut z_dot_bar)
            .and(act)
            .and(z_dot)
            .for_each(|zb, zdb, &a, &zd| {
                let slope = 1.0 - a * a;
                *zb = slope * (*zb - 2.0 * a * zd * *zdb);
                *zdb *= slope;
            });
        let prev = &tape.acts[l];
        let prev_dot = &tape.act_tangents[l];
        let mut gw = matmul(&z_bar.t(), prev);
        gw += &matmul(&z_dot_bar.t(), prev_dot);
        g_weights[l] = gw;
        g_biases[l] = column_sums(&z_bar);
        if l > 0 {
            let w = &params.weights[l];
            a_bar = matmul(&z_bar, w);
            a_dot_bar = matmul(&z_dot_bar, w);
        } else {
            a_bar = Array2::zeros((0, 0));
            a_dot_bar = Array2::zeros((0, 0));
        }
    }
    let _ = (a_bar, a_dot_bar);

    let grads = Gradients {
        weights: g_weights,
        biases: g_biases,
        heads: (0..k_heads).map(|k| g_w.column(k).to_owned()).collect(),
    };
    grads.check_finite()?;
    let total = per_head.iter().sum::<f64>() / k_heads as f64;
    Ok((LossReport { total, per_head }, grads))
}
