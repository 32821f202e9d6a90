//! Multi-head fully connected network.
//!
//! The trunk maps a scalar time `t` through `tanh` layers to a vector of width
//! `m * h`, reshaped row-major into the hidden state `H(t)` (`m x h`): entry
//! `(r, c)` is activation `r * h + c`. Each head is a vector `W` of length `h`
//! and outputs `u = H W`. The trunk also carries the tangent `dH/dt`, computed
//! by pushing `d/dt` forward through every layer alongside the values.

mod gradient;

pub use gradient::{loss_and_gradient, Gradients, HeadProblem, LossReport};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand::distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduction::FirstOrderSystem;

/// Shape of the trunk. Input width is always 1 (time).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrunkSpec {
    /// Widths of the hidden layers; the last one must equal `m * h`.
    pub layer_widths: Vec<usize>,
    /// System dimension (rows of `H`).
    pub m: usize,
    /// Columns of `H` (length of each head vector).
    pub h: usize,
}

impl TrunkSpec {
    pub fn new(layer_widths: Vec<usize>, m: usize, h: usize) -> Result<Self> {
        let spec = Self { layer_widths, m, h };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(Error::InvalidConfig("trunk needs at least one hidden layer".into()));
        }
        if self.layer_widths.iter().any(|&w| w == 0) || self.m == 0 || self.h == 0 {
            return Err(Error::InvalidConfig("trunk widths must be positive".into()));
        }
        let last = *self.layer_widths.last().unwrap();
        if last != self.m * self.h {
            return Err(Error::InvalidConfig(format!(
                "final width {last} must equal m * h = {} * {}",
                self.m, self.h
            )));
        }
        Ok(())
    }

    /// Input width of each layer.
    fn fan_ins(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(1).chain(self.layer_widths.iter().copied())
    }
}

/// Weights (`out x in`) and biases of each trunk layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl TrunkParams {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(spec: &TrunkSpec, rng: &mut R) -> Self {
        let mut weights = Vec::with_capacity(spec.layer_widths.len());
        let mut biases = Vec::with_capacity(spec.layer_widths.len());
        for (fan_in, &out) in spec.fan_ins().zip(&spec.layer_widths) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new(-bound, bound).expect("positive bound");
            weights.push(Array2::from_shape_fn((out, fan_in), |_| rng.sample(dist)));
            biases.push(Array1::from_shape_fn(out, |_| rng.sample(dist)));
        }
        Self { weights, biases }
    }

    pub fn zeros(spec: &TrunkSpec) -> Self {
        Self {
            weights: spec
                .fan_ins()
                .zip(&spec.layer_widths)
                .map(|(i, &o)| Array2::zeros((o, i)))
                .collect(),
            biases: spec.layer_widths.iter().map(|&o| Array1::zeros(o)).collect(),
        }
    }

    pub fn check_shapes(&self, spec: &TrunkSpec) -> Result<()> {
        if self.weights.len() != spec.layer_widths.len() || self.biases.len() != spec.layer_widths.len() {
            return Err(Error::DimensionMismatch {
                expected: spec.layer_widths.len(),
                actual: self.weights.len(),
                context: "trunk layer count",
            });
        }
        for ((w, b), (fan_in, &out)) in self
            .weights
            .iter()
            .zip(&self.biases)
            .zip(spec.fan_ins().zip(&spec.layer_widths))
        {
            if w.dim() != (out, fan_in) || b.len() != out {
                return Err(Error::DimensionMismatch {
                    expected: out * fan_in,
                    actual: w.len(),
                    context: "trunk layer shape",
                });
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }
}

/// Output weights of one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights(pub Array1<f64>);

impl HeadWeights {
    pub fn zeros(h: usize) -> Self {
        Self(Array1::zeros(h))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Trunk plus all training heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadNet {
    pub spec: TrunkSpec,
    pub trunk: TrunkParams,
    pub heads: Vec<HeadWeights>,
}

impl MultiHeadNet {
    /// Fresh network; heads use the same fan-in rule as the trunk (fan-in `h`).
    pub fn init<R: Rng + ?Sized>(spec: TrunkSpec, k_heads: usize, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let trunk = TrunkParams::init(&spec, rng);
        let bound = 1.0 / (spec.h as f64).sqrt();
        let dist = Uniform::new(-bound, bound).expect("positive bound");
        let heads = (0..k_heads)
            .map(|_| HeadWeights(Array1::from_shape_fn(spec.h, |_| rng.sample(dist))))
            .collect();
        Ok(Self { spec, trunk, heads })
    }

    /// Mutable parameter slices, in the order of [`Gradients::slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let TrunkParams { weights, biases } = &mut self.trunk;
        weights
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("standard layout"))
            .chain(biases.iter_mut().map(|b| b.as_slice_mut().expect("standard layout")))
            .chain(self.heads.iter_mut().map(|h| h.0.as_slice_mut().expect("standard layout")))
            .collect()
    }

    pub fn forward(&self, ts: &[f64]) -> Result<TrunkBatch> {
        trunk_forward_batch(&self.spec, &self.trunk, ts)
    }
}

/// Hidden state and its time derivative at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrunkEval {
    pub h: Array2<f64>,
    pub h_dot: Array2<f64>,
}

/// Trunk output over a batch: row `n` holds the flattened `H` (resp. `dH/dt`)
/// at time `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrunkBatch {
    pub m: usize,
    pub h: usize,
    pub values: Array2<f64>,
    pub tangents: Array2<f64>,
}

impl TrunkBatch {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn hidden(&self, n: usize) -> ArrayView2<'_, f64> {
        self.values
            .row(n)
            .into_shape_with_order((self.m, self.h))
            .expect("row-major reshape")
    }

    pub fn hidden_dot(&self, n: usize) -> ArrayView2<'_, f64> {
        self.tangents
            .row(n)
            .into_shape_with_order((self.m, self.h))
            .expect("row-major reshape")
    }

    pub fn eval(&self, n: usize) -> TrunkEval {
        TrunkEval {
            h: self.hidden(n).to_owned(),
            h_dot: self.hidden_dot(n).to_owned(),
        }
    }

    /// Columns `r*h .. (r+1)*h` of the values: row `r` of `H` at every time.
    pub fn row_block(&self, r: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![.., r * self.h..(r + 1) * self.h])
    }

    pub fn row_block_dot(&self, r: usize) -> ArrayView2<'_, f64> {
        self.tangents.slice(s![.., r * self.h..(r + 1) * self.h])
    }

    /// `(u, u')` for one head at every time: `n x m` each.
    pub fn head_outputs(&self, w: &HeadWeights) -> (Array2<f64>, Array2<f64>) {
        let n = self.len();
        let mut u = Array2::zeros((n, self.m));
        let mut u_dot = Array2::zeros((n, self.m));
        for r in 0..self.m {
            u.column_mut(r).assign(&self.row_block(r).dot(&w.0));
            u_dot.column_mut(r).assign(&self.row_block_dot(r).dot(&w.0));
        }
        (u, u_dot)
    }
}

/// Intermediate values kept for the reverse pass.
pub(crate) struct ForwardTape {
    /// Layer outputs; entry 0 is the input column.
    pub acts: Vec<Array2<f64>>,
    /// d/dt of the layer outputs; entry 0 is all ones.
    pub act_tangents: Vec<Array2<f64>>,
    /// d/dt of the pre-activations, one per layer.
    pub pre_tangents: Vec<Array2<f64>>,
}

pub(crate) fn forward_tape(params: &TrunkParams, ts: &[f64]) -> Result<ForwardTape> {
    let n = ts.len();
    let mut acts = vec![Array2::from_shape_vec((n, 1), ts.to_vec()).expect("column")];
    let mut act_tangents = vec![Array2::ones((n, 1))];
    let mut pre_tangents = Vec::with_capacity(params.weights.len());
    for (layer, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let prev = acts.last().unwrap();
        let prev_dot = act_tangents.last().unwrap();
        let mut a = matmul(prev, &w.t());
        let z_dot = matmul(prev_dot, &w.t());
        a += b;
        a.mapv_inplace(f64::tanh);
        let mut a_dot = z_dot.clone();
        Zip::from(&mut a_dot).and(&a).for_each(|d, &v| *d *= 1.0 - v * v);
        if !a.iter().chain(a_dot.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteActivation { layer });
        }
        acts.push(a);
        act_tangents.push(a_dot);
        pre_tangents.push(z_dot);
    }
    Ok(ForwardTape {
        acts,
        act_tangents,
        pre_tangents,
    })
}

/// `H(t)` and `dH/dt` for every `t` as one batch.
pub fn trunk_forward_batch(spec: &TrunkSpec, params: &TrunkParams, ts: &[f64]) -> Result<TrunkBatch> {
    if let Some(&t) = ts.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite evaluation time {t}")));
    }
    params.check_shapes(spec)?;
    let mut tape = forward_tape(params, ts)?;
    Ok(TrunkBatch {
        m: spec.m,
        h: spec.h,
        values: tape.acts.pop().unwrap(),
        tangents: tape.act_tangents.pop().unwrap(),
    })
}

/// `H(t)` and `dH/dt` for every `t`.
pub fn trunk_forward(spec: &TrunkSpec, params: &TrunkParams, ts: &[f64]) -> Result<Vec<TrunkEval>> {
    let batch = trunk_forward_batch(spec, params, ts)?;
    Ok((0..batch.len()).map(|n| batch.eval(n)).collect())
}

/// `(H W, H' W)`.
pub fn head_forward(eval: &TrunkEval, w: &HeadWeights) -> Result<(Array1<f64>, Array1<f64>)> {
    if eval.h.ncols() != w.len() || eval.h_dot.dim() != eval.h.dim() {
        return Err(Error::DimensionMismatch {
            expected: eval.h.ncols(),
            actual: w.len(),
            context: "head weights",
        });
    }
    Ok((eval.h.dot(&w.0), eval.h_dot.dot(&w.0)))
}

/// Per-head loss: mean squared residual of `B u' + A u = F` over the
/// collocation points, divided by `m`, plus the squared boundary error at
/// `t = 0`, divided by `m`.
pub fn head_loss(
    system: &FirstOrderSystem,
    collocation: &[TrunkEval],
    boundary: &TrunkEval,
    w: &HeadWeights,
    forcing: &[Vec<f64>],
    u_star: &[f64],
) -> Result<f64> {
    let m = system.dim();
    if forcing.len() != collocation.len() {
        return Err(Error::DimensionMismatch {
            expected: collocation.len(),
            actual: forcing.len(),
            context: "forcing samples",
        });
    }
    if u_star.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: u_star.len(),
            context: "boundary vector",
        });
    }
    let n = collocation.len();
    let mut residual_sum = 0.0;
    for (eval, f) in collocation.iter().zip(forcing) {
        let (u, u_dot) = head_forward(eval, w)?;
        let r = system.residual(u.as_slice().unwrap(), u_dot.as_slice().unwrap(), f)?;
        residual_sum += r.iter().map(|v| v * v).sum::<f64>();
    }
    let (u0, _) = head_forward(boundary, w)?;
    let bc: f64 = u0.iter().zip(u_star).map(|(a, b)| (a - b) * (a - b)).sum();
    let residual_term = if n == 0 { 0.0 } else { residual_sum / (m * n) as f64 };
    Ok(residual_term + bc / m as f64)
}

/// Mean of the per-head losses.
pub fn total_loss(per_head: &[f64]) -> f64 {
    if per_head.is_empty() {
        return 0.0;
    }
    per_head.iter().sum::<f64>() / per_head.len() as f64
}

/// `a * b` into a fresh row-major array.
pub(crate) fn matmul<A, B>(a: &ndarray::ArrayBase<A, ndarray::Ix2>, b: &ndarray::ArrayBase<B, ndarray::Ix2>) -> Array2<f64>
where
    A: ndarray::Data<Elem = f64>,
    B: ndarray::Data<Elem = f64>,
{
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    ndarray::linalg::general_mat_mul(1.0, a, b, 0.0, &mut out);
    out
}

/// Sum of each column of `x`.
pub(crate) fn column_sums(x: &Array2<f64>) -> Array1<f64> {
    x.sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::build_system;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> TrunkSpec {
        TrunkSpec::new(vec![7, 5, 6], 2, 3).unwrap()
    }

    #[test]
    fn spec_rejects_wrong_final_width() {
        assert!(TrunkSpec::new(vec![8, 5], 2, 3).is_err());
        assert!(TrunkSpec::new(vec![], 2, 3).is_err());
    }

    #[test]
    fn zero_params_give_constant_hidden_state() {
        let spec = small_spec();
        let mut params = TrunkParams::zeros(&spec);
        params.biases[2].fill(0.3);
        let evals = trunk_forward(&spec, &params, &[0.0, 1.5, 4.0]).unwrap();
        for e in evals {
            assert!(e.h.iter().all(|&v| (v - 0.3f64.tanh()).abs() < 1e-15));
            assert!(e.h_dot.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_unit_is_tanh() {
        let spec = TrunkSpec::new(vec![1], 1, 1).unwrap();
        let params = TrunkParams {
            weights: vec![array![[1.0]]],
            biases: vec![array![0.0]],
        };
        for &t in &[-1.0, 0.0, 0.4, 2.0] {
            let e = &trunk_forward(&spec, &params, &[t]).unwrap()[0];
            assert!((e.h[[0, 0]] - t.tanh()).abs() < 1e-15);
            assert!((e.h_dot[[0, 0]] - (1.0 - t.tanh().powi(2))).abs() < 1e-15);
        }
    }

    #[test]
    fn reshape_is_row_major() {
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = TrunkParams::init(&spec, &mut rng);
        let batch = trunk_forward_batch(&spec, &params, &[0.7]).unwrap();
        let e = batch.eval(0);
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(e.h[[r, c]], batch.values[[0, r * 3 + c]]);
            }
        }
    }

    #[test]
    fn tangent_matches_central_difference() {
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = TrunkParams::init(&spec, &mut rng);
        let d = 1e-5;
        for &t in &[0.0, 0.9, 3.3] {
            let e = &trunk_forward(&spec, &params, &[t]).unwrap()[0];
            let plus = &trunk_forward(&spec, &params, &[t + d]).unwrap()[0];
            let minus = &trunk_forward(&spec, &params, &[t - d]).unwrap()[0];
            let fd = (&plus.h - &minus.h) / (2.0 * d);
            let err = (&fd - &e.h_dot).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            let scale = e.h_dot.mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-8 * (1.0 + scale), "t={t}: {err}");
        }
    }

    #[test]
    fn non_finite_time_is_rejected() {
        let spec = small_spec();
        let params = TrunkParams::zeros(&spec);
        assert!(trunk_forward(&spec, &params, &[f64::NAN]).is_err());
    }

    #[test]
    fn overflowing_layer_is_reported() {
        let spec = TrunkSpec::new(vec![2, 2], 1, 2).unwrap();
        let mut params = TrunkParams::zeros(&spec);
        params.weights[0].fill(f64::INFINITY);
        let err = trunk_forward(&spec, &params, &[1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteActivation { layer: 0 }));
    }

    #[test]
    fn head_forward_is_linear_selector() {
        let eval = TrunkEval {
            h: array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
            h_dot: array![[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]],
        };
        let (u, u_dot) = head_forward(&eval, &HeadWeights::zeros(3)).unwrap();
        assert_eq!(u, array![0.0, 0.0]);
        assert_eq!(u_dot, array![0.0, 0.0]);
        let (u, _) = head_forward(&eval, &HeadWeights(array![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(u, array![1.0, 4.0]);
        assert!(head_forward(&eval, &HeadWeights::zeros(2)).is_err());
    }

    #[test]
    fn head_loss_single_point_by_hand() {
        // m = 2, h = 2, N = 1
        let sys = build_system(&[2.0, 1.0, 1.0]).unwrap();
        let coll = TrunkEval {
            h: array![[1.0, 0.0], [0.0, 1.0]],
            h_dot: array![[0.0, 1.0], [1.0, 1.0]],
        };
        let bnd = TrunkEval {
            h: array![[1.0, 1.0], [0.0, 2.0]],
            h_dot: array![[0.0, 0.0], [0.0, 0.0]],
        };
        let w = HeadWeights(array![1.0, 2.0]);
        // u = [1, 2], u' = [2, 3]; B u' + A u = [2 - 2, 3 + 2*1 + 1*2] = [0, 7]; F = [0, 4]
        // residual [0, 3] -> 9 / (2 * 1)
        // u(0) = [3, 4], u* = [1, 1] -> (4 + 9) / 2
        let loss = head_loss(&sys, &[coll], &bnd, &w, &[vec![0.0, 4.0]], &[1.0, 1.0]).unwrap();
        assert!((loss - (4.5 + 6.5)).abs() < 1e-14);
    }

    #[test]
    fn head_loss_of_trivial_system_is_zero() {
        let sys = build_system(&[1.0, 0.0, 1.0]).unwrap();
        let e = TrunkEval {
            h: array![[0.3, 0.1], [0.2, 0.9]],
            h_dot: array![[1.0, 0.0], [0.0, 1.0]],
        };
        let loss = head_loss(&sys, &[e.clone(), e.clone()], &e, &HeadWeights::zeros(2), &[vec![0.0; 2], vec![0.0; 2]], &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn total_loss_is_mean() {
        assert_eq!(total_loss(&[0.7]), 0.7);
        assert_eq!(total_loss(&[2.0, 2.0, 2.0]), 2.0);
        assert_eq!(total_loss(&[1.0, 2.0, 3.0]), 2.0);
    }
}
