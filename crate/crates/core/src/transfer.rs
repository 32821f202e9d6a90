//! One-shot head computation on a frozen trunk.
//!
//! With the trunk fixed, the per-head loss is a quadratic in the head weights
//! `W`. Writing `G_t = B H'(t) + A H(t)` it reads
//!
//! ```text
//! L(W) = 1/(mN) sum_t |G_t W - F_t|^2 + 1/m |H_0 W - u*|^2
//! ```
//!
//! and its unique minimizer solves `M W = r` with
//!
//! ```text
//! M = 1/N sum_t G_t^T G_t + H_0^T H_0
//! r = 1/N sum_t G_t^T F_t + H_0^T u*
//! ```
//!
//! `M` depends only on the trunk and the operator, so one factorization serves
//! every order of the perturbation cascade; only `r` changes with the forcing.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdSolver;
use crate::network::{matmul, HeadWeights, TrunkBatch, TrunkEval, TrunkParams, TrunkSpec};
use crate::ode::{DuffingParams, PolynomialNonlinearODE};
use crate::perturbation::{build_cascade, evaluate_forcing_values, split_boundary, CascadeSpec};
use crate::reduction::{lift_value, FirstOrderSystem};
use crate::training::uniform_grid;

/// Default number of transfer grid points.
pub const TRANSFER_GRID_POINTS: usize = 400;

static FACTORIZATIONS: AtomicUsize = AtomicUsize::new(0);

/// Process-wide count of normal-matrix factorizations.
pub fn factorization_count() -> usize {
    FACTORIZATIONS.load(Ordering::SeqCst)
}

/// Trained trunk with its evaluations cached on a fixed grid.
#[derive(Debug, Clone)]
pub struct FrozenTrunk {
    pub spec: TrunkSpec,
    pub params: TrunkParams,
    pub grid: Vec<f64>,
    pub cache: TrunkBatch,
    pub boundary: TrunkEval,
}

impl FrozenTrunk {
    pub fn new(spec: TrunkSpec, params: TrunkParams, grid: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidConfig("transfer grid is empty".into()));
        }
        let cache = crate::network::trunk_forward_batch(&spec, &params, &grid)?;
        let boundary = crate::network::trunk_forward_batch(&spec, &params, &[0.0])?.eval(0);
        Ok(Self {
            spec,
            params,
            grid,
            cache,
            boundary,
        })
    }

    /// Frozen trunk on `n` evenly spaced points over `[t_lo, t_hi]`.
    pub fn on_uniform_grid(spec: TrunkSpec, params: TrunkParams, t_lo: f64, t_hi: f64, n: usize) -> Result<Self> {
        Self::new(spec, params, uniform_grid(t_lo, t_hi, n))
    }

    pub fn evaluate(&self, ts: &[f64]) -> Result<TrunkBatch> {
        crate::network::trunk_forward_batch(&self.spec, &self.params, ts)
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }
}

/// `G_t = B H'(t) + A H(t)` for every grid point, stacked: rows `t*m .. (t+1)*m`.
fn operator_stack(cache: &TrunkBatch, system: &FirstOrderSystem) -> Array2<f64> {
    let (m, h, n) = (cache.m, cache.h, cache.len());
    let mut g = Array2::<f64>::zeros((n * m, h));
    for r in 0..m {
        // row r of G_t = sum_c B[r,c] H'_c + A[r,c] H_c, with H_c the c-th row block
        let mut acc = Array2::<f64>::zeros((n, h));
        for c in 0..m {
            let (b, a) = (system.b[[r, c]], system.a[[r, c]]);
            if b != 0.0 {
                acc.scaled_add(b, &cache.row_block_dot(c));
            }
            if a != 0.0 {
                acc.scaled_add(a, &cache.row_block(c));
            }
        }
        for t in 0..n {
            g.row_mut(t * m + r).assign(&acc.row(t));
        }
    }
    g
}

/// Factorized normal matrix of one operator on one frozen trunk.
#[derive(Debug, Clone)]
pub struct NormalMatrix {
    /// `M` as assembled (before any regularizing shift).
    pub m: Array2<f64>,
    solver: SpdSolver,
    stack: Array2<f64>,
    points: usize,
}

impl NormalMatrix {
    pub fn regularization(&self) -> f64 {
        self.solver.regularization
    }

    pub fn condition(&self) -> f64 {
        self.solver.condition
    }

    /// `r = 1/N sum_t G_t^T F_t + H_0^T u*` for lifted forcing rows `F_t`.
    pub fn rhs(&self, boundary: &TrunkEval, forcing: ArrayView2<'_, f64>, u_star: &[f64]) -> Result<Array1<f64>> {
        let m = boundary.h.nrows();
        if forcing.dim() != (self.points, m) {
            return Err(Error::DimensionMismatch {
                expected: self.points * m,
                actual: forcing.len(),
                context: "forcing samples on the transfer grid",
            });
        }
        if u_star.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: u_star.len(),
                context: "boundary vector",
            });
        }
        let flat = forcing.as_standard_layout().into_owned().into_shape_with_order(self.points * m).expect("contiguous");
        let mut r = self.stack.t().dot(&flat) / self.points as f64;
        r += &boundary.h.t().dot(&Array1::from(u_star.to_vec()));
        Ok(r)
    }
}

/// Assembles and factors `M` for `system` on the trunk's grid.
pub fn assemble_m(trunk: &FrozenTrunk, system: &FirstOrderSystem) -> Result<NormalMatrix> {
    if system.dim() != trunk.spec.m {
        return Err(Error::DimensionMismatch {
            expected: trunk.spec.m,
            actual: system.dim(),
            context: "system dimension vs trunk",
        });
    }
    let stack = operator_stack(&trunk.cache, system);
    let n = trunk.n() as f64;
    let mut m = matmul(&stack.t(), &stack) / n;
    m += &matmul(&trunk.boundary.h.t(), &trunk.boundary.h);
    // symmetrize away kernel round-off
    let mt = m.t().to_owned();
    m = (&m + &mt) * 0.5;
    FACTORIZATIONS.fetch_add(1, Ordering::SeqCst);
    let solver = SpdSolver::new(m.clone())?;
    if solver.regularization > 0.0 {
        log::info!(
            "normal matrix condition {:.2e} exceeds limit; regularized with {:.2e}",
            solver.condition,
            solver.regularization
        );
    }
    Ok(NormalMatrix {
        m,
        solver,
        stack,
        points: trunk.n(),
    })
}

/// Relative residual above which a solve is reported.
const SOLVE_RESIDUAL_LIMIT: f64 = 1e-8;
/// Correction steps after the first solve.
const REFINEMENT_STEPS: usize = 2;

/// Minimizer of the quadratic head loss for forcing rows `forcing` (`N x m`).
///
/// Forming `M` squares the conditioning of the stacked least-squares problem,
/// so the first solve is followed by correction steps whose right-hand side
/// `(1/N) G^T (F - G W) + H_0^T (u* - H_0 W)` is computed from the stacked
/// rows rather than from `M`. The factorization is reused for every step.
pub fn solve_head(nm: &NormalMatrix, trunk: &FrozenTrunk, forcing: ArrayView2<'_, f64>, u_star: &[f64]) -> Result<HeadWeights> {
    let r = nm.rhs(&trunk.boundary, forcing, u_star)?;
    let m = u_star.len();
    let f = forcing
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order(nm.points * m)
        .expect("contiguous");
    let u = Array1::from(u_star.to_vec());
    let h0 = &trunk.boundary.h;
    let lambda = nm.regularization();
    let gradient = |w: &Array1<f64>| {
        let mut g = nm.stack.t().dot(&(&f - &nm.stack.dot(w))) / nm.points as f64;
        g += &h0.t().dot(&(&u - &h0.dot(w)));
        if lambda > 0.0 {
            g.scaled_add(-lambda, w);
        }
        g
    };
    let mut w = nm.solver.solve_factored(r.view());
    for _ in 0..REFINEMENT_STEPS {
        let g = gradient(&w);
        w += &nm.solver.solve_factored(g.view());
    }
    let rn = r.dot(&r).sqrt();
    let g = gradient(&w);
    let rel = g.dot(&g).sqrt() / if rn > 0.0 { rn } else { 1.0 };
    if rel > SOLVE_RESIDUAL_LIMIT {
        log::warn!("normal-equation solve residual {rel:.2e}");
    }
    Ok(HeadWeights(w))
}

/// Lifts scalar samples `f(t_n)` into `N x m` rows `[0, .., f]`.
pub fn lift_samples(values: &[f64], m: usize) -> Array2<f64> {
    let mut out = Array2::zeros((values.len(), m));
    for (n, &v) in values.iter().enumerate() {
        out.row_mut(n).assign(&Array1::from(lift_value(m, v)));
    }
    out
}

/// Head weights for every cascade order plus the combined head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferSolution {
    pub weights: Vec<HeadWeights>,
    pub epsilon: f64,
    pub p: usize,
    /// `sum_i eps^i W_i`; the series solution is `H(t)` times this head.
    pub combined: HeadWeights,
    pub assemble_seconds: f64,
    pub order_seconds: Vec<f64>,
    pub regularization: f64,
    pub condition: f64,
}

/// Samples of a solution: `x`, `x'`, and the lifted pair `(u_1, u_1')`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSamples {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub x_dot: Vec<f64>,
    pub v: Vec<f64>,
    pub v_dot: Vec<f64>,
}

impl TransferSolution {
    pub fn total_seconds(&self) -> f64 {
        self.assemble_seconds + self.order_seconds.iter().sum::<f64>()
    }

    /// Samples of `u = H W` at arbitrary times (second-order systems).
    pub fn sample(&self, trunk: &FrozenTrunk, ts: &[f64]) -> Result<SolutionSamples> {
        let batch = trunk.evaluate(ts)?;
        Ok(samples_from_batch(&batch, &self.combined, ts))
    }

    /// Samples from a trunk batch evaluated at `ts`.
    pub fn sample_batch(&self, batch: &TrunkBatch, ts: &[f64]) -> SolutionSamples {
        samples_from_batch(batch, &self.combined, ts)
    }

    /// Samples on the trunk's cached grid.
    pub fn sample_grid(&self, trunk: &FrozenTrunk) -> SolutionSamples {
        samples_from_batch(&trunk.cache, &self.combined, &trunk.grid)
    }

    /// `x_i` on the cached grid for every order.
    pub fn order_values(&self, trunk: &FrozenTrunk) -> Vec<Vec<f64>> {
        let block = trunk.cache.row_block(0);
        self.weights.iter().map(|w| block.dot(&w.0).to_vec()).collect()
    }
}

fn samples_from_batch(batch: &TrunkBatch, w: &HeadWeights, ts: &[f64]) -> SolutionSamples {
    let (u, u_dot) = batch.head_outputs(w);
    let col = |a: &Array2<f64>, c: usize| -> Vec<f64> {
        if c < a.ncols() {
            a.column(c).to_vec()
        } else {
            vec![0.0; a.nrows()]
        }
    };
    SolutionSamples {
        t: ts.to_vec(),
        x: col(&u, 0),
        x_dot: col(&u_dot, 0),
        v: col(&u, 1),
        v_dot: col(&u_dot, 1),
    }
}

/// Solves every order of the cascade with one factorization of `M`.
pub fn solve_cascade(ode: &PolynomialNonlinearODE, p: usize, trunk: &FrozenTrunk) -> Result<TransferSolution> {
    let cascade = build_cascade(ode, p)?;
    solve_cascade_with(ode, &cascade, trunk)
}

/// [`solve_cascade`] for a prebuilt cascade.
pub fn solve_cascade_with(ode: &PolynomialNonlinearODE, cascade: &CascadeSpec, trunk: &FrozenTrunk) -> Result<TransferSolution> {
    let system = FirstOrderSystem::from_ode(ode)?;
    let start = Instant::now();
    let nm = assemble_m(trunk, &system)?;
    let assemble_seconds = start.elapsed().as_secs_f64();
    let mut sol = solve_cascade_prepared(&nm, ode, cascade, trunk)?;
    sol.assemble_seconds = assemble_seconds;
    Ok(sol)
}

/// Cascade solve against an already factorized `M` for the operator of `ode`.
/// `assemble_seconds` of the result is zero.
pub fn solve_cascade_prepared(
    nm: &NormalMatrix,
    ode: &PolynomialNonlinearODE,
    cascade: &CascadeSpec,
    trunk: &FrozenTrunk,
) -> Result<TransferSolution> {
    let m = ode.order();
    let boundaries = split_boundary(ode, cascade);
    let block = trunk.cache.row_block(0);
    let mut weights: Vec<HeadWeights> = Vec::with_capacity(cascade.p + 1);
    let mut x_values: Vec<Vec<f64>> = Vec::with_capacity(cascade.p + 1);
    let mut order_seconds = Vec::with_capacity(cascade.p + 1);
    for j in 0..=cascade.p {
        let t0 = Instant::now();
        let f = if j == 0 {
            ode.forcing.eval_batch(&trunk.grid)
        } else {
            evaluate_forcing_values(cascade, j, &x_values)?
        };
        let w = solve_head(nm, trunk, lift_samples(&f, m).view(), &boundaries[j])?;
        if !w.0.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteSolution { order: j });
        }
        x_values.push(block.dot(&w.0).to_vec());
        weights.push(w);
        let dt = t0.elapsed().as_secs_f64();
        log::debug!("order {j} solved in {dt:.4} s");
        order_seconds.push(dt);
    }
    let mut combined = Array1::<f64>::zeros(trunk.spec.h);
    let mut pow = 1.0;
    for w in &weights {
        combined.scaled_add(pow, &w.0);
        pow *= cascade.epsilon;
    }
    Ok(TransferSolution {
        weights,
        epsilon: cascade.epsilon,
        p: cascade.p,
        combined: HeadWeights(combined),
        assemble_seconds: 0.0,
        order_seconds,
        regularization: nm.regularization(),
        condition: nm.condition(),
    })
}

/// Mean squared Duffing residual over the samples plus `|u(0) - [x0, 0]|^2 / 2`.
///
/// `x'` is the time derivative of the `x` component and `x''` is the time
/// derivative of the lifted velocity component.
pub fn duffing_residual_from_samples(params: &DuffingParams, samples: &SolutionSamples, u_at_zero: [f64; 2]) -> f64 {
    let n = samples.t.len();
    let mut sum = 0.0;
    for i in 0..n {
        let r = params.residual(samples.t[i], samples.x[i], samples.x_dot[i], samples.v_dot[i]);
        sum += r * r;
    }
    let mean = if n == 0 { 0.0 } else { sum / n as f64 };
    let bx = u_at_zero[0] - params.x0;
    let bv = u_at_zero[1];
    mean + (bx * bx + bv * bv) / 2.0
}

/// Duffing residual loss of a transfer solution on `grid`.
pub fn duffing_residual_loss(solution: &TransferSolution, trunk: &FrozenTrunk, params: &DuffingParams, grid: &[f64]) -> Result<f64> {
    let batch = trunk.evaluate(grid)?;
    Ok(duffing_residual_loss_on(solution, trunk, &batch, grid, params))
}

/// [`duffing_residual_loss`] with the trunk already evaluated on `grid`.
pub fn duffing_residual_loss_on(
    solution: &TransferSolution,
    trunk: &FrozenTrunk,
    batch: &TrunkBatch,
    grid: &[f64],
    params: &DuffingParams,
) -> f64 {
    let samples = samples_from_batch(batch, &solution.combined, grid);
    let u0 = trunk.boundary.h.dot(&solution.combined.0);
    duffing_residual_from_samples(params, &samples, [u0[0], u0[1]])
}

/// Default grid for residual evaluation: 1000 points over `[0, 5]`.
pub fn residual_grid() -> Vec<f64> {
    uniform_grid(0.0, 5.0, 1000)
}

/// Row `t` of the operator stack, exposed for tests of the assembly.
#[doc(hidden)]
pub fn operator_rows(trunk: &FrozenTrunk, system: &FirstOrderSystem, t: usize) -> Array2<f64> {
    let g = operator_stack(&trunk.cache, system);
    let m = system.dim();
    g.slice(s![t * m..(t + 1) * m, ..]).to_owned()
}
