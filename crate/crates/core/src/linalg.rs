//! Dense symmetric positive (semi)definite solves for the normal equations.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Condition estimate above which the matrix is regularized before solving.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Tikhonov shift relative to `trace(M) / n`.
pub const REGULARIZATION_SCALE: f64 = 1e-10;

/// Lower-triangular Cholesky factor `L` with `L L^T = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Fails on a non-positive pivot.
    pub fn factor(a: &Array2<f64>) -> Option<Self> {
        let n = a.nrows();
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Some(Self { l })
    }

    pub fn solve(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.l.nrows();
        let mut y = b.to_owned();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[[i, k]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[[k, i]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        y
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn largest_eigenvalue(a: &Array2<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = a.dot(&v);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w) / v.dot(&v);
        v = w / nw;
    }
    lambda
}

/// Smallest eigenvalue of a symmetric positive definite matrix by inverse iteration.
fn smallest_eigenvalue(chol: &Cholesky, a: &Array2<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 * 0.414_213_562_3).fract());
    v /= norm(&v);
    for _ in 0..iters {
        let w = chol.solve(v.view());
        let nw = norm(&w);
        if !nw.is_finite() || nw == 0.0 {
            break;
        }
        v = w / nw;
    }
    v.dot(&a.dot(&v))
}

/// 2-norm condition estimate from power and inverse iteration.
pub fn condition_estimate(a: &Array2<f64>, chol: &Cholesky) -> f64 {
    let hi = largest_eigenvalue(a, 60);
    let lo = smallest_eigenvalue(chol, a, 30);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Factorization of a symmetric PSD matrix, regularized with `lambda I` when
/// its condition estimate exceeds [`CONDITION_LIMIT`].
#[derive(Debug, Clone)]
pub struct SpdSolver {
    matrix: Array2<f64>,
    chol: Cholesky,
    /// Shift added to the diagonal (0 when none was needed).
    pub regularization: f64,
    /// Condition estimate of the unshifted matrix (infinite if not positive definite).
    pub condition: f64,
}

impl SpdSolver {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: matrix.ncols(),
                context: "square matrix",
            });
        }
        let condition = match Cholesky::factor(&matrix) {
            Some(chol) => {
                let condition = condition_estimate(&matrix, &chol);
                if condition <= CONDITION_LIMIT {
                    return Ok(Self {
                        matrix,
                        chol,
                        regularization: 0.0,
                        condition,
                    });
                }
                condition
            }
            None => f64::INFINITY,
        };
        let trace: f64 = matrix.diag().sum();
        let lambda = REGULARIZATION_SCALE * trace / n as f64;
        if !(lambda > 0.0) {
            return Err(Error::SingularMatrix { condition });
        }
        let mut shifted = matrix.clone();
        for i in 0..n {
            shifted[[i, i]] += lambda;
        }
        let chol = Cholesky::factor(&shifted).ok_or(Error::SingularMatrix { condition })?;
        log::debug!("normal matrix condition {condition:.3e}; regularized with lambda = {lambda:.3e}");
        Ok(Self {
            matrix: shifted,
            chol,
            regularization: lambda,
            condition,
        })
    }

    /// Matrix actually factored (including any shift).
    pub fn factored_matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Plain forward and back substitution with the stored factor.
    pub fn solve_factored(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        self.chol.solve(b)
    }

    /// Solves with one step of iterative refinement; returns the solution and
    /// the relative residual `||A x - b|| / ||b||`.
    pub fn solve(&self, b: ArrayView1<'_, f64>) -> (Array1<f64>, f64) {
        let mut x = self.chol.solve(b);
        let r = &b - &self.matrix.dot(&x);
        x += &self.chol.solve(r.view());
        let r = &b - &self.matrix.dot(&x);
        let bn = b.dot(&b).sqrt();
        let rel = if bn == 0.0 { norm(&r) } else { norm(&r) / bn };
        (x, rel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_solves_small_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let chol = Cholesky::factor(&a).unwrap();
        let l = chol.lower();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
        let b = array![1.0, -2.0, 0.5];
        let x = chol.solve(b.view());
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(Cholesky::factor(&array![[1.0, 2.0], [2.0, 1.0]]).is_none());
        assert!(Cholesky::factor(&array![[0.0, 0.0], [0.0, 1.0]]).is_none());
    }

    #[test]
    fn condition_of_diagonal() {
        let a = array![[100.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.01]];
        let chol = Cholesky::factor(&a).unwrap();
        let c = condition_estimate(&a, &chol);
        assert!((c / 1e4 - 1.0).abs() < 1e-6, "{c}");
    }

    #[test]
    fn well_conditioned_is_not_regularized() {
        let s = SpdSolver::new(array![[2.0, 0.5], [0.5, 1.0]]).unwrap();
        assert_eq!(s.regularization, 0.0);
        let (x, rel) = s.solve(array![1.0, 1.0].view());
        assert!(rel < 1e-14);
        assert!((2.0 * x[0] + 0.5 * x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_is_regularized() {
        // rank one
        let v = array![1.0, 2.0, 3.0];
        let a = Array2::from_shape_fn((3, 3), |(i, j)| v[i] * v[j]);
        let s = SpdSolver::new(a).unwrap();
        assert!(s.regularization > 0.0);
        assert!(s.condition > CONDITION_LIMIT);
        let (_, rel) = s.solve(v.view());
        assert!(rel < 1e-8);
    }

    #[test]
    fn zero_matrix_is_singular() {
        let err = SpdSolver::new(Array2::zeros((3, 3))).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }));
    }
}
