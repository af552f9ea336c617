//! Linear solver strategies for the constant-coefficient implicit-Euler system.
//!
//! The matrix is factorised once per run; every time step reuses the handle.
//! Strategies are registered by name (`sparse-lu`, `bicgstab`) and selected
//! from the `[solver] method` config key.

use faer::linalg::solvers::{Solve, SolveCore};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat};

use crate::error::{Error, Result};
use crate::fem::BlockOperator;
use crate::sparse::{dot, norm2, CsrMatrix};

/// Result of factorising one matrix.
pub trait Factorization: Send {
    /// Approximate solution of `A x = b`.
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>>;
    /// Approximate solution of `Aᵀ x = b`.
    fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>>;
}

pub trait LinearSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn factorize(&self, matrix: &CsrMatrix, tolerance: f64) -> Result<Box<dyn Factorization>>;
}

pub const DEFAULT_METHOD: &str = "sparse-lu";

pub fn solver_names() -> Vec<&'static str> {
    registry().iter().map(|s| s.name()).collect()
}

fn registry() -> Vec<Box<dyn LinearSolver>> {
    vec![Box::new(SparseLu), Box::new(BiCgStab::default())]
}

pub fn solver_by_name(name: &str) -> Result<Box<dyn LinearSolver>> {
    registry()
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| {
            Error::Usage(format!(
                "unknown solver `{name}`; known: {}",
                solver_names().join(", ")
            ))
        })
}

/// Supernodal sparse LU with partial pivoting (faer).
#[derive(Debug, Clone, Copy, Default)]
pub struct SparseLu;

struct LuFactor(faer::sparse::linalg::solvers::Lu<usize, f64>);

impl LinearSolver for SparseLu {
    fn name(&self) -> &'static str {
        "sparse-lu"
    }

    fn factorize(&self, matrix: &CsrMatrix, _tolerance: f64) -> Result<Box<dyn Factorization>> {
        let triplets: Vec<Triplet<usize, usize, f64>> = matrix
            .iter()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(
            matrix.nrows(),
            matrix.ncols(),
            &triplets,
        )
        .map_err(|e| Error::Factorization {
            message: format!("{e:?}"),
            condition: f64::NAN,
        })?;
        let lu = a.sp_lu().map_err(|e| Error::Factorization {
            message: format!("{e:?}"),
            condition: f64::INFINITY,
        })?;
        Ok(Box::new(LuFactor(lu)))
    }
}

fn column(b: &[f64]) -> Mat<f64> {
    Mat::from_fn(b.len(), 1, |i, _| b[i])
}

impl Factorization for LuFactor {
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = self.0.solve(column(b));
        Ok((0..b.len()).map(|i| x[(i, 0)]).collect())
    }

    fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = column(b);
        self.0
            .solve_transpose_in_place_with_conj(Conj::No, x.as_mut());
        Ok((0..b.len()).map(|i| x[(i, 0)]).collect())
    }
}

/// Jacobi-preconditioned BiCGSTAB; the iterative fallback.
#[derive(Debug, Clone, Copy)]
pub struct BiCgStab {
    pub max_iterations: usize,
}

impl Default for BiCgStab {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
        }
    }
}

struct KrylovFactor {
    matrix: CsrMatrix,
    transpose: CsrMatrix,
    inv_diag: Vec<f64>,
    inv_diag_t: Vec<f64>,
    tolerance: f64,
    max_iterations: usize,
}

impl LinearSolver for BiCgStab {
    fn name(&self) -> &'static str {
        "bicgstab"
    }

    fn factorize(&self, matrix: &CsrMatrix, tolerance: f64) -> Result<Box<dyn Factorization>> {
        let inv = |d: Vec<f64>| -> Result<Vec<f64>> {
            d.into_iter()
                .map(|v| {
                    if v == 0.0 || !v.is_finite() {
                        Err(Error::Factorization {
                            message: "zero diagonal entry, Jacobi preconditioner undefined".into(),
                            condition: f64::INFINITY,
                        })
                    } else {
                        Ok(1.0 / v)
                    }
                })
                .collect()
        };
        let transpose = matrix.transpose();
        Ok(Box::new(KrylovFactor {
            inv_diag: inv(matrix.diag())?,
            inv_diag_t: inv(transpose.diag())?,
            matrix: matrix.clone(),
            transpose,
            tolerance: 0.1 * tolerance,
            max_iterations: self.max_iterations,
        }))
    }
}

fn bicgstab(
    a: &CsrMatrix,
    inv_diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let precond = |v: &[f64]| {
        v.iter()
            .zip(inv_diag)
            .map(|(a, d)| a * d)
            .collect::<Vec<_>>()
    };
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = precond(&p);
        v = a.matvec(&p_hat);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if norm2(&s) <= tol * bnorm {
            x.iter_mut().zip(&p_hat).for_each(|(x, p)| *x += alpha * p);
            return Ok(x);
        }
        let s_hat = precond(&s);
        let t = a.matvec(&s_hat);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= tol * bnorm {
            return Ok(x);
        }
        if !omega.is_finite() || omega == 0.0 {
            break;
        }
    }
    let res = norm2(
        &a.matvec(&x)
            .iter()
            .zip(b)
            .map(|(ax, b)| ax - b)
            .collect::<Vec<_>>(),
    ) / bnorm;
    Err(Error::Solve {
        residual: res,
        tolerance: tol,
    })
}

impl Factorization for KrylovFactor {
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        bicgstab(
            &self.matrix,
            &self.inv_diag,
            b,
            self.tolerance,
            self.max_iterations,
        )
    }

    fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        bicgstab(
            &self.transpose,
            &self.inv_diag_t,
            b,
            self.tolerance,
            self.max_iterations,
        )
    }
}

/// Hager–Higham estimate of `‖A⁻¹‖₁`.
fn inverse_norm_one(f: &dyn Factorization, n: usize) -> Result<f64> {
    let mut x = vec![1.0 / n as f64; n];
    let mut estimate = 0.0;
    for _ in 0..5 {
        let y = f.solve(&x)?;
        estimate = y.iter().map(|v| v.abs()).sum::<f64>();
        let sign: Vec<f64> = y
            .iter()
            .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        let z = f.solve_transpose(&sign)?;
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        if zmax <= dot(&z, &x) {
            break;
        }
        x = vec![0.0; n];
        x[j] = 1.0;
    }
    Ok(estimate)
}

/// Largest acceptable 1-norm condition estimate.
pub const MAX_CONDITION: f64 = 1e14;

/// A factorised system matrix with the residual contract `‖Ax − b‖ ≤ tol·‖b‖`.
pub struct SolverHandle {
    matrix: CsrMatrix,
    factor: Box<dyn Factorization>,
    tolerance: f64,
    condition: f64,
    method: &'static str,
}

impl std::fmt::Debug for SolverHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolverHandle")
            .field("method", &self.method)
            .field("n", &self.matrix.nrows())
            .field("tolerance", &self.tolerance)
            .field("condition", &self.condition)
            .finish()
    }
}

impl SolverHandle {
    pub fn new(matrix: &CsrMatrix, method: &dyn LinearSolver, tolerance: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Factorization {
                message: format!(
                    "matrix is {}×{}, not square",
                    matrix.nrows(),
                    matrix.ncols()
                ),
                condition: f64::NAN,
            });
        }
        if !(tolerance > 0.0 && tolerance <= 1e-6) {
            return Err(Error::Parameter(format!(
                "solver tolerance must lie in (0, 1e-6], got {tolerance}"
            )));
        }
        let factor = method.factorize(matrix, tolerance)?;
        let n = matrix.nrows();
        let condition = if n == 0 {
            1.0
        } else {
            matrix.norm_one() * inverse_norm_one(factor.as_ref(), n)?
        };
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::Factorization {
                message: "matrix is singular or badly conditioned".into(),
                condition,
            });
        }
        Ok(Self {
            matrix: matrix.clone(),
            factor,
            tolerance,
            condition,
            method: method.name(),
        })
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn method(&self) -> &'static str {
        self.method
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Solves with up to three steps of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let bnorm = norm2(b);
        if bnorm == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        let mut x = self.factor.solve(b)?;
        let mut residual = f64::INFINITY;
        for pass in 0..4 {
            let r: Vec<f64> = b
                .iter()
                .zip(self.matrix.matvec(&x))
                .map(|(b, ax)| b - ax)
                .collect();
            residual = norm2(&r) / bnorm;
            if residual <= self.tolerance || pass == 3 {
                break;
            }
            let dx = self.factor.solve(&r)?;
            x.iter_mut().zip(dx).for_each(|(x, d)| *x += d);
        }
        if residual <= self.tolerance {
            Ok(x)
        } else {
            Err(Error::Solve {
                residual,
                tolerance: self.tolerance,
            })
        }
    }
}

/// Factorises the implicit-Euler matrix of `op`.
pub fn factorize(op: &BlockOperator, method: &str, tolerance: f64) -> Result<SolverHandle> {
    SolverHandle::new(&op.system, solver_by_name(method)?.as_ref(), tolerance)
}
