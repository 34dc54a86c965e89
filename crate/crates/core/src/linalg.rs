//! Dense symmetric linear-algebra kernels shared by the stability and
//! Fourier modules.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical tolerances used across the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative threshold below which eigenvalues count as zero.
    pub tol_rank: f64,
    /// Relative negative-eigenvalue slack accepted by PSD checks.
    pub tol_psd: f64,
    /// Relative eigenvalue change that ends a power iteration.
    pub power_tol: f64,
    /// Number of consecutive iterations that must stay below `power_tol`.
    pub power_window: usize,
    pub power_max_iter: usize,
    pub power_seed: u64,
    /// Largest system handed to a dense eigensolver.
    pub dense_limit: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_rank: 1e-10,
            tol_psd: 1e-9,
            power_tol: 1e-12,
            power_window: 10,
            power_max_iter: 100_000,
            power_seed: 0x5eed,
            dense_limit: 5000,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol_rank, self.tol_psd, self.power_tol];
        if positive.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.power_window == 0 || self.power_max_iter == 0 || self.dense_limit == 0 {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        Ok(())
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest entrywise asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and eigenvectors in matching columns.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let mut v: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::invalid("matrix is not symmetric positive definite"))
}

/// `L^{-1} A L^{-T}` for the Cholesky factor `L` of `M`; its eigenvalues are
/// the generalized eigenvalues of the pencil `(A, M)`.
pub fn reduce_pencil(m: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cholesky_lower(m)?;
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::invalid("singular Cholesky factor"))?;
    let t = linv_a.transpose();
    let mut s = l
        .solve_lower_triangular(&t)
        .ok_or_else(|| Error::invalid("singular Cholesky factor"))?;
    symmetrize(&mut s);
    Ok(s)
}

/// Generalized eigenvalues of `A x = λ M x`, ascending.
pub fn generalized_eigenvalues(m: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(sym_eigenvalues(&reduce_pencil(m, a)?))
}

/// Moore-Penrose pseudoinverse of a symmetric matrix, dropping eigenvalues
/// at or below `tol_rank * max|λ|`.
pub fn pinv_sym(m: &DMatrix<f64>, tol_rank: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let (vals, vecs) = sym_eigen_desc(m);
    let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mut out = DMatrix::zeros(n, n);
    if scale == 0.0 {
        return out;
    }
    for (k, &lam) in vals.iter().enumerate() {
        if lam.abs() > tol_rank * scale {
            let v = vecs.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    symmetrize(&mut out);
    out
}

/// Result of a power iteration.
#[derive(Debug, Clone)]
pub struct PowerResult {
    /// Largest eigenvalue in magnitude (absolute value).
    pub value: f64,
    pub vector: DVector<f64>,
    pub iterations: usize,
}

/// Power iteration for the largest-magnitude eigenvalue of a symmetric
/// operator given by its action.
///
/// The estimate `‖S x‖` for unit `x` is non-decreasing for symmetric `S`,
/// so it approaches `|λ|_max` from below. Convergence is declared once the
/// relative change stays under `tol.power_tol` for `tol.power_window`
/// consecutive iterations.
pub fn power_iteration<F>(n: usize, apply: F, tol: &Tolerances) -> Result<PowerResult>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if n == 0 {
        return Ok(PowerResult {
            value: 0.0,
            vector: DVector::zeros(0),
            iterations: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tol.power_seed);
    let mut x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    x /= x.norm();
    let mut est = 0.0_f64;
    let mut calm = 0usize;
    let mut last_change = f64::INFINITY;
    for it in 1..=tol.power_max_iter {
        let y = apply(&x);
        let norm = y.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Ok(PowerResult {
                value: 0.0,
                vector: x,
                iterations: it,
            });
        }
        let change = (norm - est).abs() / norm;
        est = norm;
        x = y / norm;
        last_change = change;
        if change < tol.power_tol {
            calm += 1;
            if calm >= tol.power_window {
                return Ok(PowerResult {
                    value: est,
                    vector: x,
                    iterations: it,
                });
            }
        } else {
            calm = 0;
        }
    }
    Err(Error::NonConvergence {
        iterations: tol.power_max_iter,
        last: est,
        interval: last_change * est,
    })
}

/// Largest-magnitude eigenvalue of a dense symmetric matrix by power
/// iteration.
pub fn power_iteration_dense(s: &DMatrix<f64>, tol: &Tolerances) -> Result<PowerResult> {
    power_iteration(s.nrows(), |x| s * x, tol)
}

/// Largest-magnitude eigenvalue of a symmetric operator by restarted
/// Lanczos with full reorthogonalization.
///
/// Converges once the Ritz residual `‖S y − θ y‖` drops below
/// `1e-10·|θ|`; restarts from the current Ritz vector every `krylov` steps.
pub fn lanczos<F>(n: usize, apply: F, tol: &Tolerances) -> Result<PowerResult>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut r = lanczos_select(n, apply, tol, true)?;
    r.value = r.value.abs();
    Ok(r)
}

/// Algebraically largest eigenvalue of a symmetric operator, with sign.
pub fn lanczos_largest<F>(n: usize, apply: F, tol: &Tolerances) -> Result<PowerResult>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    lanczos_select(n, apply, tol, false)
}

fn lanczos_select<F>(n: usize, apply: F, tol: &Tolerances, magnitude: bool) -> Result<PowerResult>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if n == 0 {
        return Ok(PowerResult {
            value: 0.0,
            vector: DVector::zeros(0),
            iterations: 0,
        });
    }
    let krylov = n.min(80);
    let mut rng = ChaCha8Rng::seed_from_u64(tol.power_seed);
    let mut start = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    start /= start.norm();
    let mut applied = 0usize;
    let mut last = (0.0, f64::INFINITY);
    while applied < tol.power_max_iter {
        let mut basis: Vec<DVector<f64>> = vec![start.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for k in 0..krylov {
            let mut w = apply(&basis[k]);
            applied += 1;
            alpha.push(basis[k].dot(&w));
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&w);
                    w.axpy(-c, q, 1.0);
                }
            }
            let b = w.norm();
            if k + 1 == krylov || b <= 1e-14 * alpha.iter().fold(0.0_f64, |m, a| m.max(a.abs())).max(f64::MIN_POSITIVE)
            {
                break;
            }
            beta.push(b);
            basis.push(w / b);
        }
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j || j + 1 == i {
                beta[i.min(j)]
            } else {
                0.0
            }
        });
        let eig = t.symmetric_eigen();
        let (idx, theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(i, v)| (i, *v))
            .max_by(|a, b| {
                if magnitude {
                    a.1.abs().total_cmp(&b.1.abs())
                } else {
                    a.1.total_cmp(&b.1)
                }
            })
            .unwrap_or((0, 0.0));
        let mut y = DVector::zeros(n);
        for (j, q) in basis.iter().enumerate().take(m) {
            y.axpy(eig.eigenvectors[(j, idx)], q, 1.0);
        }
        y /= y.norm();
        let resid = (apply(&y) - &y * theta).norm();
        applied += 1;
        last = (theta, resid);
        if theta == 0.0 || resid <= 1e-10 * theta.abs() || m == n {
            return Ok(PowerResult {
                value: theta,
                vector: y,
                iterations: applied,
            });
        }
        start = y;
    }
    Err(Error::NonConvergence {
        iterations: applied,
        last: last.0,
        interval: last.1,
    })
}
