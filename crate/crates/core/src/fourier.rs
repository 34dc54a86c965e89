//! Block symbols of periodic meshes built from identical unit cells.
//!
//! On `N^d` copies of a cell the stiffness couples only neighbouring cells,
//! so its eigenvalues are those of the Hermitian pencils
//! `(Â(z), M₀)` with `Â(z) = Σ_ℓ e^{iθ·ℓ} A_ℓ` and `θ = 2πz/N`.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{assemble, AssemblyOptions, BlockDiagonal, GlobalSystem, Part};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, lanczos_largest, max_abs, sym_eigenvalues, symmetrize, Tolerances};
use crate::mesh::Mesh;

/// Unit-cell mass and the stiffness couplings `A_ℓ`, keyed by the cell
/// offset `ℓ ∈ {-1,0,1}^d`. The penalty part of each coupling is kept
/// separately so the penalty can be rescaled.
#[derive(Debug, Clone)]
pub struct SymbolBlocks {
    pub dim: usize,
    pub m_cell: usize,
    pub mass: DMatrix<f64>,
    pub couplings: BTreeMap<Vec<i32>, DMatrix<f64>>,
    pub penalty: BTreeMap<Vec<i32>, DMatrix<f64>>,
    mass_linv: DMatrix<f64>,
    mass_blocks: BlockDiagonal,
}

/// Extreme pencil eigenvalues at one wave vector.
#[derive(Debug, Clone, Serialize)]
pub struct ModeEigen {
    pub z: Vec<usize>,
    pub lambda_max: f64,
    pub lambda_min: f64,
}

impl SymbolBlocks {
    /// Extracts the blocks from a system assembled on a single periodic
    /// unit cell.
    pub fn from_system(sys: &GlobalSystem, dim: usize) -> Result<Self> {
        let n = sys.size();
        let mut couplings: BTreeMap<Vec<i32>, DMatrix<f64>> = BTreeMap::new();
        let mut penalty: BTreeMap<Vec<i32>, DMatrix<f64>> = BTreeMap::new();
        for b in &sys.blocks {
            let offset = if b.offset.is_empty() {
                vec![0; dim]
            } else {
                b.offset.clone()
            };
            if offset.len() != dim || offset.iter().any(|o| o.abs() > 1) {
                return Err(Error::InvalidMesh(format!(
                    "coupling between elements {} and {} spans cell offset {:?}",
                    b.row, b.col, offset
                )));
            }
            let (r, c) = (sys.dofs.offsets[b.row], sys.dofs.offsets[b.col]);
            let shape = (b.matrix.nrows(), b.matrix.ncols());
            if b.part == Part::Ip {
                let pen = penalty.entry(offset.clone()).or_insert_with(|| DMatrix::zeros(n, n));
                let mut v = pen.view_mut((r, c), shape);
                v += &b.matrix;
            }
            let a = couplings.entry(offset).or_insert_with(|| DMatrix::zeros(n, n));
            let mut v = a.view_mut((r, c), shape);
            v += &b.matrix;
        }
        let mass = sys.mass_dense();
        let l = cholesky_lower(&mass)?;
        let mass_linv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::invalid("singular cell mass matrix"))?;
        Ok(Self {
            dim,
            m_cell: n,
            mass,
            couplings,
            penalty,
            mass_linv,
            mass_blocks: sys.mass.clone(),
        })
    }

    fn unit(&self, i: usize, sign: i32) -> Vec<i32> {
        let mut o = vec![0; self.dim];
        o[i] = sign;
        o
    }

    pub fn a0(&self) -> DMatrix<f64> {
        self.couplings
            .get(&vec![0; self.dim])
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(self.m_cell, self.m_cell))
    }

    /// Coupling to the neighbouring cell in direction `+e_i`.
    pub fn a_plus(&self, i: usize) -> DMatrix<f64> {
        self.couplings
            .get(&self.unit(i, 1))
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(self.m_cell, self.m_cell))
    }

    pub fn a_minus(&self, i: usize) -> DMatrix<f64> {
        self.couplings
            .get(&self.unit(i, -1))
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(self.m_cell, self.m_cell))
    }

    /// Same blocks with every penalty contribution multiplied by `c`.
    pub fn with_penalty_scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        for (o, p) in &self.penalty {
            if let Some(a) = out.couplings.get_mut(o) {
                *a += p * (c - 1.0);
            }
        }
        for p in out.penalty.values_mut() {
            *p *= c;
        }
        out
    }

    /// Real and imaginary parts of `Â(z)` for `N` cells per direction.
    pub fn symbol(&self, z: &[usize], n: usize) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        self.symbol_scaled(z, n, 1.0)
    }

    /// `Â(z)` with the penalty part multiplied by `c`.
    pub fn symbol_scaled(&self, z: &[usize], n: usize, c: f64) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        let mut re = DMatrix::zeros(self.m_cell, self.m_cell);
        let mut im = DMatrix::zeros(self.m_cell, self.m_cell);
        let mut complex = false;
        let terms = self
            .couplings
            .iter()
            .map(|(o, a)| (o, a, 1.0))
            .chain(self.penalty.iter().filter(|_| c != 1.0).map(|(o, p)| (o, p, c - 1.0)));
        for (o, a, w) in terms {
            let k = o
                .iter()
                .zip(z)
                .map(|(&l, &zi)| l as i64 * zi as i64)
                .sum::<i64>()
                .rem_euclid(n as i64);
            if k == 0 {
                re.zip_apply(a, |x, y| *x += w * y);
            } else if 2 * k == n as i64 {
                re.zip_apply(a, |x, y| *x -= w * y);
            } else {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let (wc, ws) = (w * theta.cos(), w * theta.sin());
                re.zip_apply(a, |x, y| *x += wc * y);
                im.zip_apply(a, |x, y| *x += ws * y);
                complex = true;
            }
        }
        (re, complex.then_some(im))
    }

    /// Eigenvalues of the pencil `(Â(z), M₀)`, ascending.
    pub fn pencil_eigenvalues(&self, z: &[usize], n: usize) -> Vec<f64> {
        let s = self.reduced(z, n);
        let ev = sym_eigenvalues(&s);
        if s.nrows() == self.m_cell {
            ev
        } else {
            // the real embedding doubles every eigenvalue
            ev.into_iter().step_by(2).collect()
        }
    }

    /// `L⁻¹ Â(z) L⁻ᴴ`, as a real symmetric matrix (embedded when complex).
    fn reduced(&self, z: &[usize], n: usize) -> DMatrix<f64> {
        let (re, im) = self.symbol(z, n);
        let li = &self.mass_linv;
        match im {
            None => {
                let mut s = li * re * li.transpose();
                symmetrize(&mut s);
                s
            }
            Some(im) => {
                let mut s = embed(&(li * re * li.transpose()), &(li * im * li.transpose()));
                symmetrize(&mut s);
                s
            }
        }
    }

    /// True when every pencil has all eigenvalues above `-delta`.
    pub fn is_psd(&self, n: usize, delta: f64) -> bool {
        wave_vectors(self.dim, n)
            .par_iter()
            .all(|z| self.is_psd_mode(z, n, 1.0, delta))
    }

    /// True when the pencil `(Â(z), M₀)` with penalty scale `c` has all
    /// eigenvalues above `-delta`, tested by Cholesky factorization of
    /// `Â(z) + δ M₀` (of its real embedding when complex).
    pub fn is_psd_mode(&self, z: &[usize], n: usize, c: f64, delta: f64) -> bool {
        let (re, im) = self.symbol_scaled(z, n, c);
        let mut s = match im {
            None => re,
            Some(im) => embed(&re, &im),
        };
        let m = self.m_cell;
        for k in 0..s.nrows() / m {
            let mut v = s.view_mut((k * m, k * m), (m, m));
            v += &self.mass * delta;
        }
        symmetrize(&mut s);
        s.cholesky().is_some()
    }

    /// Largest pencil eigenvalue at wave vector `z` with penalty scale `c`,
    /// by Lanczos on `L⁻¹Â(z)L⁻ᴴ`.
    pub fn mode_lambda_max(&self, z: &[usize], n: usize, c: f64, tol: &Tolerances) -> Result<f64> {
        let (re, im) = self.symbol_scaled(z, n, c);
        let mb = &self.mass_blocks;
        let m = self.m_cell;
        let r = match im {
            None => lanczos_largest(m, |x| mb.apply_linv(&(&re * mb.apply_linvt(x))), tol)?,
            Some(im) => lanczos_largest(
                2 * m,
                |x| {
                    let a = mb.apply_linvt(&x.rows(0, m).clone_owned());
                    let b = mb.apply_linvt(&x.rows(m, m).clone_owned());
                    let mut y = DVector::zeros(2 * m);
                    y.rows_mut(0, m).copy_from(&mb.apply_linv(&(&re * &a - &im * &b)));
                    y.rows_mut(m, m).copy_from(&mb.apply_linv(&(&im * &a + &re * &b)));
                    y
                },
                tol,
            )?,
        };
        Ok(r.value)
    }

    /// `λ_max(M⁻¹A(c·η))` of the periodic mesh of `N^d` cells.
    pub fn lambda_max(&self, n: usize, c: f64, tol: &Tolerances) -> Result<f64> {
        let vals = wave_vectors(self.dim, n.max(1))
            .par_iter()
            .map(|z| self.mode_lambda_max(z, n.max(1), c, tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(vals.into_iter().fold(0.0, f64::max))
    }

    /// Largest entrywise deviation of `Â(z)` from its Hermitian transpose,
    /// relative to its largest entry.
    pub fn hermitian_defect(&self, theta: &[f64]) -> f64 {
        let mut re = DMatrix::zeros(self.m_cell, self.m_cell);
        let mut im = DMatrix::zeros(self.m_cell, self.m_cell);
        for (o, a) in &self.couplings {
            let t: f64 = o.iter().zip(theta).map(|(&l, &t)| l as f64 * t).sum();
            re += a * t.cos();
            im += a * t.sin();
        }
        let scale = max_abs(&re).max(max_abs(&im)).max(f64::MIN_POSITIVE);
        let dr = max_abs(&(&re - re.transpose()));
        let di = max_abs(&(&im + im.transpose()));
        dr.max(di) / scale
    }
}

/// Real symmetric embedding `[[X, −Y], [Y, X]]` of the Hermitian `X + iY`.
fn embed(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    let mut s = DMatrix::zeros(2 * m, 2 * m);
    s.view_mut((0, 0), (m, m)).copy_from(x);
    s.view_mut((m, m), (m, m)).copy_from(x);
    s.view_mut((0, m), (m, m)).copy_from(&(-y));
    s.view_mut((m, 0), (m, m)).copy_from(y);
    s
}

/// All `z ∈ {0,…,N−1}^d`.
pub fn wave_vectors(dim: usize, n: usize) -> Vec<Vec<usize>> {
    let total = n.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            (0..dim)
                .map(|_| {
                    let z = k % n;
                    k /= n;
                    z
                })
                .collect()
        })
        .collect()
}

/// Assembles the symbol blocks of a single periodic unit cell.
pub fn symbol_blocks(cell: &Mesh, eta: &[f64], opts: AssemblyOptions) -> Result<SymbolBlocks> {
    let sys = assemble(cell, eta, opts)?;
    SymbolBlocks::from_system(&sys, cell.dim)
}

/// Extreme eigenvalues for every wave vector.
pub fn sweep(blocks: &SymbolBlocks, n: usize) -> Vec<ModeEigen> {
    let n = n.max(1);
    wave_vectors(blocks.dim, n)
        .into_par_iter()
        .map(|z| {
            let ev = blocks.pencil_eigenvalues(&z, n);
            ModeEigen {
                lambda_max: *ev.last().unwrap_or(&0.0),
                lambda_min: *ev.first().unwrap_or(&0.0),
                z,
            }
        })
        .collect()
}

/// `λ_max(M⁻¹A)` of the periodic mesh of `N^d` cells, from dense
/// eigenvalues of every pencil.
pub fn spectral_radius(blocks: &SymbolBlocks, n: usize) -> f64 {
    sweep(blocks, n).iter().map(|m| m.lambda_max).fold(0.0, f64::max)
}

/// Smallest pencil eigenvalue over all wave vectors.
pub fn psd_min_eig(blocks: &SymbolBlocks, n: usize) -> f64 {
    sweep(blocks, n)
        .iter()
        .map(|m| m.lambda_min)
        .fold(f64::INFINITY, f64::min)
}

/// Writes `(z, λ_max, λ_min)` rows.
pub fn write_csv(modes: &[ModeEigen], out: &mut impl Write) -> Result<()> {
    writeln!(out, "z,lambda_max,lambda_min")?;
    for m in modes {
        let z: Vec<String> = m.z.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{:.12e},{:.12e}", z.join(" "), m.lambda_max, m.lambda_min)?;
    }
    Ok(())
}
