//! Element penalty bounds, weighted spectral bounds and time-step
//! estimates, and the sharpness study of periodic mesh families.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{AssemblyOptions, Discretization, ElementBlocks, GlobalSystem, NuPolicy, WeightedSystem};
use crate::error::{Error, Result};
use crate::fourier::{wave_vectors, SymbolBlocks};
use crate::linalg::{
    generalized_eigenvalues, lanczos, power_iteration, power_iteration_dense, sym_eigen_desc, PowerResult, Tolerances,
};
use crate::mesh::{generate, BoundarySpec, Decomposition, Mesh, MeshFamily, WeightedSubmesh};
use crate::refelem::ReferenceShape;

/// Which boundary form bounds the DG term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `κ*`: boundary energy `∫ ν⁻¹ ∇u : C : ∇u`.
    Star,
    /// `κ**`: normal flux `∫ ν⁻¹ (C:∇u·n) ĉ_n⁺ (C:∇u·n)`.
    Star2,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Star => "star",
            Variant::Star2 => "star2",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "star" | "*" | "kappa*" => Ok(Variant::Star),
            "star2" | "**" | "kappa**" => Ok(Variant::Star2),
            _ => Err(Error::invalid(format!(
                "unknown variant `{s}` (expected star or star2)"
            ))),
        }
    }
}

/// Eigenvalue method for `λ_max` of symmetric operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSolver {
    #[default]
    Power,
    Lanczos,
    Dense,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub tol: Tolerances,
    /// Time-integrator constant in `Δt = c_method / √λ`.
    pub c_method: f64,
    /// Solver for the element penalty constants.
    pub kappa_solver: EigenSolver,
    /// Solver for the submesh spectral bounds.
    pub lambda_solver: EigenSolver,
    pub assembly: AssemblyOptions,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            c_method: 2.0,
            kappa_solver: EigenSolver::Power,
            lambda_solver: EigenSolver::Power,
            assembly: AssemblyOptions::default(),
        }
    }
}

impl StabilityOptions {
    pub fn validate(&self) -> Result<()> {
        self.tol.validate()?;
        if !(self.c_method > 0.0) || !self.c_method.is_finite() {
            return Err(Error::invalid("c_method must be positive"));
        }
        Ok(())
    }
}

/// `Vᵗ K V = D` with `D` sorted by decreasing value.
#[derive(Debug, Clone)]
pub struct CongruenceDecomposition {
    pub v: DMatrix<f64>,
    pub d: DVector<f64>,
    pub rank: usize,
    pub tol_rank: f64,
}

/// Diagonalizes a symmetric PSD matrix by an orthogonal congruence.
/// Entries below `tol_rank·max|D|` count as zero.
pub fn congruence(k: &DMatrix<f64>, tol_rank: f64) -> Result<CongruenceDecomposition> {
    if k.nrows() != k.ncols() {
        return Err(Error::DimensionMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", k.nrows(), k.ncols()),
        });
    }
    let (vals, v) = sym_eigen_desc(k);
    let scale = vals.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let min = vals.last().copied().unwrap_or(0.0);
    if min < -tol_rank * scale {
        return Err(Error::NotPsd { min_eig: min, scale });
    }
    let rank = vals.iter().filter(|&&x| x > tol_rank * scale).count();
    Ok(CongruenceDecomposition {
        v,
        d: DVector::from_vec(vals),
        rank,
        tol_rank,
    })
}

/// Penalty constant of one element.
#[derive(Debug, Clone)]
pub struct KappaResult {
    pub kappa: f64,
    pub rank: usize,
    pub iterations: usize,
    /// Maximizer of `B(u,u)/K(u,u)` in the element's coefficients.
    pub vector: DVector<f64>,
}

fn largest<F>(
    n: usize,
    apply: F,
    dense: Option<&DMatrix<f64>>,
    solver: EigenSolver,
    tol: &Tolerances,
) -> Result<PowerResult>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    match (solver, dense) {
        (EigenSolver::Power, _) => {
            let r = match dense {
                Some(s) => power_iteration_dense(s, tol),
                None => power_iteration(n, &apply, tol),
            };
            match r {
                Err(Error::NonConvergence { iterations, last, .. }) => {
                    log::warn!(
                        "power iteration stalled after {iterations} iterations at {last:e}; switching to Lanczos"
                    );
                    match dense {
                        Some(s) => lanczos(n, |x| s * x, tol),
                        None => lanczos(n, apply, tol),
                    }
                }
                r => r,
            }
        }
        (EigenSolver::Lanczos, _) => lanczos(n, apply, tol),
        (EigenSolver::Dense, Some(s)) => dense_largest(s),
        (EigenSolver::Dense, None) => {
            if n > tol.dense_limit {
                return Err(Error::SizeGuard {
                    size: n,
                    limit: tol.dense_limit,
                });
            }
            let s = DMatrix::from_columns(
                &(0..n)
                    .map(|j| apply(&DVector::from_fn(n, |i, _| f64::from(i == j))))
                    .collect::<Vec<_>>(),
            );
            dense_largest(&s)
        }
    }
}

fn dense_largest(s: &DMatrix<f64>) -> Result<PowerResult> {
    let (vals, vecs) = sym_eigen_desc(s);
    if vals.is_empty() {
        return Ok(PowerResult {
            value: 0.0,
            vector: DVector::zeros(0),
            iterations: 0,
        });
    }
    let i = if vals[0].abs() >= vals[vals.len() - 1].abs() {
        0
    } else {
        vals.len() - 1
    };
    Ok(PowerResult {
        value: vals[i].abs(),
        vector: vecs.column(i).clone_owned(),
        iterations: 1,
    })
}

/// `κ = λ_max(D̃^{-1/2} Ṽᵗ B Ṽ D̃^{-1/2})` over the range of the element
/// stiffness.
pub fn kappa_of(eb: &ElementBlocks, variant: Variant, solver: EigenSolver, tol: &Tolerances) -> Result<KappaResult> {
    let b = match variant {
        Variant::Star => &eb.boundary_star,
        Variant::Star2 => &eb.boundary_star2,
    };
    let dec = congruence(&eb.stiffness, tol.tol_rank)?;
    let k = dec.rank;
    if k == 0 {
        return Ok(KappaResult {
            kappa: 0.0,
            rank: 0,
            iterations: 0,
            vector: DVector::zeros(eb.stiffness.nrows()),
        });
    }
    let mut w = dec.v.columns(0, k).clone_owned();
    for (j, mut col) in w.column_iter_mut().enumerate() {
        col /= dec.d[j].sqrt();
    }
    let s = w.transpose() * b * &w;
    let r = largest(k, |x| &s * x, Some(&s), solver, tol)?;
    Ok(KappaResult {
        kappa: r.value,
        rank: k,
        iterations: r.iterations,
        vector: w * r.vector,
    })
}

/// Coercivity constant `sup_{x∈[1,c]} min(1 − 1/x, (c − x)/c) = 1 − c^{-1/2}`.
pub fn coercivity_constant(c_kappa: f64) -> Result<f64> {
    if !(c_kappa >= 1.0) || !c_kappa.is_finite() {
        return Err(Error::invalid(format!("c_kappa must be at least 1, got {c_kappa}")));
    }
    Ok(1.0 - c_kappa.sqrt().recip())
}

/// Trace-inequality penalty for simplices: `p(p+1)` on triangles and
/// `p(p+2)` on tetrahedra, used with [`NuPolicy::InscribedDiameter`].
pub fn penalty_mulder(shape: ReferenceShape, p: usize) -> Result<f64> {
    let p = p as f64;
    match shape {
        ReferenceShape::Triangle => Ok(p * (p + 1.0)),
        ReferenceShape::Tetrahedron => Ok(p * (p + 2.0)),
        _ => Err(Error::invalid(format!(
            "{} is not a triangle or tetrahedron",
            shape.name()
        ))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ElementPenalty {
    pub element: usize,
    pub kappa: f64,
    pub rank: usize,
    pub iterations: usize,
    pub eta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PenaltyReport {
    pub variant: Variant,
    pub c_kappa: f64,
    pub elements: Vec<ElementPenalty>,
}

impl PenaltyReport {
    pub fn eta(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.eta).collect()
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "element,kappa,rank,iterations,eta,variant")?;
        for e in &self.elements {
            writeln!(
                out,
                "{},{:.12e},{},{},{:.12e},{}",
                e.element, e.kappa, e.rank, e.iterations, e.eta, self.variant
            )?;
        }
        Ok(())
    }
}

/// `η_e = c_κ κ_e` for every element.
pub fn penalties(
    disc: &Discretization,
    variant: Variant,
    c_kappa: f64,
    opts: &StabilityOptions,
) -> Result<PenaltyReport> {
    if !(c_kappa >= 1.0) || !c_kappa.is_finite() {
        return Err(Error::invalid(format!("c_kappa must be at least 1, got {c_kappa}")));
    }
    let elements = disc
        .elements
        .par_iter()
        .enumerate()
        .map(|(e, eb)| {
            let r = kappa_of(eb, variant, opts.kappa_solver, &opts.tol)?;
            Ok(ElementPenalty {
                element: e,
                kappa: r.kappa,
                rank: r.rank,
                iterations: r.iterations,
                eta: c_kappa * r.kappa,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PenaltyReport {
        variant,
        c_kappa,
        elements,
    })
}

/// `Δt = c / √λ`; infinite when `λ = 0`.
pub fn time_step(c_method: f64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        f64::INFINITY
    } else {
        c_method / lambda.sqrt()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SubmeshBound {
    pub index: usize,
    pub elements: usize,
    pub dofs: usize,
    pub lambda: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeStepReport {
    pub submeshes: Vec<SubmeshBound>,
    pub lambda_bar: f64,
    pub dt_est: f64,
    pub c_method: f64,
    pub lambda_exact: Option<f64>,
    pub dt_exact: Option<f64>,
}

impl TimeStepReport {
    /// Records an exact spectral radius, checking that the bound dominates it.
    pub fn with_exact(mut self, lambda: f64) -> Result<Self> {
        if self.lambda_bar < lambda - 1e-8 * self.lambda_bar.max(lambda) {
            return Err(Error::EstimateViolated(format!(
                "bound {} below exact {}",
                self.lambda_bar, lambda
            )));
        }
        self.lambda_exact = Some(lambda);
        self.dt_exact = Some(time_step(self.c_method, lambda));
        Ok(self)
    }
}

/// `λ_max(M'⁻¹A')` of a weighted submesh system.
pub fn submesh_lambda(ws: &WeightedSystem, solver: EigenSolver, tol: &Tolerances) -> Result<PowerResult> {
    let n = ws.dofs.total;
    let apply = |x: &DVector<f64>| ws.mass.apply_linv(&ws.stiffness.apply(&ws.mass.apply_linvt(x)));
    if solver == EigenSolver::Dense {
        if n > tol.dense_limit {
            return Err(Error::SizeGuard {
                size: n,
                limit: tol.dense_limit,
            });
        }
        let ev = generalized_eigenvalues(&ws.mass.to_dense(), &ws.stiffness.to_dense())?;
        let value = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        return Ok(PowerResult {
            value,
            vector: DVector::zeros(n),
            iterations: 1,
        });
    }
    largest(n, apply, None, solver, tol)
}

/// `λ̄ = max_ω λ_max((M'_ω)⁻¹A'_ω)` and `Δt_est = c_method/√λ̄`.
pub fn lambda_bound(
    mesh: &Mesh,
    disc: &Discretization,
    decomposition: &Decomposition,
    eta: &[f64],
    opts: &StabilityOptions,
) -> Result<TimeStepReport> {
    decomposition.check(mesh)?;
    bound_over(mesh, disc, &decomposition.submeshes, eta, opts)
}

fn bound_over(
    mesh: &Mesh,
    disc: &Discretization,
    subs: &[WeightedSubmesh],
    eta: &[f64],
    opts: &StabilityOptions,
) -> Result<TimeStepReport> {
    let submeshes = subs
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let ws = disc.weighted_system(mesh, w, eta)?;
            let r = submesh_lambda(&ws, opts.lambda_solver, &opts.tol)?;
            Ok(SubmeshBound {
                index: i,
                elements: ws.elements.len(),
                dofs: ws.dofs.total,
                lambda: r.value,
                iterations: r.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lambda_bar = submeshes.iter().map(|s| s.lambda).fold(0.0, f64::max);
    Ok(TimeStepReport {
        submeshes,
        lambda_bar,
        dt_est: time_step(opts.c_method, lambda_bar),
        c_method: opts.c_method,
        lambda_exact: None,
        dt_exact: None,
    })
}

/// Vertex-decomposition bound evaluated only on the submeshes whose vertex
/// lies in the first unit cell. On periodic meshes of identical cells the
/// remaining submeshes are translates with the same spectrum.
pub fn lambda_bound_first_cell(
    mesh: &Mesh,
    disc: &Discretization,
    eta: &[f64],
    opts: &StabilityOptions,
) -> Result<TimeStepReport> {
    mesh.vertex_decomposition().check(mesh)?;
    let subs: Vec<WeightedSubmesh> = mesh
        .first_cell_classes()
        .into_iter()
        .map(|c| mesh.vertex_submesh(c))
        .collect();
    bound_over(mesh, disc, &subs, eta, opts)
}

/// Largest eigenvalue of `M⁻¹A` by a dense symmetric reduction.
pub fn lambda_exact_dense(sys: &GlobalSystem, tol: &Tolerances) -> Result<f64> {
    let n = sys.size();
    if n > tol.dense_limit {
        return Err(Error::SizeGuard {
            size: n,
            limit: tol.dense_limit,
        });
    }
    let ev = generalized_eigenvalues(&sys.mass_dense(), &sys.stiffness_dense())?;
    Ok(ev.last().copied().unwrap_or(0.0).max(0.0))
}

/// How the penalty of a study is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyChoice {
    Kappa(Variant),
    /// `p(p+1)` or `p(p+2)` with the inscribed-diameter scaling.
    Mulder,
}

/// A periodic mesh family at one degree: the unit cell with its symbol
/// blocks, and a mesh of `2^d` cells for the submesh bound.
pub struct FamilyStudy {
    pub family: MeshFamily,
    pub p: usize,
    pub choice: PenaltyChoice,
    pub opts: StabilityOptions,
    pub cell: Mesh,
    pub cell_eta: Vec<f64>,
    pub blocks: SymbolBlocks,
}

/// Cells per direction of the Fourier sweep.
pub const FOURIER_N: usize = 2;

impl FamilyStudy {
    pub fn new(family: MeshFamily, p: usize, choice: PenaltyChoice, opts: &StabilityOptions) -> Result<Self> {
        opts.validate()?;
        let mut opts = *opts;
        if choice == PenaltyChoice::Mulder {
            opts.assembly.nu = NuPolicy::InscribedDiameter;
        }
        let cell = generate(family, p, 1, BoundarySpec::Periodic)?;
        let disc = Discretization::new(&cell, opts.assembly)?;
        let cell_eta = study_eta(&cell, &disc, choice, &opts)?;
        let sys = disc.system(&cell, &cell_eta)?;
        let blocks = SymbolBlocks::from_system(&sys, cell.dim)?;
        Ok(Self {
            family,
            p,
            choice,
            opts,
            cell,
            cell_eta,
            blocks,
        })
    }

    /// `λ_max(M⁻¹A(c·η))` on the `N^d`-cell mesh.
    pub fn lambda(&self, c: f64) -> Result<f64> {
        self.blocks.lambda_max(FOURIER_N, c, &self.opts.tol)
    }

    /// PSD test of `A(c·η)` relative to `scale`.
    pub fn is_psd(&self, c: f64, scale: f64) -> bool {
        wave_vectors(self.blocks.dim, FOURIER_N)
            .iter()
            .all(|z| self.is_psd_mode(z, c, scale))
    }

    fn is_psd_mode(&self, z: &[usize], c: f64, scale: f64) -> bool {
        self.blocks.is_psd_mode(z, FOURIER_N, c, self.opts.tol.tol_psd * scale)
    }

    /// `λ̄` from the first-cell vertex submeshes of the `2^d`-cell mesh.
    pub fn lambda_bound(&self) -> Result<TimeStepReport> {
        let mesh = generate(self.family, self.p, FOURIER_N, BoundarySpec::Periodic)?;
        let disc = Discretization::new(&mesh, self.opts.assembly)?;
        let eta = study_eta(&mesh, &disc, self.choice, &self.opts)?;
        lambda_bound_first_cell(&mesh, &disc, &eta, &self.opts)
    }
}

fn study_eta(mesh: &Mesh, disc: &Discretization, choice: PenaltyChoice, opts: &StabilityOptions) -> Result<Vec<f64>> {
    match choice {
        PenaltyChoice::Kappa(v) => Ok(penalties(disc, v, 1.0, opts)?.eta()),
        PenaltyChoice::Mulder => mesh
            .elements
            .iter()
            .map(|el| penalty_mulder(el.shape, el.degree))
            .collect(),
    }
}

/// Bisection levels of [`cmin_bisection`]; the final bracket has width
/// `2^-14 ≈ 6.1e-5`.
pub const CMIN_LEVELS: u32 = 14;

/// PSD threshold of the penalty scaling, `inf{c ∈ [0,1] : A(c·η) ⪰ 0}`,
/// rounded to two decimals.
///
/// The threshold is bracketed by bisection to width `2^-CMIN_LEVELS` and the
/// bracket midpoint is rounded to the nearest hundredth, so `A(c_min·η)`
/// may be marginally indefinite. The PSD slack is `tol_psd·λ_max(A(η))`.
pub fn cmin_bisection(study: &FamilyStudy) -> Result<f64> {
    Ok((cmin_threshold(study)? * 100.0).round() / 100.0)
}

/// The unrounded threshold bracket midpoint.
///
/// Bisects on the dyadic grid of spacing `2^-CMIN_LEVELS`, one wave vector
/// at a time: a mode already positive semidefinite at the running maximum
/// costs a single factorization.
pub fn cmin_threshold(study: &FamilyStudy) -> Result<f64> {
    let scale = study.lambda(1.0)?;
    if !study.is_psd(1.0, scale) {
        return Err(Error::EstimateViolated(format!(
            "{} p={}: A(η) is not positive semidefinite",
            study.family, study.p
        )));
    }
    if study.is_psd(0.0, scale) {
        return Ok(0.0);
    }
    let grid = 1usize << CMIN_LEVELS;
    let h = 1.0 / grid as f64;
    let mut k = 1usize;
    for z in wave_vectors(study.blocks.dim, FOURIER_N) {
        if study.is_psd_mode(&z, k as f64 * h, scale) {
            continue;
        }
        let (mut lo, mut hi) = (k, grid);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if study.is_psd_mode(&z, mid as f64 * h, scale) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        k = hi;
    }
    Ok((k as f64 - 0.5) * h)
}

/// One row of a sharpness table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SharpnessRow {
    pub mesh: String,
    pub p: usize,
    pub variant: String,
    pub c_min: f64,
    pub dt_eta_min: f64,
    pub dt_eta: f64,
    pub dt_est: f64,
    pub ratio1: f64,
    pub ratio2: f64,
}

/// `c_min`, the three time steps and their ratios
/// `Δt(η_min)/Δt(η)` and `Δt(η)/Δt_est(η)`.
pub fn sharpness_ratios(
    family: MeshFamily,
    p: usize,
    variant: Variant,
    opts: &StabilityOptions,
) -> Result<SharpnessRow> {
    let study = FamilyStudy::new(family, p, PenaltyChoice::Kappa(variant), opts)?;
    let c_min = cmin_bisection(&study)?;
    let dt_eta = time_step(opts.c_method, study.lambda(1.0)?);
    let dt_eta_min = time_step(opts.c_method, study.lambda(c_min)?);
    let bound = study.lambda_bound()?;
    log::info!(
        "{family} p={p} {variant}: c_min={c_min:.2} dt={dt_eta:.4} dt_est={:.4}",
        bound.dt_est
    );
    Ok(SharpnessRow {
        mesh: family.to_string(),
        p,
        variant: variant.to_string(),
        c_min,
        dt_eta_min,
        dt_eta,
        dt_est: bound.dt_est,
        ratio1: dt_eta_min / dt_eta,
        ratio2: dt_eta / bound.dt_est,
    })
}

/// `Δt(η)` for the trace-inequality penalty on a simplicial family.
pub fn mulder_time_step(family: MeshFamily, p: usize, opts: &StabilityOptions) -> Result<f64> {
    let study = FamilyStudy::new(family, p, PenaltyChoice::Mulder, opts)?;
    Ok(time_step(opts.c_method, study.lambda(1.0)?))
}

pub fn write_rows_csv(rows: &[SharpnessRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "mesh,p,variant,c_min,dt_eta_min,dt_eta,dt_est,ratio1,ratio2")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.2},{:.4},{:.4},{:.4},{:.2},{:.2}",
            r.mesh, r.p, r.variant, r.c_min, r.dt_eta_min, r.dt_eta, r.dt_est, r.ratio1, r.ratio2
        )?;
    }
    Ok(())
}
