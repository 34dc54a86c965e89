#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sipdg::assembly::{Discretization, ElementBlocks, GlobalSystem};
use sipdg::fourier::{spectral_radius, symbol_blocks};
use sipdg::linalg::{sym_eigenvalues, Tolerances};
use sipdg::mesh::{generate, BoundarySpec, Mesh, MeshFamily};
use sipdg::refelem::{basis, face_rule};
use sipdg::stability::{
    coercivity_constant, kappa_of, lambda_bound, lambda_exact_dense, penalties, time_step, EigenSolver,
    StabilityOptions, Variant,
};
use sipdg::tensors::{cn_pinv, tensor_sqrt, Tensor4};
use sipdg::timeloop::{random_state, stability_probe, LeapFrog, ProbeResult};

pub fn opts() -> StabilityOptions {
    StabilityOptions::default()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    DMatrix::from_fn(r, c, |_, _| g.gen_range(-1.0..1.0))
}

/// A mesh with its discretization and `η = c_κ κ`.
pub struct Case {
    pub mesh: Mesh,
    pub disc: Discretization,
    pub eta: Vec<f64>,
    pub opts: StabilityOptions,
}

impl Case {
    pub fn new(family: MeshFamily, p: usize, n: usize, variant: Variant, c_kappa: f64) -> Self {
        Self::with_boundary(family, p, n, BoundarySpec::Periodic, variant, c_kappa)
    }

    pub fn with_boundary(
        family: MeshFamily,
        p: usize,
        n: usize,
        boundary: BoundarySpec,
        variant: Variant,
        c_kappa: f64,
    ) -> Self {
        let opts = opts();
        let mesh = generate(family, p, n, boundary).unwrap();
        let disc = Discretization::new(&mesh, opts.assembly).unwrap();
        let eta = penalties(&disc, variant, c_kappa, &opts).unwrap().eta();
        Self { mesh, disc, eta, opts }
    }

    pub fn system(&self) -> GlobalSystem {
        self.disc.system(&self.mesh, &self.eta).unwrap()
    }

    /// `(λ̄, λ_max)` for the vertex decomposition.
    pub fn dominance(&self) -> (f64, f64) {
        let bound = lambda_bound(
            &self.mesh,
            &self.disc,
            &self.mesh.vertex_decomposition(),
            &self.eta,
            &self.opts,
        )
        .unwrap();
        let exact = lambda_exact_dense(&self.system(), &self.opts.tol).unwrap();
        (bound.lambda_bar, exact)
    }

    /// Broken seminorm matrix `Σ_e K_e`.
    pub fn broken_seminorm(&self) -> DMatrix<f64> {
        let n = self.disc.dofs.total;
        let mut k = DMatrix::zeros(n, n);
        for (e, eb) in self.disc.elements.iter().enumerate() {
            let r = self.disc.dofs.range(e);
            k.view_mut((r.start, r.start), (r.len(), r.len()))
                .copy_from(&eb.stiffness);
        }
        k
    }
}

/// Worst coercivity defect `min (uᵗAu − γ uᵗKu) / (‖A‖ ‖u‖²)` over random
/// `u` and over the exact minimizer of the pencil.
pub fn coercivity_defect(case: &Case, c_kappa: f64, samples: usize, seed: u64) -> f64 {
    let gamma = coercivity_constant(c_kappa).unwrap();
    let a = case.system().stiffness_dense();
    let k = case.broken_seminorm();
    let radius = |m: &DMatrix<f64>| sym_eigenvalues(m).iter().fold(0.0f64, |r, v| r.max(v.abs()));
    let norm = radius(&a).max(radius(&k));
    let diff = &a - &k * gamma;
    let mut worst = sym_eigenvalues(&diff).iter().copied().fold(f64::INFINITY, f64::min) / norm;
    for s in 0..samples {
        let u = random_state(a.nrows(), seed.wrapping_add(s as u64));
        let q = u.dot(&(&diff * &u)) / (norm * u.norm_squared());
        worst = worst.min(q);
    }
    worst
}

/// Spectral radius from the cell symbol and from the assembled `N^d`-cell
/// system.
pub fn fourier_vs_dense(family: MeshFamily, p: usize, n: usize) -> (f64, f64) {
    let opts = opts();
    let cell = Case::new(family, p, 1, Variant::Star2, 1.0);
    let blocks = symbol_blocks(&cell.mesh, &cell.eta, opts.assembly).unwrap();
    let fourier = spectral_radius(&blocks, n);
    let big = Case::new(family, p, n, Variant::Star2, 1.0);
    let dense = lambda_exact_dense(&big.system(), &opts.tol).unwrap();
    (fourier, dense)
}

/// Element blocks after the change of basis `u = T w`.
pub fn change_basis(eb: &ElementBlocks, t: &DMatrix<f64>) -> ElementBlocks {
    let f = |m: &DMatrix<f64>| {
        let mut r = t.transpose() * m * t;
        r = (&r + r.transpose()) * 0.5;
        r
    };
    ElementBlocks {
        mass: f(&eb.mass),
        stiffness: f(&eb.stiffness),
        boundary_star: f(&eb.boundary_star),
        boundary_star2: f(&eb.boundary_star2),
    }
}

/// Well-conditioned random transform `I + R/2` with `‖R‖₂ < 2`.
pub fn random_transform(n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = random_matrix(n, n, seed);
    let s = r.norm();
    if s > 0.0 {
        r *= 1.9 / s;
    }
    DMatrix::identity(n, n) + r * 0.5
}

/// Relative κ change under a random basis change.
pub fn kappa_basis_defect(eb: &ElementBlocks, variant: Variant, seed: u64) -> f64 {
    let tol = Tolerances::default();
    let k0 = kappa_of(eb, variant, EigenSolver::Dense, &tol).unwrap().kappa;
    let t = random_transform(eb.mass.nrows(), seed);
    let k1 = kappa_of(&change_basis(eb, &t), variant, EigenSolver::Dense, &tol)
        .unwrap()
        .kappa;
    (k1 - k0).abs() / k0.max(f64::MIN_POSITIVE)
}

/// Leap-frog at `scale·Δt_exact` from a random state.
pub fn probe(case: &Case, scale: f64, steps: usize, seed: u64) -> ProbeResult {
    let sys = case.system();
    let lambda = lambda_exact_dense(&sys, &case.opts.tol).unwrap();
    let dt = scale * time_step(2.0, lambda);
    let lf = LeapFrog::new(&sys);
    let u0 = random_state(sys.size(), seed);
    let v0 = DVector::zeros(sys.size());
    stability_probe(&lf, dt, steps, &u0, &v0).unwrap()
}

/// `‖C^{1/2}:C^{1/2} − C‖ / ‖C‖` for `C = BᵗB`.
pub fn sqrt_defect(d: usize, m: usize, seed: u64) -> f64 {
    let b = random_matrix(d * m, d * m, seed);
    let c = Tensor4::from_flat(d, m, &(b.transpose() * &b)).unwrap();
    let r = tensor_sqrt(&c, 1e-12).unwrap();
    let back = r.double_dot(&r).unwrap();
    (back.flatten() - c.flatten()).norm() / c.norm()
}

/// Worst relative defect of `ĉ_n⁺ĉ_n û = û` and `ĉ_n ĉ_n⁺ û = û` for
/// `û = n̂·C:∇u` at the face quadrature points of every element, with
/// random discrete `u`.
pub fn flux_pinv_defect(mesh: &Mesh, seed: u64) -> f64 {
    let tol = Tolerances::default();
    let m = mesh.vars();
    let mut g = rng(seed);
    let mut worst = 0.0f64;
    for (e, el) in mesh.elements.iter().enumerate() {
        let map = mesh.element_mapping(e);
        let bs = basis(el.shape, el.degree);
        let coeffs: Vec<f64> = (0..bs.len() * m).map(|_| g.gen_range(-1.0..1.0)).collect();
        for face in 0..el.shape.n_faces() {
            let rule = face_rule(el.shape, face, el.degree, 1);
            for s in &rule.points {
                let fp = map.face_point(face, s);
                let (_, grads) = bs.eval(&fp.xi);
                let gx = grads * &fp.geometry.jac_inv;
                let sigma = DMatrix::from_fn(mesh.dim, m, |i, k| {
                    (0..bs.len()).map(|b| coeffs[b * m + k] * gx[(b, i)]).sum()
                });
                let (_, c) = el.material.eval(&el.shape.vertex_weights(&fp.xi));
                let uhat = c.normal_flux(&fp.normal, &sigma).unwrap();
                let un = uhat.norm();
                if un == 0.0 {
                    continue;
                }
                let cn = c.normal_normal(&fp.normal).unwrap().0;
                let pinv = cn_pinv(&c, &fp.normal, tol.tol_rank).unwrap().0;
                let left = (&pinv * (&cn * &uhat) - &uhat).norm() / un;
                let right = (&cn * (&pinv * &uhat) - &uhat).norm() / un;
                worst = worst.max(left).max(right);
            }
        }
    }
    worst
}
