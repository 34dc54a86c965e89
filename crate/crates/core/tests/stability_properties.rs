mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sipdg::linalg::{generalized_eigenvalues, Tolerances};
use sipdg::mesh::{BoundarySpec, MeshFamily};
use sipdg::stability::{cmin_threshold, kappa_of, EigenSolver, FamilyStudy, PenaltyChoice, Variant};
use sipdg::timeloop::random_state;

use common::{coercivity_defect, kappa_basis_defect, opts, random_matrix, Case};

fn small_families() -> impl Strategy<Value = (MeshFamily, usize)> {
    use MeshFamily::*;
    prop::sample::select(vec![
        (OneD, 1),
        (OneD, 3),
        (Square, 2),
        (Triangular, 1),
        (Triangular, 3),
        (Rectangular(0.5), 2),
        (Quadrilateral(0.6), 2),
        (TriangularX(0.7), 2),
        (SquarePl(1.0, 10.0), 2),
        (TriPl(10.0, 1.0), 1),
        (Cubic, 1),
        (Tetrahedral, 1),
        (Hexahedral(0.6), 1),
        (TetrahedralX(0.9), 1),
        (TetraEm(1.0, 0.1), 1),
        (CubicIso(1.0, 0.01), 1),
    ])
}

/// Random SPD matrix supported on `idx` inside `n×n`.
fn spd_on(n: usize, idx: &[usize], seed: u64, shift: f64) -> DMatrix<f64> {
    let k = idx.len();
    let b = random_matrix(k, k, seed);
    let local = b.transpose() * &b + DMatrix::identity(k, k) * shift;
    let mut out = DMatrix::zeros(n, n);
    for (a, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            out[(i, j)] = local[(a, c)];
        }
    }
    out
}

fn restrict(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, c| m[(idx[a], idx[c])])
}

fn lambda_max(m: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    generalized_eigenvalues(m, a)
        .unwrap()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kappa_is_basis_invariant((family, p) in small_families(), seed in any::<u64>()) {
        let case = Case::new(family, p, 1, Variant::Star2, 1.0);
        for eb in case.disc.elements.iter().take(3) {
            for v in [Variant::Star, Variant::Star2] {
                prop_assert!(kappa_basis_defect(eb, v, seed) <= 1e-8);
            }
        }
    }

    #[test]
    fn kappa_bounds_every_quotient((family, p) in small_families(), seed in any::<u64>()) {
        let tol = Tolerances::default();
        let case = Case::new(family, p, 1, Variant::Star2, 1.0);
        let eb = &case.disc.elements[0];
        for v in [Variant::Star, Variant::Star2] {
            let r = kappa_of(eb, v, EigenSolver::Power, &tol).unwrap();
            let b = match v {
                Variant::Star => &eb.boundary_star,
                Variant::Star2 => &eb.boundary_star2,
            };
            let quotient = |u: &DVector<f64>| (u.dot(&(b * u)), u.dot(&(&eb.stiffness * u)));
            let scale = eb.stiffness.norm();
            for k in 0..1000u64 {
                let u = random_state(eb.mass.nrows(), seed.wrapping_add(k));
                let (num, den) = quotient(&u);
                if den > 1e-10 * scale * u.norm_squared() {
                    prop_assert!(num / den <= r.kappa * (1.0 + 1e-8) + 1e-12);
                }
            }
            if r.rank > 0 {
                let (num, den) = quotient(&r.vector);
                prop_assert!((num / den - r.kappa).abs() <= 1e-6 * r.kappa.max(1e-300));
            }
        }
    }

    #[test]
    fn penalized_form_is_coercive((family, p) in small_families(), c in prop::sample::select(vec![1.0, 2.0, 4.0]), seed in any::<u64>()) {
        let case = Case::new(family, p, 1, Variant::Star2, c);
        prop_assert!(coercivity_defect(&case, c, 1000, seed) >= -1e-10);
    }

    #[test]
    fn trace_energy_penalty_is_also_coercive((family, p) in small_families(), seed in any::<u64>()) {
        let case = Case::new(family, p, 1, Variant::Star, 2.0);
        prop_assert!(coercivity_defect(&case, 2.0, 200, seed) >= -1e-10);
    }

    #[test]
    fn flux_penalty_never_exceeds_energy_penalty((family, p) in small_families()) {
        let tol = Tolerances::default();
        let case = Case::new(family, p, 1, Variant::Star2, 1.0);
        for eb in &case.disc.elements {
            let star = kappa_of(eb, Variant::Star, EigenSolver::Dense, &tol).unwrap().kappa;
            let star2 = kappa_of(eb, Variant::Star2, EigenSolver::Dense, &tol).unwrap().kappa;
            prop_assert!(star2 <= star * (1.0 + 1e-9));
        }
    }

    #[test]
    fn submesh_bound_dominates_on_meshes(
        (family, p) in small_families(),
        n in 1usize..3,
        boundary in prop::sample::select(vec![BoundarySpec::Periodic, BoundarySpec::Dirichlet, BoundarySpec::Neumann]),
    ) {
        prop_assume!(family.dim() < 3 || (n == 1 && p == 1));
        let case = Case::with_boundary(family, p, n, boundary, Variant::Star2, 1.0);
        let (bar, exact) = case.dominance();
        prop_assert!(bar >= exact - 1e-8 * exact.max(1.0), "bound {bar} below {exact}");
    }

    #[test]
    fn splitting_bound_dominates(size in 2usize..40, parts in 1usize..6, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        use rand::Rng;
        let mut supports: Vec<Vec<usize>> = vec![Vec::new(); parts];
        for i in 0..size {
            supports[i % parts].push(i);
            for s in supports.iter_mut() {
                if rng.gen_bool(0.3) && !s.contains(&i) {
                    s.push(i);
                }
            }
        }
        let mut m = DMatrix::zeros(size, size);
        let mut a = DMatrix::zeros(size, size);
        let mut bound = 0.0f64;
        for (k, s) in supports.iter_mut().enumerate() {
            s.sort_unstable();
            if s.is_empty() {
                continue;
            }
            let mk = spd_on(size, s, seed.wrapping_add(2 * k as u64), 0.1);
            let ak = spd_on(size, s, seed.wrapping_add(2 * k as u64 + 1), 0.0);
            bound = bound.max(lambda_max(&restrict(&mk, s), &restrict(&ak, s)));
            m += mk;
            a += ak;
        }
        let exact = lambda_max(&m, &a);
        prop_assert!(bound >= exact * (1.0 - 1e-10));
        if parts == 1 {
            prop_assert!((bound - exact).abs() <= 1e-9 * exact);
        }
    }

    #[test]
    fn mediant_is_bounded_by_largest_ratio(pairs in prop::collection::vec((0.0f64..1e3, 1e-3f64..1e3), 1..20)) {
        let (sa, sb) = pairs.iter().fold((0.0, 0.0), |(x, y), (a, b)| (x + a, y + b));
        let max = pairs.iter().map(|(a, b)| a / b).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(sa / sb <= max * (1.0 + 1e-12));
    }
}

#[test]
fn psd_threshold_is_sharp_on_the_hundredth_grid() {
    use MeshFamily::*;
    let o = opts();
    for (family, p, v) in [
        (Triangular, 1, Variant::Star2),
        (Triangular, 2, Variant::Star2),
        (Tetrahedral, 1, Variant::Star2),
        (Cubic, 1, Variant::Star),
        (Quadrilateral(0.6), 1, Variant::Star2),
    ] {
        let study = FamilyStudy::new(family, p, PenaltyChoice::Kappa(v), &o).unwrap();
        let t = cmin_threshold(&study).unwrap();
        let scale = study.lambda(1.0).unwrap();
        let up = (t * 100.0).ceil() / 100.0;
        assert!(study.is_psd(up, scale), "{family} p{p}: indefinite at {up}");
        assert!(
            !study.is_psd(up - 0.01, scale),
            "{family} p{p}: semidefinite at {}",
            up - 0.01
        );
    }
}
