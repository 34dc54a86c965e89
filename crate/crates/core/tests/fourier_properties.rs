mod common;

use proptest::prelude::*;
use rand::Rng;

use sipdg::mesh::MeshFamily;
use sipdg::stability::{FamilyStudy, PenaltyChoice, Variant};

use common::{fourier_vs_dense, opts, rng};

fn families() -> impl Strategy<Value = MeshFamily> {
    use MeshFamily::*;
    prop::sample::select(vec![
        OneD,
        Square,
        Triangular,
        Quadrilateral(0.7),
        TriangularX(0.6),
        SquarePl(10.0, 1.0),
        TriPl(1.0, 10.0),
        Cubic,
        Tetrahedral,
        Hexahedral(0.5),
        TetraEm(1.0, 0.1),
        CubicIso(1.0, 0.1),
    ])
}

fn study(family: MeshFamily, p: usize) -> FamilyStudy {
    FamilyStudy::new(family, p, PenaltyChoice::Kappa(Variant::Star2), &opts()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn symbol_is_hermitian(family in families(), p in 1usize..3, seed in any::<u64>()) {
        prop_assume!(family.dim() < 3 || p == 1);
        let s = study(family, p);
        let mut g = rng(seed);
        for _ in 0..32 {
            let theta: Vec<f64> = (0..family.dim()).map(|_| g.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
            prop_assert!(s.blocks.hermitian_defect(&theta) <= 1e-11);
        }
    }

    #[test]
    fn deformed_symbols_match_assembly(
        family in prop::sample::select(vec![
            MeshFamily::Quadrilateral(0.7),
            MeshFamily::TriangularX(0.6),
            MeshFamily::TriPl(1.0, 10.0),
            MeshFamily::SquarePl(10.0, 1.0),
        ]),
        p in 1usize..3,
        n in 1usize..4,
    ) {
        let (fourier, dense) = fourier_vs_dense(family, p, n);
        prop_assert!((fourier - dense).abs() <= 1e-8 * dense.max(1.0));
    }
}

#[test]
fn regular_symbols_match_assembly() {
    use MeshFamily::*;
    for family in [OneD, Square, Triangular] {
        for p in 1..=2 {
            for n in 1..=3 {
                let (fourier, dense) = fourier_vs_dense(family, p, n);
                assert!(
                    (fourier - dense).abs() <= 1e-8 * dense.max(1.0),
                    "{family} p{p} N{n}: {fourier} vs {dense}"
                );
            }
        }
    }
}

#[test]
fn lanczos_radius_agrees_with_dense_sweep() {
    use MeshFamily::*;
    let o = opts();
    for (family, p) in [
        (Triangular, 3),
        (Quadrilateral(0.6), 2),
        (Tetrahedral, 1),
        (CubicEm(1.0, 0.1), 1),
    ] {
        let s = study(family, p);
        let lanczos = s.blocks.lambda_max(2, 1.0, &o.tol).unwrap();
        let dense = sipdg::fourier::spectral_radius(&s.blocks, 2);
        assert!(
            (lanczos - dense).abs() <= 1e-8 * dense,
            "{family} p{p}: {lanczos} vs {dense}"
        );
    }
}

/// Odd `N` omits the alternating mode, so only nested grids are compared;
/// the growth from `N = 2` to `N = 4` is reported, not asserted.
#[test]
fn radius_grows_on_nested_grids() {
    use MeshFamily::*;
    let o = opts();
    for family in [
        OneD,
        Square,
        Triangular,
        Cubic,
        Tetrahedral,
        Quadrilateral(0.6),
        Hexahedral(0.5),
    ] {
        let s = study(family, 1);
        let r: Vec<f64> = [1, 2, 3, 4]
            .iter()
            .map(|&n| s.blocks.lambda_max(n, 1.0, &o.tol).unwrap())
            .collect();
        println!(
            "{family} p1: N=1 {:.6} N=2 {:.6} N=3 {:.6} N=4 {:.6} growth(4/2) {:.2e}",
            r[0],
            r[1],
            r[2],
            r[3],
            r[3] / r[1] - 1.0
        );
        assert!(r[1] >= r[0] * (1.0 - 1e-8));
        assert!(r[3] >= r[1] * (1.0 - 1e-8));
    }
}

#[test]
#[ignore = "saturation report for every regular family and degree"]
fn saturation_report() {
    use MeshFamily::*;
    let o = opts();
    for family in [OneD, Square, Triangular, Cubic, Tetrahedral] {
        for p in 1..=3 {
            let s = study(family, p);
            let r: Vec<f64> = [2, 3, 4]
                .iter()
                .map(|&n| s.blocks.lambda_max(n, 1.0, &o.tol).unwrap())
                .collect();
            println!("{family} p{p}: N=2 {:.6} N=3 {:.6} N=4 {:.6}", r[0], r[1], r[2]);
        }
    }
}
