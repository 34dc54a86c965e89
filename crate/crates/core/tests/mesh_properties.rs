mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use sipdg::assembly::Discretization;
use sipdg::linalg::{asymmetry, max_abs};
use sipdg::mesh::{generate, BoundarySpec, FaceKind, Mesh, MeshFamily};
use sipdg::refelem::face_rule;

use common::opts;

fn families() -> impl Strategy<Value = MeshFamily> {
    use MeshFamily::*;
    prop::sample::select(vec![
        OneD,
        Square,
        Triangular,
        Cubic,
        Tetrahedral,
        Rectangular(0.5),
        Quadrilateral(0.6),
        TriangularX(0.7),
        Cuboid(0.7),
        Hexahedral(0.45),
        TetrahedralX(0.9),
        SquarePl(10.0, 1.0),
        TriPl(1.0, 10.0),
        CubicPl(1.0, 10.0),
        TetrahedralPl(10.0, 1.0),
        TetraEm(1.0, 0.01),
        CubicEm(1.0, 0.1),
        TetraIso(1.0, 1.0),
        CubicIso(1.0, 0.1),
    ])
}

fn boundaries() -> impl Strategy<Value = BoundarySpec> {
    prop::sample::select(vec![
        BoundarySpec::Periodic,
        BoundarySpec::Dirichlet,
        BoundarySpec::Neumann,
    ])
}

fn cells(family: MeshFamily) -> impl Strategy<Value = usize> {
    if family.dim() == 3 {
        1usize..3
    } else {
        1usize..4
    }
}

fn mesh_case() -> impl Strategy<Value = (MeshFamily, usize, BoundarySpec)> {
    (families(), boundaries()).prop_flat_map(|(f, b)| (Just(f), cells(f), Just(b)))
}

fn max_normal_mismatch(mesh: &Mesh) -> f64 {
    let mut worst = 0.0f64;
    for face in mesh.faces.iter().filter(|f| f.kind == FaceKind::Interior) {
        let (a, b) = (&face.sides[0], &face.sides[1]);
        let ea = &mesh.elements[a.element];
        let ma = mesh.element_mapping(a.element);
        let mb = mesh.element_mapping(b.element);
        for s in &face_rule(ea.shape, a.local_face, 1, 0).points {
            let pa = ma.face_point(a.local_face, s);
            let target = mesh.partner_point(face, 0, &pa.x);
            let (sb, dist) = mb.locate_on_face(b.local_face, &target);
            assert!(dist < 1e-10, "unmatched face point, distance {dist}");
            let pb = mb.face_point(b.local_face, &sb);
            let sum: f64 = pa.normal.iter().zip(&pb.normal).map(|(x, y)| (x + y).powi(2)).sum();
            worst = worst.max(sum.sqrt());
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vertex_decomposition_is_an_admissible_partition((family, n, boundary) in mesh_case()) {
        let mesh = generate(family, 1, n, boundary).unwrap();
        let dec = mesh.vertex_decomposition();
        prop_assert!(dec.check(&mesh).is_ok(), "{:?}", dec.check(&mesh));
        prop_assert!(mesh.trivial_decomposition().check(&mesh).is_ok());
    }

    #[test]
    fn volume_is_conserved((family, n, boundary) in mesh_case()) {
        let mesh = generate(family, 1, n, boundary).unwrap();
        let report = mesh.validate().unwrap();
        prop_assert!((report.volume - (n as f64).powi(family.dim() as i32)).abs() <= 1e-10);
        prop_assert!(report.min_jacobian > 0.0);
    }

    #[test]
    fn periodic_offsets_are_opposite((family, n, _b) in mesh_case()) {
        let mesh = generate(family, 1, n, BoundarySpec::Periodic).unwrap();
        for face in &mesh.faces {
            prop_assert_eq!(face.kind, FaceKind::Interior);
            prop_assert_eq!(face.sides.len(), 2);
            let (a, b) = (&face.sides[0].offset, &face.sides[1].offset);
            prop_assert!(a.iter().zip(b).all(|(x, y)| x + y == 0));
        }
    }

    #[test]
    fn neighbouring_normals_are_opposite((family, n, boundary) in mesh_case()) {
        let mesh = generate(family, 1, n, boundary).unwrap();
        prop_assert!(max_normal_mismatch(&mesh) <= 1e-12);
    }

    #[test]
    fn json_roundtrip_is_lossless((family, n, boundary) in mesh_case()) {
        let mesh = generate(family, 2, n, boundary).unwrap();
        let back = Mesh::from_json(&mesh.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, mesh);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn assembled_matrices_are_symmetric_and_split((family, n, boundary) in mesh_case(), p in 1usize..3, seed in any::<u64>()) {
        prop_assume!(family.dim() < 3 || (p == 1 && n == 1));
        let o = opts();
        let mesh = generate(family, p, n, boundary).unwrap();
        let disc = Discretization::new(&mesh, o.assembly).unwrap();
        let mut g = common::rng(seed);
        use rand::Rng;
        let eta: Vec<f64> = (0..mesh.elements.len()).map(|_| g.gen_range(0.5..5.0)).collect();
        let sys = disc.system(&mesh, &eta).unwrap();
        let a = sys.stiffness().to_dense();
        let m = sys.mass_dense();
        prop_assert!(asymmetry(&a) <= 1e-11 * max_abs(&a));
        prop_assert!(asymmetry(&m) <= 1e-11 * max_abs(&m));

        let n_dofs = sys.size();
        let (mut ms, mut as_) = (DMatrix::zeros(n_dofs, n_dofs), DMatrix::zeros(n_dofs, n_dofs));
        for omega in &mesh.vertex_decomposition().submeshes {
            let ws = disc.weighted_system(&mesh, omega, &eta).unwrap();
            let (mw, aw) = ws.expand(&sys.dofs);
            prop_assert!(asymmetry(&mw) <= 1e-11 * max_abs(&mw));
            prop_assert!(asymmetry(&aw) <= 1e-11 * max_abs(&aw).max(f64::MIN_POSITIVE));
            ms += mw;
            as_ += aw;
        }
        prop_assert!((&ms - &m).norm() <= 1e-11 * m.norm());
        prop_assert!((&as_ - &a).norm() <= 1e-11 * a.norm());
    }
}
