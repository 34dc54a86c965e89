use nalgebra::{DMatrix, DVector};

use super::{quadrature, ReferenceShape};
use crate::error::{Error, Result};

/// Isoparametric vertex map from a reference shape to a physical element:
/// affine on simplices, multilinear on squares and cubes.
#[derive(Debug, Clone)]
pub struct ElementMapping {
    pub shape: ReferenceShape,
    pub nodes: Vec<Vec<f64>>,
}

/// Geometry of the map at one reference point.
#[derive(Debug, Clone)]
pub struct GeometryPoint {
    pub x: Vec<f64>,
    /// `jac[(i, j)] = ∂x_i/∂ξ_j`.
    pub jac: DMatrix<f64>,
    /// Signed Jacobian determinant.
    pub det: f64,
    pub jac_inv: DMatrix<f64>,
}

/// Geometry of the map at one point of a face.
#[derive(Debug, Clone)]
pub struct FacePoint {
    pub x: Vec<f64>,
    /// Element reference coordinates of the point.
    pub xi: Vec<f64>,
    /// Surface measure density `|J_f|` relative to the face reference
    /// parameterization.
    pub jf: f64,
    /// Absolute volume Jacobian `|J_e|`.
    pub je: f64,
    /// Outward unit normal.
    pub normal: Vec<f64>,
    pub geometry: GeometryPoint,
}

impl FacePoint {
    /// `ν = |J_f| / |J_e|`.
    pub fn nu(&self) -> f64 {
        self.jf / self.je
    }
}

impl ElementMapping {
    pub fn new(shape: ReferenceShape, nodes: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.len() != shape.n_vertices() || nodes.iter().any(|x| x.len() != shape.dim()) {
            return Err(Error::DimensionMismatch {
                expected: format!("{} vertices of dimension {}", shape.n_vertices(), shape.dim()),
                got: format!("{} vertices", nodes.len()),
            });
        }
        Ok(Self { shape, nodes })
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn map_point(&self, xi: &[f64]) -> Vec<f64> {
        let w = self.shape.vertex_weights(xi);
        let mut x = vec![0.0; self.dim()];
        for (node, wv) in self.nodes.iter().zip(&w) {
            for (xi, ni) in x.iter_mut().zip(node) {
                *xi += wv * ni;
            }
        }
        x
    }

    pub fn jacobian(&self, xi: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let g = self.shape.vertex_weight_gradients(xi);
        DMatrix::from_fn(d, d, |i, j| {
            (0..self.nodes.len()).map(|v| self.nodes[v][i] * g[(v, j)]).sum()
        })
    }

    pub fn geometry(&self, xi: &[f64]) -> GeometryPoint {
        let jac = self.jacobian(xi);
        let det = jac.determinant();
        let jac_inv = jac
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::zeros(self.dim(), self.dim()));
        GeometryPoint {
            x: self.map_point(xi),
            jac,
            det,
            jac_inv,
        }
    }

    /// Geometry at face reference coordinates `s` of local face `face`.
    pub fn face_point(&self, face: usize, s: &[f64]) -> FacePoint {
        let xi = self.shape.face_embed(face, s);
        let geometry = self.geometry(&xi);
        let d = self.dim();
        let tangents = &geometry.jac * self.shape.face_tangents(face);
        let jf = match d {
            1 => 1.0,
            2 => tangents.column(0).norm(),
            _ => tangents.column(0).cross(&tangents.column(1)).norm(),
        };
        let nref = DVector::from_vec(self.shape.reference_normal(face));
        let n = geometry.jac_inv.transpose() * nref;
        let nn = n.norm();
        FacePoint {
            x: geometry.x.clone(),
            xi,
            jf,
            je: geometry.det.abs(),
            normal: n.iter().map(|v| v / nn).collect(),
            geometry,
        }
    }

    /// Signed Jacobian determinants at the vertices and the points of a
    /// volume rule of degree `q`, returned as `(min, max)`.
    pub fn det_range(&self, q: usize) -> (f64, f64) {
        let rule = quadrature(self.shape, q);
        let corners = (0..self.shape.n_vertices()).map(|v| self.shape.vertex(v));
        corners
            .chain(rule.points.iter().cloned())
            .map(|xi| self.jacobian(&xi).determinant())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)))
    }

    /// Rejects maps whose Jacobian determinant is not strictly positive at
    /// a vertex or a quadrature point.
    pub fn check_valid(&self, element: usize, q: usize) -> Result<()> {
        let (lo, hi) = self.det_range(q);
        let scale = hi.abs().max(f64::MIN_POSITIVE);
        if !(lo > 1e-12 * scale) {
            return Err(Error::InvalidMapping {
                element,
                detail: format!("Jacobian determinant ranges over [{lo:.3e}, {hi:.3e}]"),
            });
        }
        Ok(())
    }

    /// Physical volume, by a quadrature of degree `q`.
    pub fn volume(&self, q: usize) -> f64 {
        let rule = quadrature(self.shape, q);
        rule.integrate(|xi| self.jacobian(xi).determinant().abs())
    }

    /// Face reference coordinates whose image is `target`, by Gauss-Newton
    /// from the face centroid. Returns the coordinates and the residual
    /// distance.
    pub fn locate_on_face(&self, face: usize, target: &[f64]) -> (Vec<f64>, f64) {
        let d = self.dim();
        if d == 1 {
            let x = self.face_point(face, &[]).x;
            return (vec![], (x[0] - target[0]).abs());
        }
        let fs = self.shape.face_shape(face).expect("face shape");
        let mut s = fs.centroid();
        let tref = self.shape.face_tangents(face);
        let resid = |s: &[f64]| -> DVector<f64> {
            let x = self.map_point(&self.shape.face_embed(face, s));
            DVector::from_fn(d, |i, _| x[i] - target[i])
        };
        let mut r = resid(&s);
        for _ in 0..50 {
            let jt = self.jacobian(&self.shape.face_embed(face, &s)) * &tref;
            let jtj = jt.transpose() * &jt;
            let rhs = -(jt.transpose() * &r);
            let Some(step) = jtj.lu().solve(&rhs) else { break };
            for (sk, dk) in s.iter_mut().zip(step.iter()) {
                *sk += dk;
            }
            r = resid(&s);
            if step.norm() < 1e-15 {
                break;
            }
        }
        let res = r.norm();
        (s, res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(shape: ReferenceShape) -> ElementMapping {
        let nodes = (0..shape.n_vertices()).map(|v| shape.vertex(v)).collect();
        ElementMapping::new(shape, nodes).unwrap()
    }

    #[test]
    fn identity_mapping_has_unit_jacobian() {
        for shape in [
            ReferenceShape::Triangle,
            ReferenceShape::Hexahedron,
            ReferenceShape::Tetrahedron,
        ] {
            let m = unit(shape);
            let g = m.geometry(&shape.centroid());
            assert!((g.det - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn interval_half_mapping_face_geometry() {
        let m = ElementMapping::new(ReferenceShape::Interval, vec![vec![0.0], vec![0.5]]).unwrap();
        let g = m.geometry(&[0.3]);
        assert!((g.det - 0.5).abs() < 1e-15);
        let f1 = m.face_point(1, &[]);
        assert_eq!(f1.normal, vec![1.0]);
        assert!((f1.nu() - 2.0).abs() < 1e-15);
        let f0 = m.face_point(0, &[]);
        assert_eq!(f0.normal, vec![-1.0]);
    }

    #[test]
    fn hexahedron_degenerates_at_two_thirds() {
        let corner = |x: f64| -> ElementMapping {
            // the cell [.5,1]^3 with its near corner moved to (x,x,x)
            let nodes = (0..8)
                .map(|v| {
                    if v == 0 {
                        vec![x; 3]
                    } else {
                        (0..3).map(|k| 0.5 + 0.5 * ((v >> k) & 1) as f64).collect()
                    }
                })
                .collect();
            ElementMapping::new(ReferenceShape::Hexahedron, nodes).unwrap()
        };
        assert!(corner(0.6).check_valid(0, 4).is_ok());
        let j = corner(2.0 / 3.0).jacobian(&[0.0, 0.0, 0.0]).determinant();
        assert!(j.abs() < 1e-15);
        assert!(corner(0.7).check_valid(0, 4).is_err());
    }

    #[test]
    fn quadrilateral_degenerates_at_three_quarters() {
        let quad = |x: f64| {
            let nodes = vec![vec![x, x], vec![1.0, 0.5], vec![0.5, 1.0], vec![1.0, 1.0]];
            ElementMapping::new(ReferenceShape::Quadrilateral, nodes).unwrap()
        };
        assert!(quad(0.7).check_valid(0, 4).is_ok());
        assert!(quad(0.75).check_valid(0, 4).is_err());
    }

    #[test]
    fn face_points_on_distorted_quad_and_locate() {
        let nodes = vec![vec![0.0, 0.0], vec![1.0, 0.1], vec![0.2, 1.0], vec![1.3, 1.2]];
        let m = ElementMapping::new(ReferenceShape::Quadrilateral, nodes).unwrap();
        for f in 0..4 {
            let fp = m.face_point(f, &[0.3]);
            let (s, res) = m.locate_on_face(f, &fp.x);
            assert!(res < 1e-13);
            assert!((s[0] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_push_forward_like_finite_differences() {
        let nodes = vec![vec![0.0, 0.0], vec![1.0, 0.1], vec![0.2, 1.0], vec![1.3, 1.2]];
        let m = ElementMapping::new(ReferenceShape::Quadrilateral, nodes).unwrap();
        let b = crate::refelem::basis(ReferenceShape::Quadrilateral, 2);
        let xi = [0.4, 0.35];
        let g = m.geometry(&xi);
        let (_, gref) = b.eval(&xi);
        let gphys = &gref * &g.jac_inv;
        // d/dx_k φ via perturbing physical x through the inverse map
        let h = 1e-6;
        for k in 0..2 {
            let mut dx = DVector::zeros(2);
            dx[k] = h;
            let dxi = &g.jac_inv * dx;
            let xp = [xi[0] + dxi[0], xi[1] + dxi[1]];
            let xm = [xi[0] - dxi[0], xi[1] - dxi[1]];
            let fd = (b.values(&xp) - b.values(&xm)) / (2.0 * h);
            for i in 0..b.len() {
                assert!((fd[i] - gphys[(i, k)]).abs() < 1e-4);
            }
        }
    }
}
