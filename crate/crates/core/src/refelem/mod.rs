//! Reference shapes, polynomial bases, quadrature rules and
//! reference-to-physical mappings.
//!
//! All reference domains are `[0,1]`-based: the unit interval, the unit
//! simplices and the unit square/cube.

mod basis;
mod mapping;
mod quadrature;

pub use basis::{basis, BasisSet};
pub use mapping::{ElementMapping, FacePoint, GeometryPoint};
pub use quadrature::{gauss_jacobi, gauss_legendre_unit, quadrature, QuadratureRule};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceShape {
    Interval,
    Triangle,
    Quadrilateral,
    Tetrahedron,
    Hexahedron,
}

const INTERVAL_FACES: [&[usize]; 2] = [&[0], &[1]];
const TRIANGLE_FACES: [&[usize]; 3] = [&[1, 2], &[0, 2], &[0, 1]];
const QUAD_FACES: [&[usize]; 4] = [&[0, 2], &[1, 3], &[0, 1], &[2, 3]];
const TET_FACES: [&[usize]; 4] = [&[1, 2, 3], &[0, 2, 3], &[0, 1, 3], &[0, 1, 2]];
const HEX_FACES: [&[usize]; 6] = [
    &[0, 2, 4, 6],
    &[1, 3, 5, 7],
    &[0, 1, 4, 5],
    &[2, 3, 6, 7],
    &[0, 1, 2, 3],
    &[4, 5, 6, 7],
];

impl ReferenceShape {
    pub fn dim(self) -> usize {
        match self {
            ReferenceShape::Interval => 1,
            ReferenceShape::Triangle | ReferenceShape::Quadrilateral => 2,
            ReferenceShape::Tetrahedron | ReferenceShape::Hexahedron => 3,
        }
    }

    pub fn is_simplex(self) -> bool {
        matches!(
            self,
            ReferenceShape::Interval | ReferenceShape::Triangle | ReferenceShape::Tetrahedron
        )
    }

    /// Simplices keep the total-degree space; the interval is treated as
    /// both simplex and tensor shape.
    pub fn is_tensor(self) -> bool {
        matches!(
            self,
            ReferenceShape::Interval | ReferenceShape::Quadrilateral | ReferenceShape::Hexahedron
        )
    }

    pub fn n_vertices(self) -> usize {
        match self {
            ReferenceShape::Interval => 2,
            ReferenceShape::Triangle => 3,
            ReferenceShape::Quadrilateral | ReferenceShape::Tetrahedron => 4,
            ReferenceShape::Hexahedron => 8,
        }
    }

    /// Reference vertex coordinates. Tensor shapes use lexicographic
    /// order (`x` fastest); simplices list the origin first, then the unit
    /// axis points.
    pub fn vertex(self, v: usize) -> Vec<f64> {
        let d = self.dim();
        if self.is_simplex() {
            let mut x = vec![0.0; d];
            if v > 0 {
                x[v - 1] = 1.0;
            }
            x
        } else {
            (0..d).map(|k| ((v >> k) & 1) as f64).collect()
        }
    }

    pub fn n_faces(self) -> usize {
        self.face_vertex_lists().len()
    }

    fn face_vertex_lists(self) -> &'static [&'static [usize]] {
        match self {
            ReferenceShape::Interval => &INTERVAL_FACES,
            ReferenceShape::Triangle => &TRIANGLE_FACES,
            ReferenceShape::Quadrilateral => &QUAD_FACES,
            ReferenceShape::Tetrahedron => &TET_FACES,
            ReferenceShape::Hexahedron => &HEX_FACES,
        }
    }

    /// Local vertex indices of a face. The first `dim` entries define the
    /// affine face parameterization `X(s) = V0 + Σ s_k (V_{k+1} - V0)`.
    pub fn face_vertices(self, face: usize) -> &'static [usize] {
        self.face_vertex_lists()[face]
    }

    /// Shape of a face; `None` for the point faces of the interval.
    pub fn face_shape(self, _face: usize) -> Option<ReferenceShape> {
        match self {
            ReferenceShape::Interval => None,
            ReferenceShape::Triangle | ReferenceShape::Quadrilateral => Some(ReferenceShape::Interval),
            ReferenceShape::Tetrahedron => Some(ReferenceShape::Triangle),
            ReferenceShape::Hexahedron => Some(ReferenceShape::Quadrilateral),
        }
    }

    /// Maps face reference coordinates to element reference coordinates.
    pub fn face_embed(self, face: usize, s: &[f64]) -> Vec<f64> {
        let fv = self.face_vertices(face);
        let mut x = self.vertex(fv[0]);
        for (k, sk) in s.iter().enumerate() {
            let vk = self.vertex(fv[k + 1]);
            for (xi, (a, b)) in x.iter_mut().zip(vk.iter().zip(self.vertex(fv[0]))) {
                *xi += sk * (a - b);
            }
        }
        x
    }

    /// Reference tangent vectors `∂X/∂s_k` of a face (columns).
    pub fn face_tangents(self, face: usize) -> DMatrix<f64> {
        let fv = self.face_vertices(face);
        let d = self.dim();
        let v0 = self.vertex(fv[0]);
        DMatrix::from_fn(d, d - 1, |i, k| self.vertex(fv[k + 1])[i] - v0[i])
    }

    /// Outward unit normal of a face in reference coordinates.
    pub fn reference_normal(self, face: usize) -> Vec<f64> {
        let d = self.dim();
        match self {
            ReferenceShape::Interval => vec![if face == 0 { -1.0 } else { 1.0 }],
            ReferenceShape::Triangle | ReferenceShape::Tetrahedron if face == 0 => {
                vec![1.0 / (d as f64).sqrt(); d]
            }
            ReferenceShape::Triangle | ReferenceShape::Tetrahedron => {
                let mut n = vec![0.0; d];
                n[face - 1] = -1.0;
                n
            }
            ReferenceShape::Quadrilateral | ReferenceShape::Hexahedron => {
                let mut n = vec![0.0; d];
                n[face / 2] = if face % 2 == 0 { -1.0 } else { 1.0 };
                n
            }
        }
    }

    /// Measure of the reference domain.
    pub fn reference_volume(self) -> f64 {
        match self {
            ReferenceShape::Interval | ReferenceShape::Quadrilateral | ReferenceShape::Hexahedron => 1.0,
            ReferenceShape::Triangle => 0.5,
            ReferenceShape::Tetrahedron => 1.0 / 6.0,
        }
    }

    /// Reference centroid.
    pub fn centroid(self) -> Vec<f64> {
        let nv = self.n_vertices();
        let mut c = vec![0.0; self.dim()];
        for v in 0..nv {
            for (ci, xi) in c.iter_mut().zip(self.vertex(v)) {
                *ci += xi / nv as f64;
            }
        }
        c
    }

    /// Vertex shape functions (barycentric or multilinear) at `xi`.
    pub fn vertex_weights(self, xi: &[f64]) -> Vec<f64> {
        if self.is_simplex() {
            let mut w = Vec::with_capacity(xi.len() + 1);
            w.push(1.0 - xi.iter().sum::<f64>());
            w.extend_from_slice(xi);
            w
        } else {
            (0..self.n_vertices())
                .map(|v| {
                    xi.iter()
                        .enumerate()
                        .map(|(k, x)| if (v >> k) & 1 == 1 { *x } else { 1.0 - x })
                        .product()
                })
                .collect()
        }
    }

    /// Gradients of the vertex shape functions, one row per vertex.
    pub fn vertex_weight_gradients(self, xi: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let nv = self.n_vertices();
        if self.is_simplex() {
            DMatrix::from_fn(nv, d, |v, k| match v {
                0 => -1.0,
                _ if v - 1 == k => 1.0,
                _ => 0.0,
            })
        } else {
            DMatrix::from_fn(nv, d, |v, k| {
                let mut g = 1.0;
                for (a, x) in xi.iter().enumerate() {
                    let bit = (v >> a) & 1 == 1;
                    g *= if a == k {
                        if bit {
                            1.0
                        } else {
                            -1.0
                        }
                    } else if bit {
                        *x
                    } else {
                        1.0 - x
                    };
                }
                g
            })
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReferenceShape::Interval => "interval",
            ReferenceShape::Triangle => "triangle",
            ReferenceShape::Quadrilateral => "quadrilateral",
            ReferenceShape::Tetrahedron => "tetrahedron",
            ReferenceShape::Hexahedron => "hexahedron",
        }
    }
}

/// Volume quadrature used for element integrals: degree `2p + 2` on
/// simplices; on tensor shapes `p + 1` Gauss-Legendre points per direction,
/// plus `extra_points` (used when coefficients vary inside the element).
pub fn volume_rule(shape: ReferenceShape, p: usize, extra_points: usize) -> QuadratureRule {
    quadrature(shape, integration_degree(shape, p, extra_points))
}

/// Face quadrature consistent with [`volume_rule`].
pub fn face_rule(shape: ReferenceShape, face: usize, p: usize, extra_points: usize) -> QuadratureRule {
    match shape.face_shape(face) {
        None => QuadratureRule::point(),
        Some(fs) => {
            let deg = integration_degree(shape, p, extra_points);
            quadrature(fs, deg)
        }
    }
}

fn integration_degree(shape: ReferenceShape, p: usize, extra_points: usize) -> usize {
    if shape.is_simplex() && shape != ReferenceShape::Interval {
        2 * p + 2
    } else {
        // n Gauss points integrate degree 2n - 1 exactly
        2 * (p + 1 + extra_points) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPES: [ReferenceShape; 5] = [
        ReferenceShape::Interval,
        ReferenceShape::Triangle,
        ReferenceShape::Quadrilateral,
        ReferenceShape::Tetrahedron,
        ReferenceShape::Hexahedron,
    ];

    #[test]
    fn face_embedding_lands_on_face_and_normal_is_outward() {
        for shape in SHAPES {
            let c = shape.centroid();
            for f in 0..shape.n_faces() {
                let n = shape.reference_normal(f);
                let dm1 = shape.dim() - 1;
                let s = vec![0.25; dm1];
                let x = shape.face_embed(f, &s);
                // points on the face: normal·(x - v0) == 0
                let v0 = shape.vertex(shape.face_vertices(f)[0]);
                let on: f64 = n.iter().zip(x.iter().zip(&v0)).map(|(ni, (a, b))| ni * (a - b)).sum();
                assert!(on.abs() < 1e-14, "{shape:?} face {f}");
                // outward: centroid lies on the negative side
                let side: f64 = n.iter().zip(c.iter().zip(&v0)).map(|(ni, (a, b))| ni * (a - b)).sum();
                assert!(side < 0.0, "{shape:?} face {f}");
                let len: f64 = n.iter().map(|v| v * v).sum();
                assert!((len - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn vertex_weights_partition_unity_and_interpolate() {
        for shape in SHAPES {
            for v in 0..shape.n_vertices() {
                let w = shape.vertex_weights(&shape.vertex(v));
                for (k, wk) in w.iter().enumerate() {
                    assert!((wk - if k == v { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
            let w = shape.vertex_weights(&shape.centroid());
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn vertex_weight_gradients_match_finite_differences() {
        for shape in SHAPES {
            let xi: Vec<f64> = (0..shape.dim()).map(|k| 0.2 + 0.1 * k as f64).collect();
            let g = shape.vertex_weight_gradients(&xi);
            let h = 1e-6;
            for k in 0..shape.dim() {
                let mut xp = xi.clone();
                let mut xm = xi.clone();
                xp[k] += h;
                xm[k] -= h;
                let (wp, wm) = (shape.vertex_weights(&xp), shape.vertex_weights(&xm));
                for v in 0..shape.n_vertices() {
                    assert!(((wp[v] - wm[v]) / (2.0 * h) - g[(v, k)]).abs() < 1e-8);
                }
            }
        }
    }
}
