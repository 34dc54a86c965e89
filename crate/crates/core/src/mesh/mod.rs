//! Conforming and periodic meshes of mixed element types, their
//! validation, and weighted mesh decompositions.

mod generate;

pub use generate::{generate, parse_family, BoundarySpec, MeshFamily};

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refelem::{ElementMapping, ReferenceShape};
use crate::tensors::CoefficientField;

pub const MESH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceKind {
    Interior,
    Dirichlet,
    Neumann,
}

/// One element side of a face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceSide {
    pub element: usize,
    pub local_face: usize,
    /// Periodic translation, in periods, that carries the partner side's
    /// geometry onto this side. Zero on non-periodic meshes.
    #[serde(default)]
    pub offset: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub kind: FaceKind,
    pub sides: Vec<FaceSide>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub shape: ReferenceShape,
    pub vertices: Vec<usize>,
    pub degree: usize,
    pub material: CoefficientField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub version: u32,
    pub dim: usize,
    pub vertices: Vec<Vec<f64>>,
    /// Identification class of every vertex; periodic copies share a class.
    pub periodic_classes: Vec<usize>,
    /// Period per axis, `None` for non-periodic axes.
    pub period: Vec<Option<f64>>,
    /// Number of unit cells per axis for generated meshes.
    #[serde(default)]
    pub cells: Option<usize>,
    pub elements: Vec<Element>,
    pub faces: Vec<Face>,
}

/// A weighted submesh: element and face weights in `[0, 1]`; entries not
/// listed are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSubmesh {
    pub elements: BTreeMap<usize, f64>,
    pub faces: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub submeshes: Vec<WeightedSubmesh>,
}

/// Summary produced by [`Mesh::validate`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub elements: usize,
    pub faces: usize,
    pub interior_faces: usize,
    pub boundary_faces: usize,
    pub volume: f64,
    pub min_jacobian: f64,
}

impl Mesh {
    pub fn element_mapping(&self, e: usize) -> ElementMapping {
        let el = &self.elements[e];
        ElementMapping {
            shape: el.shape,
            nodes: el.vertices.iter().map(|&v| self.vertices[v].clone()).collect(),
        }
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Number of field components `m` (identical on all elements).
    pub fn vars(&self) -> usize {
        self.elements.first().map(|e| e.material.m).unwrap_or(1)
    }

    /// Period vector with zeros on non-periodic axes.
    pub fn period_vector(&self) -> Vec<f64> {
        self.period.iter().map(|p| p.unwrap_or(0.0)).collect()
    }

    /// Local vertex indices of the vertices of a face side.
    pub fn side_vertices(&self, side: &FaceSide) -> Vec<usize> {
        let el = &self.elements[side.element];
        el.shape
            .face_vertices(side.local_face)
            .iter()
            .map(|&lv| el.vertices[lv])
            .collect()
    }

    /// Physical centroid of a face side.
    pub fn side_centroid(&self, side: &FaceSide) -> Vec<f64> {
        let vs = self.side_vertices(side);
        let mut c = vec![0.0; self.dim];
        for v in &vs {
            for (ci, xi) in c.iter_mut().zip(&self.vertices[*v]) {
                *ci += xi / vs.len() as f64;
            }
        }
        c
    }

    /// Point on the partner side corresponding to `x` on side `a` of a face:
    /// `x - ℓ_a · period`.
    pub fn partner_point(&self, face: &Face, a: usize, x: &[f64]) -> Vec<f64> {
        let per = self.period_vector();
        let off = &face.sides[a].offset;
        x.iter()
            .enumerate()
            .map(|(i, xi)| xi - off.get(i).copied().unwrap_or(0) as f64 * per[i])
            .collect()
    }

    /// Checks the structural, geometric and material invariants of the mesh.
    pub fn validate(&self) -> Result<ValidationReport> {
        let bad = |msg: String| Err(Error::InvalidMesh(msg));
        if self.version != MESH_FORMAT_VERSION {
            return bad(format!("unsupported format version {}", self.version));
        }
        if !(1..=3).contains(&self.dim) {
            return bad(format!("dimension {} not in 1..=3", self.dim));
        }
        if self
            .vertices
            .iter()
            .any(|v| v.len() != self.dim || v.iter().any(|x| !x.is_finite()))
        {
            return bad("vertex coordinates have the wrong dimension or are not finite".into());
        }
        if self.periodic_classes.len() != self.vertices.len() {
            return bad("periodic_classes must list one class per vertex".into());
        }
        if self.period.len() != self.dim {
            return bad("period must have one entry per axis".into());
        }
        if self.elements.is_empty() {
            return bad("mesh has no elements".into());
        }
        let m = self.vars();
        let mut min_jac = f64::INFINITY;
        let mut volume = 0.0;
        for (e, el) in self.elements.iter().enumerate() {
            if el.shape.dim() != self.dim {
                return bad(format!("element {e} has shape {:?} in a {}D mesh", el.shape, self.dim));
            }
            if el.vertices.len() != el.shape.n_vertices() || el.vertices.iter().any(|&v| v >= self.vertices.len()) {
                return bad(format!("element {e} has an invalid vertex list"));
            }
            if el.material.d != self.dim || el.material.m != m {
                return bad(format!("element {e} material dimensions disagree with the mesh"));
            }
            if let Some(n) = el.material.vertex_count() {
                if n != el.vertices.len() {
                    return bad(format!("element {e} material has {n} vertex values"));
                }
            }
            el.material.check_vertices_psd()?;
            let map = self.element_mapping(e);
            let q = 2 * el.degree + 2;
            map.check_valid(e, q)?;
            min_jac = min_jac.min(map.det_range(q).0);
            volume += map.volume(q);
        }
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        let mut interior = 0;
        for (fi, f) in self.faces.iter().enumerate() {
            let expected = if f.kind == FaceKind::Interior { 2 } else { 1 };
            if f.sides.len() != expected {
                return bad(format!("face {fi} ({:?}) has {} sides", f.kind, f.sides.len()));
            }
            for s in &f.sides {
                if s.element >= self.elements.len() || s.local_face >= self.elements[s.element].shape.n_faces() {
                    return bad(format!("face {fi} references a nonexistent element face"));
                }
                if !s.offset.is_empty() && s.offset.len() != self.dim {
                    return bad(format!("face {fi} has an offset of the wrong length"));
                }
                if let Some(prev) = seen.insert((s.element, s.local_face), fi) {
                    return bad(format!(
                        "element face ({}, {}) is shared by faces {prev} and {fi}",
                        s.element, s.local_face
                    ));
                }
            }
            if f.kind == FaceKind::Interior {
                interior += 1;
                self.check_face_match(fi, f)?;
            }
        }
        let total_faces: usize = self.elements.iter().map(|e| e.shape.n_faces()).sum();
        if seen.len() != total_faces {
            return bad(format!(
                "{} element faces are not covered by any face",
                total_faces - seen.len()
            ));
        }
        if self.period.iter().all(|p| p.is_some()) {
            let expected: f64 = self.period.iter().map(|p| p.unwrap()).product();
            if (volume - expected).abs() > 1e-10 * expected {
                return bad(format!("element volumes sum to {volume}, expected {expected}"));
            }
        }
        Ok(ValidationReport {
            elements: self.elements.len(),
            faces: self.faces.len(),
            interior_faces: interior,
            boundary_faces: self.faces.len() - interior,
            volume,
            min_jacobian: min_jac,
        })
    }

    fn check_face_match(&self, fi: usize, f: &Face) -> Result<()> {
        let (a, b) = (&f.sides[0], &f.sides[1]);
        let oa = pad(&a.offset, self.dim);
        let ob = pad(&b.offset, self.dim);
        if oa.iter().zip(&ob).any(|(x, y)| x + y != 0) {
            return Err(Error::InvalidMesh(format!("face {fi}: side offsets are not opposite")));
        }
        let per = self.period_vector();
        if oa.iter().zip(&per).any(|(o, p)| *o != 0 && *p == 0.0) {
            return Err(Error::InvalidMesh(format!(
                "face {fi}: offset along a non-periodic axis"
            )));
        }
        let ma = self.element_mapping(a.element);
        let mb = self.element_mapping(b.element);
        let shape = ma.shape;
        let centre = shape.face_shape(a.local_face).map(|s| s.centroid()).unwrap_or_default();
        let pa = ma.face_point(a.local_face, &centre);
        let target = self.partner_point(f, 0, &pa.x);
        let (s, res) = mb.locate_on_face(b.local_face, &target);
        let scale = pa.jf.max(1e-300).powf(1.0 / (self.dim.max(2) - 1) as f64);
        if res > 1e-9 * scale.max(1.0) {
            return Err(Error::InvalidMesh(format!(
                "face {fi}: sides do not coincide (gap {res:.2e})"
            )));
        }
        let pb = mb.face_point(b.local_face, &s);
        let dot: f64 = pa.normal.iter().zip(&pb.normal).map(|(x, y)| x * y).sum();
        if (dot + 1.0).abs() > 1e-8 {
            return Err(Error::InvalidMesh(format!("face {fi}: normals are not opposite")));
        }
        // all corners of side a must lie on side b's face
        for v in self.side_vertices(a) {
            let t = self.partner_point(f, 0, &self.vertices[v]);
            let (_, r) = mb.locate_on_face(b.local_face, &t);
            if r > 1e-9 * scale.max(1.0) {
                return Err(Error::InvalidMesh(format!("face {fi}: nonconforming side geometry")));
            }
        }
        Ok(())
    }

    /// Identification classes of the vertices of a face (side 0).
    pub fn face_classes(&self, f: usize) -> Vec<usize> {
        self.side_vertices(&self.faces[f].sides[0])
            .iter()
            .map(|&v| self.periodic_classes[v])
            .collect()
    }

    pub fn element_classes(&self, e: usize) -> Vec<usize> {
        self.elements[e]
            .vertices
            .iter()
            .map(|&v| self.periodic_classes[v])
            .collect()
    }

    pub fn n_classes(&self) -> usize {
        self.periodic_classes.iter().copied().max().map(|c| c + 1).unwrap_or(0)
    }

    /// Vertex-based decomposition: one submesh per vertex class `q`, with
    /// `ω_e = mult_q(e)/|Q_e|` and `ω_f = mult_q(f)/|Q_f|`, where `mult`
    /// counts how many of the element (face) vertices belong to `q`.
    pub fn vertex_decomposition(&self) -> Decomposition {
        let nc = self.n_classes();
        let mut subs = vec![
            WeightedSubmesh {
                elements: BTreeMap::new(),
                faces: BTreeMap::new()
            };
            nc
        ];
        for e in 0..self.elements.len() {
            let cls = self.element_classes(e);
            let w = 1.0 / cls.len() as f64;
            for c in cls {
                *subs[c].elements.entry(e).or_insert(0.0) += w;
            }
        }
        for f in 0..self.faces.len() {
            let cls = self.face_classes(f);
            let w = 1.0 / cls.len() as f64;
            for c in cls {
                *subs[c].faces.entry(f).or_insert(0.0) += w;
            }
        }
        Decomposition {
            submeshes: subs.into_iter().filter(|s| !s.elements.is_empty()).collect(),
        }
    }

    /// One submesh holding every element and face with weight one.
    pub fn trivial_decomposition(&self) -> Decomposition {
        Decomposition {
            submeshes: vec![WeightedSubmesh {
                elements: (0..self.elements.len()).map(|e| (e, 1.0)).collect(),
                faces: (0..self.faces.len()).map(|f| (f, 1.0)).collect(),
            }],
        }
    }

    /// Vertex classes whose representative lies in the first unit cell
    /// `[0,1)^d`. On generated periodic meshes the submeshes of the other
    /// classes are translates of these.
    pub fn first_cell_classes(&self) -> Vec<usize> {
        let mut rep: BTreeMap<usize, bool> = BTreeMap::new();
        for (v, &c) in self.periodic_classes.iter().enumerate() {
            let inside = self.vertices[v].iter().all(|x| *x > -1e-9 && *x < 1.0 - 1e-9);
            let e = rep.entry(c).or_insert(false);
            *e |= inside;
        }
        rep.into_iter().filter(|(_, inside)| *inside).map(|(c, _)| c).collect()
    }

    /// Vertex submesh for a single class.
    pub fn vertex_submesh(&self, class: usize) -> WeightedSubmesh {
        let mut s = WeightedSubmesh {
            elements: BTreeMap::new(),
            faces: BTreeMap::new(),
        };
        for e in 0..self.elements.len() {
            let cls = self.element_classes(e);
            let k = cls.iter().filter(|&&c| c == class).count();
            if k > 0 {
                s.elements.insert(e, k as f64 / cls.len() as f64);
            }
        }
        for f in 0..self.faces.len() {
            let cls = self.face_classes(f);
            let k = cls.iter().filter(|&&c| c == class).count();
            if k > 0 {
                s.faces.insert(f, k as f64 / cls.len() as f64);
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mesh: Mesh = serde_json::from_str(s)?;
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Decomposition {
    /// Checks that weights lie in `[0,1]`, sum to one over the submeshes
    /// for every element and face, and that faces with positive weight only
    /// touch elements with positive weight.
    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        let mut esum = vec![0.0; mesh.elements.len()];
        let mut fsum = vec![0.0; mesh.faces.len()];
        for (i, s) in self.submeshes.iter().enumerate() {
            s.check_admissible(mesh).map_err(|e| match e {
                Error::InadmissibleDecomposition(m) => Error::InadmissibleDecomposition(format!("submesh {i}: {m}")),
                other => other,
            })?;
            for (&e, &w) in &s.elements {
                esum[e] += w;
            }
            for (&f, &w) in &s.faces {
                fsum[f] += w;
            }
        }
        if let Some(e) = esum.iter().position(|s| (s - 1.0).abs() > 1e-12) {
            return Err(Error::InadmissibleDecomposition(format!(
                "element {e} weights sum to {}",
                esum[e]
            )));
        }
        if let Some(f) = fsum.iter().position(|s| (s - 1.0).abs() > 1e-12) {
            return Err(Error::InadmissibleDecomposition(format!(
                "face {f} weights sum to {}",
                fsum[f]
            )));
        }
        Ok(())
    }
}

impl WeightedSubmesh {
    pub fn check_admissible(&self, mesh: &Mesh) -> Result<()> {
        let err = |m: String| Err(Error::InadmissibleDecomposition(m));
        for (&e, &w) in &self.elements {
            if e >= mesh.elements.len() || !(0.0..=1.0).contains(&w) {
                return err(format!("element weight {w} for element {e}"));
            }
        }
        for (&f, &w) in &self.faces {
            if f >= mesh.faces.len() || !(0.0..=1.0).contains(&w) {
                return err(format!("face weight {w} for face {f}"));
            }
            if w > 0.0 {
                for s in &mesh.faces[f].sides {
                    if self.elements.get(&s.element).copied().unwrap_or(0.0) <= 0.0 {
                        return err(format!("face {f} has weight {w} but element {} has none", s.element));
                    }
                }
            }
        }
        Ok(())
    }
}

fn pad(o: &[i32], d: usize) -> Vec<i32> {
    if o.is_empty() {
        vec![0; d]
    } else {
        o.to_vec()
    }
}
