//! Element and face matrices of the SIPDG bilinear forms, global and
//! weighted systems.
//!
//! Degrees of freedom are ordered element by element, with the field
//! component innermost: local index `b * m + l` for basis function `b` and
//! component `l`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, pinv_sym, symmetrize, Tolerances};
use crate::mesh::{FaceKind, Mesh, WeightedSubmesh};
use crate::refelem::{basis, face_rule, volume_rule, BasisSet, ElementMapping, ReferenceShape};
use crate::tensors::Tensor4;

/// Which bilinear form a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Volume,
    Dg,
    Ip,
}

/// Origin of a block: an element volume term, or the boundary of one side
/// of a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockSource {
    Element(usize),
    Face { face: usize, side: usize },
}

/// Coupling between the dofs of elements `row` and `col`. `offset` is the
/// periodic cell offset of `col` relative to `row`.
#[derive(Debug, Clone)]
pub struct Block {
    pub row: usize,
    pub col: usize,
    pub offset: Vec<i32>,
    pub part: Part,
    pub source: BlockSource,
    pub matrix: DMatrix<f64>,
}

/// Penalty scaling `ν_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuPolicy {
    /// `ν = |J_f| / |J_e|` pointwise.
    #[default]
    Jacobian,
    /// `ν = 1/(ε_f min d_i)` with `d_i` the inscribed-sphere diameters of the
    /// adjacent elements.
    InscribedDiameter,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub nu: NuPolicy,
    pub tol: Tolerances,
}

/// Element matrices: mass, volume stiffness `a_e^(C)` and the two boundary
/// auxiliary forms.
#[derive(Debug, Clone)]
pub struct ElementBlocks {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub boundary_star: DMatrix<f64>,
    pub boundary_star2: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DofMap {
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
    pub total: usize,
}

impl DofMap {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for s in &sizes {
            offsets.push(total);
            total += s;
        }
        Self { offsets, sizes, total }
    }

    pub fn range(&self, e: usize) -> std::ops::Range<usize> {
        self.offsets[e]..self.offsets[e] + self.sizes[e]
    }
}

/// Square block-sparse symmetric matrix over element dof blocks.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    pub dofs: DofMap,
    pub blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl BlockMatrix {
    pub fn new(dofs: DofMap) -> Self {
        Self {
            dofs,
            blocks: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, r: usize, c: usize, m: &DMatrix<f64>, scale: f64) {
        let entry = self
            .blocks
            .entry((r, c))
            .or_insert_with(|| DMatrix::zeros(m.nrows(), m.ncols()));
        *entry += m * scale;
    }

    pub fn size(&self) -> usize {
        self.dofs.total
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dofs.total);
        for (&(r, c), m) in &self.blocks {
            let xr = x.rows(self.dofs.offsets[c], self.dofs.sizes[c]);
            let mut yr = y.rows_mut(self.dofs.offsets[r], self.dofs.sizes[r]);
            yr.gemv(1.0, m, &xr, 1.0);
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dofs.total;
        let mut out = DMatrix::zeros(n, n);
        for (&(r, c), m) in &self.blocks {
            let mut v = out.view_mut((self.dofs.offsets[r], self.dofs.offsets[c]), (m.nrows(), m.ncols()));
            v += m;
        }
        out
    }
}

/// Block-diagonal SPD matrix with cached Cholesky factors.
#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    pub dofs: DofMap,
    pub blocks: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
}

impl BlockDiagonal {
    pub fn new(dofs: DofMap, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let factors = blocks
            .iter()
            .enumerate()
            .map(|(e, b)| {
                let mut s = b.clone();
                symmetrize(&mut s);
                s.cholesky()
                    .map(|c| c.l())
                    .ok_or_else(|| Error::InadmissibleDecomposition(format!("mass block {e} is not positive definite")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dofs, blocks, factors })
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dofs.total);
        for (e, b) in self.blocks.iter().enumerate() {
            let r = self.dofs.range(e);
            y.rows_mut(r.start, r.len()).copy_from(&(b * x.rows(r.start, r.len())));
        }
        y
    }

    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        for (e, l) in self.factors.iter().enumerate() {
            let r = self.dofs.range(e);
            let mut v = y.rows(r.start, r.len()).clone_owned();
            l.solve_lower_triangular_mut(&mut v);
            l.tr_solve_lower_triangular_mut(&mut v);
            y.rows_mut(r.start, r.len()).copy_from(&v);
        }
        y
    }

    /// `L^{-1} x`.
    pub fn apply_linv(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        for (e, l) in self.factors.iter().enumerate() {
            let r = self.dofs.range(e);
            let mut v = y.rows(r.start, r.len()).clone_owned();
            l.solve_lower_triangular_mut(&mut v);
            y.rows_mut(r.start, r.len()).copy_from(&v);
        }
        y
    }

    /// `L^{-T} x`.
    pub fn apply_linvt(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        for (e, l) in self.factors.iter().enumerate() {
            let r = self.dofs.range(e);
            let mut v = y.rows(r.start, r.len()).clone_owned();
            l.tr_solve_lower_triangular_mut(&mut v);
            y.rows_mut(r.start, r.len()).copy_from(&v);
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dofs.total;
        let mut out = DMatrix::zeros(n, n);
        for (e, b) in self.blocks.iter().enumerate() {
            let o = self.dofs.offsets[e];
            out.view_mut((o, o), (b.nrows(), b.ncols())).copy_from(b);
        }
        out
    }
}

/// Values, physical gradients and coefficients at one point of an element.
struct PointEval {
    vals: DVector<f64>,
    grads: DMatrix<f64>,
    det: f64,
    rho: f64,
    tensor: Tensor4,
    flat: DMatrix<f64>,
}

struct ElementContext<'a> {
    map: ElementMapping,
    basis: &'a BasisSet,
    mesh: &'a Mesh,
    e: usize,
    m: usize,
}

impl ElementContext<'_> {
    fn ndof(&self) -> usize {
        self.basis.len() * self.m
    }

    fn eval(&self, xi: &[f64]) -> PointEval {
        let g = self.map.geometry(xi);
        let (vals, gref) = self.basis.eval(xi);
        let grads = gref * &g.jac_inv;
        let w = self.map.shape.vertex_weights(xi);
        let (rho, tensor) = self.mesh.elements[self.e].material.eval(&w);
        let flat = tensor.flatten();
        PointEval {
            vals,
            grads,
            det: g.det.abs(),
            rho,
            tensor,
            flat,
        }
    }

    /// Flattened gradient operator, `d·m × ndof`.
    fn bmat(&self, p: &PointEval) -> DMatrix<f64> {
        let (m, d) = (self.m, self.mesh.dim);
        let mut b = DMatrix::zeros(d * m, self.ndof());
        for bf in 0..self.basis.len() {
            for l in 0..m {
                for j in 0..d {
                    b[(j * m + l, bf * m + l)] = p.grads[(bf, j)];
                }
            }
        }
        b
    }

    /// Trace operator, `m × ndof`.
    fn vmat(&self, p: &PointEval) -> DMatrix<f64> {
        let m = self.m;
        let mut v = DMatrix::zeros(m, self.ndof());
        for bf in 0..self.basis.len() {
            for l in 0..m {
                v[(l, bf * m + l)] = p.vals[bf];
            }
        }
        v
    }
}

/// Evaluation of one face side at a point.
struct SideEval {
    v: DMatrix<f64>,
    t: DMatrix<f64>,
    chat: DMatrix<f64>,
    flat: DMatrix<f64>,
    normal: Vec<f64>,
    nu: f64,
}

/// Shared per-mesh data: bases, face kinds of element faces, Mulder ν.
pub struct MeshContext<'a> {
    mesh: &'a Mesh,
    bases: HashMap<(ReferenceShape, usize), BasisSet>,
    face_of: HashMap<(usize, usize), usize>,
    opts: AssemblyOptions,
    mulder_nu: Vec<f64>,
}

fn extra_points(mesh: &Mesh, e: usize) -> usize {
    let el = &mesh.elements[e];
    if el.shape.is_tensor() && !el.material.is_constant() {
        1
    } else {
        0
    }
}

impl<'a> MeshContext<'a> {
    pub fn new(mesh: &'a Mesh, opts: AssemblyOptions) -> Result<Self> {
        let mut bases = HashMap::new();
        for el in &mesh.elements {
            bases
                .entry((el.shape, el.degree))
                .or_insert_with(|| basis(el.shape, el.degree));
        }
        let mut face_of = HashMap::new();
        for (f, face) in mesh.faces.iter().enumerate() {
            for s in &face.sides {
                face_of.insert((s.element, s.local_face), f);
            }
        }
        let mulder_nu = if opts.nu == NuPolicy::InscribedDiameter {
            let di: Vec<f64> = (0..mesh.elements.len())
                .map(|e| inscribed_diameter(mesh, e))
                .collect::<Result<_>>()?;
            mesh.faces
                .iter()
                .map(|f| {
                    let eps = if f.kind == FaceKind::Interior { 0.5 } else { 1.0 };
                    let dmin = f.sides.iter().map(|s| di[s.element]).fold(f64::INFINITY, f64::min);
                    1.0 / (eps * dmin)
                })
                .collect()
        } else {
            vec![]
        };
        Ok(Self {
            mesh,
            bases,
            face_of,
            opts,
            mulder_nu,
        })
    }

    fn context(&self, e: usize) -> ElementContext<'_> {
        let el = &self.mesh.elements[e];
        ElementContext {
            map: self.mesh.element_mapping(e),
            basis: &self.bases[&(el.shape, el.degree)],
            mesh: self.mesh,
            e,
            m: el.material.m,
        }
    }

    pub fn ndof(&self, e: usize) -> usize {
        let el = &self.mesh.elements[e];
        self.bases[&(el.shape, el.degree)].len() * el.material.m
    }

    fn face_kind(&self, e: usize, lf: usize) -> Option<FaceKind> {
        self.face_of.get(&(e, lf)).map(|&f| self.mesh.faces[f].kind)
    }

    /// Element matrices of element `e`.
    pub fn element_blocks(&self, e: usize) -> Result<ElementBlocks> {
        let ctx = self.context(e);
        let el = &self.mesh.elements[e];
        let p = el.degree;
        ctx.map.check_valid(e, 2 * p + 2)?;
        let n = ctx.ndof();
        let extra = extra_points(self.mesh, e);
        let mut mass = DMatrix::zeros(n, n);
        let mut stiff = DMatrix::zeros(n, n);
        let rule = volume_rule(el.shape, p, extra);
        for (xi, w) in rule.points.iter().zip(&rule.weights) {
            let pe = ctx.eval(xi);
            let b = ctx.bmat(&pe);
            let v = ctx.vmat(&pe);
            let s = w * pe.det;
            stiff += s * b.transpose() * &pe.flat * &b;
            mass += (s * pe.rho) * v.transpose() * &v;
        }
        let mut bstar = DMatrix::zeros(n, n);
        let mut bstar2 = DMatrix::zeros(n, n);
        for lf in 0..el.shape.n_faces() {
            if matches!(self.face_kind(e, lf), Some(FaceKind::Neumann)) {
                continue;
            }
            let frule = face_rule(el.shape, lf, p, extra);
            for (s, w) in frule.points.iter().zip(&frule.weights) {
                let fp = ctx.map.face_point(lf, s);
                let pe = ctx.eval(&fp.xi);
                let b = ctx.bmat(&pe);
                // ν⁻¹ ds = |J_e| ds̃
                bstar += (w * fp.je) * b.transpose() * &pe.flat * &b;
                let t = pe.tensor.normal_flux_operator(&fp.normal, &pe.flat) * &b;
                let chat = pe.tensor.normal_normal(&fp.normal)?.0;
                let cinv = pinv_sym(&chat, self.opts.tol.tol_rank);
                bstar2 += (w * fp.je) * t.transpose() * cinv * &t;
            }
        }
        for mtx in [&mut mass, &mut stiff, &mut bstar, &mut bstar2] {
            symmetrize(mtx);
        }
        Ok(ElementBlocks {
            mass,
            stiffness: stiff,
            boundary_star: bstar,
            boundary_star2: bstar2,
        })
    }

    /// Density-weighted load `∫ ρ Vᵗ g(x) dx` of element `e`; `g` returns
    /// `m` components at a physical point.
    pub fn load(&self, e: usize, g: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<DVector<f64>> {
        let ctx = self.context(e);
        let el = &self.mesh.elements[e];
        let rule = volume_rule(el.shape, el.degree, extra_points(self.mesh, e) + 2);
        let mut out = DVector::zeros(ctx.ndof());
        for (xi, w) in rule.points.iter().zip(&rule.weights) {
            let pe = ctx.eval(xi);
            let x = ctx.map.map_point(xi);
            let gv = g(&x);
            if gv.len() != ctx.m {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} components", ctx.m),
                    got: format!("{}", gv.len()),
                });
            }
            let s = w * pe.det * pe.rho;
            out += s * ctx.vmat(&pe).transpose() * DVector::from_vec(gv);
        }
        Ok(out)
    }

    /// Physical point and field value at reference point `xi` of element
    /// `e`, for the element coefficients `coeffs`.
    pub fn evaluate(&self, e: usize, xi: &[f64], coeffs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ctx = self.context(e);
        let (vals, _) = ctx.basis.eval(xi);
        let mut out = vec![0.0; ctx.m];
        for (b, v) in vals.iter().enumerate() {
            for (l, o) in out.iter_mut().enumerate() {
                *o += v * coeffs[b * ctx.m + l];
            }
        }
        (ctx.map.map_point(xi), out)
    }

    fn side_eval(&self, ctx: &ElementContext<'_>, lf: usize, s: &[f64]) -> Result<(SideEval, f64)> {
        let fp = ctx.map.face_point(lf, s);
        let pe = ctx.eval(&fp.xi);
        let b = ctx.bmat(&pe);
        let t = pe.tensor.normal_flux_operator(&fp.normal, &pe.flat) * &b;
        let chat = pe.tensor.normal_normal(&fp.normal)?.0;
        Ok((
            SideEval {
                v: ctx.vmat(&pe),
                t,
                chat,
                flat: pe.flat,
                normal: fp.normal.clone(),
                nu: fp.nu(),
            },
            fp.jf,
        ))
    }

    /// Face quadrature with side evaluations at matching points. Returns
    /// `(ds, evaluations per side)` per point.
    fn face_points(&self, f: usize) -> Result<Vec<(f64, Vec<SideEval>)>> {
        let face = &self.mesh.faces[f];
        let ctxs: Vec<ElementContext<'_>> = face.sides.iter().map(|s| self.context(s.element)).collect();
        let s0 = &face.sides[0];
        let el0 = &self.mesh.elements[s0.element];
        let p = face
            .sides
            .iter()
            .map(|s| self.mesh.elements[s.element].degree)
            .max()
            .unwrap_or(1);
        let extra = face
            .sides
            .iter()
            .map(|s| extra_points(self.mesh, s.element))
            .max()
            .unwrap_or(0);
        let rule = face_rule(el0.shape, s0.local_face, p, extra);
        let mut out = Vec::with_capacity(rule.len());
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let (ev0, jf) = self.side_eval(&ctxs[0], s0.local_face, s)?;
            let mut evs = vec![ev0];
            if face.sides.len() == 2 {
                let x0 = ctxs[0].map.face_point(s0.local_face, s).x;
                let target = self.mesh.partner_point(face, 0, &x0);
                let s1 = &face.sides[1];
                let (sb, res) = ctxs[1].map.locate_on_face(s1.local_face, &target);
                if res > 1e-9 * jf.max(1.0) {
                    return Err(Error::InvalidMesh(format!(
                        "face {f}: side parameterizations do not match (gap {res:.2e})"
                    )));
                }
                evs.push(self.side_eval(&ctxs[1], s1.local_face, &sb)?.0);
            }
            out.push((w * jf, evs));
        }
        Ok(out)
    }

    /// DG and unit-penalty IP blocks of face `f`. IP blocks carry the side
    /// whose `η_e` scales them.
    pub fn face_blocks(&self, f: usize) -> Result<Vec<Block>> {
        let face = &self.mesh.faces[f];
        if face.kind == FaceKind::Neumann {
            return Ok(vec![]);
        }
        let ns = face.sides.len();
        let nd: Vec<usize> = face.sides.iter().map(|s| self.ndof(s.element)).collect();
        let alpha = |a: usize, s: usize| -> f64 {
            match face.kind {
                FaceKind::Interior => {
                    if a == s {
                        -0.5
                    } else {
                        0.5
                    }
                }
                _ => -1.0,
            }
        };
        let mut dg: Vec<Vec<DMatrix<f64>>> = (0..ns)
            .map(|r| (0..ns).map(|c| DMatrix::zeros(nd[r], nd[c])).collect())
            .collect();
        let mut ip: Vec<Vec<Vec<DMatrix<f64>>>> = (0..ns)
            .map(|_| {
                (0..ns)
                    .map(|r| (0..ns).map(|c| DMatrix::zeros(nd[r], nd[c])).collect())
                    .collect()
            })
            .collect();
        for (ds, evs) in self.face_points(f)? {
            for a in 0..ns {
                let ea = &evs[a];
                let nu = match self.opts.nu {
                    NuPolicy::Jacobian => ea.nu,
                    NuPolicy::InscribedDiameter => self.mulder_nu[f],
                };
                for s in 0..ns {
                    let vs_t_ta = evs[s].v.transpose() * &ea.t;
                    let c = alpha(a, s) * ds;
                    dg[s][a] += c * &vs_t_ta;
                    dg[a][s] += c * vs_t_ta.transpose();
                    for t in 0..ns {
                        let c = nu * alpha(a, s) * alpha(a, t) * ds;
                        ip[a][s][t] += c * evs[s].v.transpose() * &ea.chat * &evs[t].v;
                    }
                }
            }
        }
        let offset = |r: usize, c: usize| -> Vec<i32> {
            if r == c {
                vec![0; self.mesh.dim]
            } else {
                let o = &face.sides[r].offset;
                if o.is_empty() {
                    vec![0; self.mesh.dim]
                } else {
                    o.clone()
                }
            }
        };
        let mut out = Vec::new();
        for r in 0..ns {
            for c in 0..ns {
                out.push(Block {
                    row: face.sides[r].element,
                    col: face.sides[c].element,
                    offset: offset(r, c),
                    part: Part::Dg,
                    source: BlockSource::Face {
                        face: f,
                        side: r.min(c),
                    },
                    matrix: dg[r][c].clone(),
                });
            }
        }
        for (a, ipa) in ip.into_iter().enumerate() {
            for (r, row) in ipa.into_iter().enumerate() {
                for (c, mtx) in row.into_iter().enumerate() {
                    out.push(Block {
                        row: face.sides[r].element,
                        col: face.sides[c].element,
                        offset: offset(r, c),
                        part: Part::Ip,
                        source: BlockSource::Face { face: f, side: a },
                        matrix: mtx,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Inscribed-sphere diameter `2·d·|e| / Σ|faces|` of a simplex.
pub fn inscribed_diameter(mesh: &Mesh, e: usize) -> Result<f64> {
    let el = &mesh.elements[e];
    if !el.shape.is_simplex() {
        return Err(Error::invalid(format!("element {e} is not a simplex")));
    }
    let map = mesh.element_mapping(e);
    let vol = map.volume(2);
    let d = mesh.dim;
    let area: f64 = (0..el.shape.n_faces())
        .map(|lf| {
            let fp = map.face_point(lf, &el.shape.face_shape(lf).map(|s| s.centroid()).unwrap_or_default());
            let ref_measure = el.shape.face_shape(lf).map(|s| s.reference_volume()).unwrap_or(1.0);
            fp.jf * ref_measure
        })
        .sum();
    Ok(2.0 * d as f64 * vol / area)
}

/// η-independent discretization of a mesh: element matrices and face
/// blocks with unit penalty.
pub struct Discretization {
    pub dofs: DofMap,
    pub dim: usize,
    pub elements: Vec<ElementBlocks>,
    pub face_blocks: Vec<Vec<Block>>,
}

impl Discretization {
    pub fn new(mesh: &Mesh, opts: AssemblyOptions) -> Result<Self> {
        let ctx = MeshContext::new(mesh, opts)?;
        let elements = (0..mesh.elements.len())
            .into_par_iter()
            .map(|e| ctx.element_blocks(e))
            .collect::<Result<Vec<_>>>()?;
        let face_blocks = (0..mesh.faces.len())
            .into_par_iter()
            .map(|f| ctx.face_blocks(f))
            .collect::<Result<Vec<_>>>()?;
        let dofs = DofMap::new((0..mesh.elements.len()).map(|e| ctx.ndof(e)).collect());
        Ok(Self {
            dofs,
            dim: mesh.dim,
            elements,
            face_blocks,
        })
    }

    /// Element whose `η_e` scales an IP block.
    fn owner(&self, mesh_face_sides: &HashMap<(usize, usize), usize>, b: &Block) -> usize {
        match b.source {
            BlockSource::Face { face, side } => mesh_face_sides[&(face, side)],
            BlockSource::Element(e) => e,
        }
    }

    /// Global system with penalties `eta` (one per element).
    pub fn system(&self, mesh: &Mesh, eta: &[f64]) -> Result<GlobalSystem> {
        check_eta(eta, self.elements.len())?;
        let sides = side_owners(mesh);
        let mut blocks = Vec::new();
        for (e, eb) in self.elements.iter().enumerate() {
            blocks.push(Block {
                row: e,
                col: e,
                offset: vec![0; self.dim],
                part: Part::Volume,
                source: BlockSource::Element(e),
                matrix: eb.stiffness.clone(),
            });
        }
        for fb in &self.face_blocks {
            for b in fb {
                let mut b = b.clone();
                if b.part == Part::Ip {
                    b.matrix *= eta[self.owner(&sides, &b)];
                }
                blocks.push(b);
            }
        }
        let mass = BlockDiagonal::new(
            self.dofs.clone(),
            self.elements.iter().map(|e| e.mass.clone()).collect(),
        )?;
        Ok(GlobalSystem {
            dofs: self.dofs.clone(),
            mass,
            blocks,
            eta: eta.to_vec(),
        })
    }

    /// Weighted system of a submesh: `Σ ω_e K_e + Σ ω_f (DG_f + η IP_f)`
    /// restricted to the elements with `ω_e > 0`.
    pub fn weighted_system(&self, mesh: &Mesh, omega: &WeightedSubmesh, eta: &[f64]) -> Result<WeightedSystem> {
        check_eta(eta, self.elements.len())?;
        omega.check_admissible(mesh)?;
        let sides = side_owners(mesh);
        let active: Vec<usize> = omega
            .elements
            .iter()
            .filter(|(_, w)| **w > 0.0)
            .map(|(e, _)| *e)
            .collect();
        let local: HashMap<usize, usize> = active.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let dofs = DofMap::new(active.iter().map(|&e| self.dofs.sizes[e]).collect());
        let mut stiff = BlockMatrix::new(dofs.clone());
        let mut mass = Vec::with_capacity(active.len());
        for &e in &active {
            let w = omega.elements[&e];
            mass.push(&self.elements[e].mass * w);
            stiff.add(local[&e], local[&e], &self.elements[e].stiffness, w);
        }
        for (&f, &w) in &omega.faces {
            if w == 0.0 {
                continue;
            }
            for b in &self.face_blocks[f] {
                let scale = if b.part == Part::Ip {
                    w * eta[self.owner(&sides, b)]
                } else {
                    w
                };
                stiff.add(local[&b.row], local[&b.col], &b.matrix, scale);
            }
        }
        let mass = BlockDiagonal::new(dofs.clone(), mass)?;
        Ok(WeightedSystem {
            elements: active,
            dofs,
            mass,
            stiffness: stiff,
        })
    }
}

fn check_eta(eta: &[f64], n: usize) -> Result<()> {
    if eta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} penalties"),
            got: format!("{}", eta.len()),
        });
    }
    if eta.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("penalties must be finite and nonnegative"));
    }
    Ok(())
}

fn side_owners(mesh: &Mesh) -> HashMap<(usize, usize), usize> {
    let mut out = HashMap::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        for (s, side) in face.sides.iter().enumerate() {
            out.insert((f, s), side.element);
        }
    }
    out
}

/// Assembled global system `M ü + A u = f`.
#[derive(Debug, Clone)]
pub struct GlobalSystem {
    pub dofs: DofMap,
    pub mass: BlockDiagonal,
    /// All stiffness blocks with provenance; `A` is their sum.
    pub blocks: Vec<Block>,
    pub eta: Vec<f64>,
}

impl GlobalSystem {
    pub fn size(&self) -> usize {
        self.dofs.total
    }

    /// Stiffness matrix `A` (offsets ignored).
    pub fn stiffness(&self) -> BlockMatrix {
        self.stiffness_parts(&[Part::Volume, Part::Dg, Part::Ip])
    }

    pub fn stiffness_parts(&self, parts: &[Part]) -> BlockMatrix {
        let mut a = BlockMatrix::new(self.dofs.clone());
        for b in self.blocks.iter().filter(|b| parts.contains(&b.part)) {
            a.add(b.row, b.col, &b.matrix, 1.0);
        }
        a
    }

    pub fn stiffness_dense(&self) -> DMatrix<f64> {
        let mut a = self.stiffness().to_dense();
        symmetrize(&mut a);
        a
    }

    pub fn mass_dense(&self) -> DMatrix<f64> {
        self.mass.to_dense()
    }

    /// Writes `A` (or `M`) as a symmetric coordinate list, upper triangle,
    /// one `row col value` triple per line.
    pub fn export_coordinate(&self, mass: bool, out: &mut impl Write) -> Result<()> {
        let m = if mass {
            self.mass_dense()
        } else {
            self.stiffness_dense()
        };
        let n = m.nrows();
        writeln!(out, "% symmetric coordinate, upper triangle, 0-based")?;
        writeln!(out, "{n} {n}")?;
        for i in 0..n {
            for j in i..n {
                let v = m[(i, j)];
                if v != 0.0 {
                    writeln!(out, "{i} {j} {v:.17e}")?;
                }
            }
        }
        Ok(())
    }

    /// JSON header describing the exported matrices.
    pub fn export_header(&self) -> serde_json::Value {
        serde_json::json!({
            "size": self.dofs.total,
            "elements": self.dofs.sizes.len(),
            "dof_offsets": self.dofs.offsets,
            "dof_sizes": self.dofs.sizes,
            "eta": self.eta,
            "ordering": "element-major, component innermost",
        })
    }
}

/// Mass and stiffness of a weighted submesh, restricted to its active
/// elements.
#[derive(Debug, Clone)]
pub struct WeightedSystem {
    /// Global indices of the active elements, in local order.
    pub elements: Vec<usize>,
    pub dofs: DofMap,
    pub mass: BlockDiagonal,
    pub stiffness: BlockMatrix,
}

impl WeightedSystem {
    /// Embeds `M'_ω`, `A'_ω` into the full dof space.
    pub fn expand(&self, global: &DofMap) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = global.total;
        let mut m = DMatrix::zeros(n, n);
        let mut a = DMatrix::zeros(n, n);
        for (i, &e) in self.elements.iter().enumerate() {
            let o = global.offsets[e];
            let b = &self.mass.blocks[i];
            m.view_mut((o, o), (b.nrows(), b.ncols())).copy_from(b);
        }
        for (&(r, c), b) in &self.stiffness.blocks {
            let (gr, gc) = (global.offsets[self.elements[r]], global.offsets[self.elements[c]]);
            let mut v = a.view_mut((gr, gc), (b.nrows(), b.ncols()));
            v += b;
        }
        (m, a)
    }
}

/// Element matrices of element `e`.
pub fn element_blocks(mesh: &Mesh, e: usize, opts: AssemblyOptions) -> Result<ElementBlocks> {
    MeshContext::new(mesh, opts)?.element_blocks(e)
}

/// Face blocks of face `f`, with IP blocks scaled by `eta` of the owning
/// side's element.
pub fn face_blocks(mesh: &Mesh, f: usize, eta: &[f64], opts: AssemblyOptions) -> Result<Vec<Block>> {
    check_eta(eta, mesh.elements.len())?;
    let ctx = MeshContext::new(mesh, opts)?;
    let mut blocks = ctx.face_blocks(f)?;
    for b in blocks.iter_mut() {
        if let (Part::Ip, BlockSource::Face { face, side }) = (b.part, b.source) {
            b.matrix *= eta[mesh.faces[face].sides[side].element];
        }
    }
    Ok(blocks)
}

/// Assembles the global system for penalties `eta`.
pub fn assemble(mesh: &Mesh, eta: &[f64], opts: AssemblyOptions) -> Result<GlobalSystem> {
    Discretization::new(mesh, opts)?.system(mesh, eta)
}

/// Assembles the IP matrix a second way, from the face-based
/// jump/average form `ε_f ∫ [[u]] : ⟨η ν C⟩ : [[w]]`, and returns the
/// largest entrywise deviation from the element-boundary form relative to
/// the largest entry.
pub fn face_form_crosscheck(mesh: &Mesh, eta: &[f64], opts: AssemblyOptions) -> Result<f64> {
    let system = assemble(mesh, eta, opts)?;
    let ip = system.stiffness_parts(&[Part::Ip]).to_dense();
    let ctx = MeshContext::new(mesh, opts)?;
    let n = system.size();
    let mut alt = DMatrix::zeros(n, n);
    let d = mesh.dim;
    for (f, face) in mesh.faces.iter().enumerate() {
        if face.kind == FaceKind::Neumann {
            continue;
        }
        let eps = if face.kind == FaceKind::Interior { 0.5 } else { 1.0 };
        let ns = face.sides.len();
        for (ds, evs) in ctx.face_points(f)? {
            // ⟨η ν C⟩ in flattened form
            let mut avg = DMatrix::zeros(evs[0].flat.nrows(), evs[0].flat.ncols());
            for (a, ev) in evs.iter().enumerate() {
                let nu = match opts.nu {
                    NuPolicy::Jacobian => ev.nu,
                    NuPolicy::InscribedDiameter => ctx.mulder_nu[f],
                };
                avg += (eta[face.sides[a].element] * nu / ns as f64) * &ev.flat;
            }
            // jump operators [[u]] = Σ_s u_s ⊗ n_s, flattened (i, k) -> i*m + k
            let jumps: Vec<DMatrix<f64>> = evs
                .iter()
                .map(|ev| {
                    let m = ev.v.nrows();
                    let mut j = DMatrix::zeros(d * m, ev.v.ncols());
                    for i in 0..d {
                        for k in 0..m {
                            for c in 0..ev.v.ncols() {
                                j[(i * m + k, c)] = ev.normal[i] * ev.v[(k, c)];
                            }
                        }
                    }
                    j
                })
                .collect();
            for r in 0..ns {
                for c in 0..ns {
                    let blk = (eps * ds) * jumps[r].transpose() * &avg * &jumps[c];
                    let (ro, co) = (
                        system.dofs.offsets[face.sides[r].element],
                        system.dofs.offsets[face.sides[c].element],
                    );
                    let mut v = alt.view_mut((ro, co), (blk.nrows(), blk.ncols()));
                    v += &blk;
                }
            }
        }
    }
    let scale = max_abs(&ip).max(max_abs(&alt));
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(max_abs(&(ip - alt)) / scale)
}
