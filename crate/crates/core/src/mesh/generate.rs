//! Periodic meshes of `N^d` identically subdivided unit cells.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Element, Face, FaceKind, FaceSide, Mesh, MESH_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::refelem::{ElementMapping, ReferenceShape};
use crate::tensors::{make_acoustic_with_density, make_elastic_iso, make_maxwell, CoefficientField, ScalarField};

/// Named mesh families. Parameters follow the bracket notation, e.g.
/// `hexahedral[0.6]` or `squarePL[10,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeshFamily {
    OneD,
    Square,
    /// Unit squares split along the diagonal from `(0,0)` to `(1,1)`.
    Triangular,
    Cubic,
    Tetrahedral,
    Rectangular(f64),
    Quadrilateral(f64),
    /// Four triangles around the node `(x,x)`.
    TriangularX(f64),
    Cuboid(f64),
    Hexahedral(f64),
    TetrahedralX(f64),
    SquarePl(f64, f64),
    TriPl(f64, f64),
    CubicPl(f64, f64),
    TetrahedralPl(f64, f64),
    TetraEm(f64, f64),
    CubicEm(f64, f64),
    TetraIso(f64, f64),
    CubicIso(f64, f64),
}

/// Boundary treatment of the outer faces of the box `[0,N]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySpec {
    #[default]
    Periodic,
    Dirichlet,
    Neumann,
}

impl fmt::Display for MeshFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use MeshFamily::*;
        match self {
            OneD => write!(f, "1D"),
            Square => write!(f, "square"),
            Triangular => write!(f, "triangular"),
            Cubic => write!(f, "cubic"),
            Tetrahedral => write!(f, "tetrahedral"),
            Rectangular(x) => write!(f, "rectangular[{x}]"),
            Quadrilateral(x) => write!(f, "quadrilateral[{x}]"),
            TriangularX(x) => write!(f, "triangular[{x}]"),
            Cuboid(x) => write!(f, "cuboid[{x}]"),
            Hexahedral(x) => write!(f, "hexahedral[{x}]"),
            TetrahedralX(x) => write!(f, "tetrahedral[{x}]"),
            SquarePl(a, b) => write!(f, "squarePL[{a},{b}]"),
            TriPl(a, b) => write!(f, "triPL[{a},{b}]"),
            CubicPl(a, b) => write!(f, "cubicPL[{a},{b}]"),
            TetrahedralPl(a, b) => write!(f, "tetrahedralPL[{a},{b}]"),
            TetraEm(a, b) => write!(f, "tetraEM[{a},{b}]"),
            CubicEm(a, b) => write!(f, "cubicEM[{a},{b}]"),
            TetraIso(a, b) => write!(f, "tetraISO[{a},{b}]"),
            CubicIso(a, b) => write!(f, "cubicISO[{a},{b}]"),
        }
    }
}

/// Parses a family from its name and parameters. Parameters may be given
/// inline (`"hexahedral[0.6]"`) or through `params`, not both.
pub fn parse_family(name: &str, params: &[f64]) -> Result<MeshFamily> {
    let (base, inline) = match name.find('[') {
        Some(i) => {
            let inner = name[i + 1..]
                .strip_suffix(']')
                .ok_or_else(|| Error::invalid(format!("malformed mesh name '{name}'")))?;
            let vals = inner
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad parameter '{s}' in '{name}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            (&name[..i], vals)
        }
        None => (name, vec![]),
    };
    if !inline.is_empty() && !params.is_empty() {
        return Err(Error::invalid("mesh parameters given twice"));
    }
    let p: Vec<f64> = if inline.is_empty() { params.to_vec() } else { inline };
    let need = |k: usize| -> Result<()> {
        if p.len() != k {
            return Err(Error::invalid(format!(
                "mesh '{base}' takes {k} parameter(s), got {}",
                p.len()
            )));
        }
        Ok(())
    };
    use MeshFamily::*;
    let fam = match base.to_ascii_lowercase().as_str() {
        "1d" => {
            need(0)?;
            OneD
        }
        "square" => {
            need(0)?;
            Square
        }
        "triangular" if p.is_empty() => Triangular,
        "triangular" => {
            need(1)?;
            TriangularX(p[0])
        }
        "cubic" => {
            need(0)?;
            Cubic
        }
        "tetrahedral" if p.is_empty() => Tetrahedral,
        "tetrahedral" => {
            need(1)?;
            TetrahedralX(p[0])
        }
        "rectangular" => {
            need(1)?;
            Rectangular(p[0])
        }
        "quadrilateral" => {
            need(1)?;
            Quadrilateral(p[0])
        }
        "cuboid" => {
            need(1)?;
            Cuboid(p[0])
        }
        "hexahedral" => {
            need(1)?;
            Hexahedral(p[0])
        }
        "squarepl" => {
            need(2)?;
            SquarePl(p[0], p[1])
        }
        "tripl" => {
            need(2)?;
            TriPl(p[0], p[1])
        }
        "cubicpl" => {
            need(2)?;
            CubicPl(p[0], p[1])
        }
        "tetrahedralpl" | "tetrapl" => {
            need(2)?;
            TetrahedralPl(p[0], p[1])
        }
        "tetraem" => {
            need(2)?;
            TetraEm(p[0], p[1])
        }
        "cubicem" => {
            need(2)?;
            CubicEm(p[0], p[1])
        }
        "tetraiso" => {
            need(2)?;
            TetraIso(p[0], p[1])
        }
        "cubiciso" => {
            need(2)?;
            CubicIso(p[0], p[1])
        }
        _ => return Err(Error::invalid(format!("unknown mesh family '{base}'"))),
    };
    fam.check_params()?;
    Ok(fam)
}

impl MeshFamily {
    pub fn dim(&self) -> usize {
        use MeshFamily::*;
        match self {
            OneD => 1,
            Square | Triangular | Rectangular(_) | Quadrilateral(_) | TriangularX(_) | SquarePl(..) | TriPl(..) => 2,
            _ => 3,
        }
    }

    /// Rejects parameters for which an element mapping degenerates or a
    /// material is unphysical.
    pub fn check_params(&self) -> Result<()> {
        use MeshFamily::*;
        let open = |x: f64, lo: f64, hi: f64, what: &str| -> Result<()> {
            if !(x > lo && x < hi) {
                return Err(Error::InvalidMesh(format!("{what} requires {lo} < x < {hi}, got {x}")));
            }
            Ok(())
        };
        let positive = |a: f64, b: f64| -> Result<()> {
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::invalid(format!("{self} requires positive parameters")));
            }
            Ok(())
        };
        match *self {
            Rectangular(x) => open(x, 0.0, 1.0, "rectangular[x]"),
            Cuboid(x) => open(x, 0.0, 1.0, "cuboid[x]"),
            TriangularX(x) => open(x, 0.0, 1.0, "triangular[x]"),
            TetrahedralX(x) => open(x, 0.0, 1.0, "tetrahedral[x]"),
            Quadrilateral(x) => open(x, 0.25, 0.75, "quadrilateral[x]"),
            Hexahedral(x) => open(x, 1.0 / 3.0, 2.0 / 3.0, "hexahedral[x]"),
            SquarePl(a, b) | TriPl(a, b) | CubicPl(a, b) | TetrahedralPl(a, b) | TetraEm(a, b) | CubicEm(a, b) => {
                positive(a, b)
            }
            TetraIso(l, m) | CubicIso(l, m) => {
                if !(l.is_finite() && m.is_finite() && m >= 0.0 && 3.0 * l + 2.0 * m >= 0.0 && l + m > 0.0) {
                    return Err(Error::invalid(format!(
                        "{self}: Lamé parameters do not give a PSD tensor"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Elements of one unit cell as (shape, local vertex coordinates).
    fn cell(&self) -> Vec<(ReferenceShape, Vec<Vec<f64>>)> {
        use MeshFamily::*;
        match *self {
            OneD => vec![(ReferenceShape::Interval, vec![vec![0.0], vec![1.0]])],
            Square => grid_cells(2, 1, &|ix| ix.iter().map(|&i| i as f64).collect()),
            Cubic | CubicIso(..) => grid_cells(3, 1, &|ix| ix.iter().map(|&i| i as f64).collect()),
            Triangular => vec![
                (
                    ReferenceShape::Triangle,
                    vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]],
                ),
                (
                    ReferenceShape::Triangle,
                    vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]],
                ),
            ],
            TriangularX(x) => fan_triangles(x),
            TriPl(..) => fan_triangles(0.5),
            Rectangular(x) => grid_cells(2, 2, &|ix| ix.iter().map(|&i| [0.0, x, 1.0][i]).collect()),
            Cuboid(x) => grid_cells(3, 2, &|ix| ix.iter().map(|&i| [0.0, x, 1.0][i]).collect()),
            Quadrilateral(x) => grid_cells(2, 2, &moved_centre(x)),
            Hexahedral(x) => grid_cells(3, 2, &moved_centre(x)),
            SquarePl(..) => grid_cells(2, 2, &moved_centre(0.5)),
            CubicPl(..) | CubicEm(..) => grid_cells(3, 2, &moved_centre(0.5)),
            Tetrahedral | TetrahedralPl(..) | TetraEm(..) | TetraIso(..) => pyramid_tets(0.5),
            TetrahedralX(x) => pyramid_tets(x),
        }
    }

    /// Material of an element given its cell-local vertex coordinates.
    fn material(&self, coords: &[Vec<f64>]) -> Result<CoefficientField> {
        use MeshFamily::*;
        let d = self.dim();
        let unit = || make_acoustic_with_density(d, 1.0.into(), 1.0.into());
        let centroid = |k: usize| coords.iter().map(|x| x[k]).sum::<f64>() / coords.len() as f64;
        // hat function: 1 at the cell centre (or mid-plane), 0 on the cell boundary
        let hat_axis = |axis: usize| -> Vec<f64> { coords.iter().map(|x| 1.0 - (2.0 * x[axis] - 1.0).abs()).collect() };
        let hat_centre = || -> Vec<f64> {
            coords
                .iter()
                .map(|x| {
                    if x.iter().all(|v| (v - 0.5).abs() < 1e-12) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let pl = |h: Vec<f64>, rho0: f64, c0: f64| {
            let field = |v0: f64| ScalarField::Vertex(h.iter().map(|t| 1.0 + (v0 - 1.0) * t).collect());
            make_acoustic_with_density(d, field(c0), field(rho0))
        };
        match *self {
            SquarePl(r, c) => pl(hat_axis(1), r, c),
            CubicPl(r, c) => pl(hat_axis(2), r, c),
            TriPl(r, c) | TetrahedralPl(r, c) => pl(hat_centre(), r, c),
            TetraEm(m1, m2) => {
                let mu = if centroid(2) < centroid(0) { m1 } else { m2 };
                make_maxwell(3, mu.into(), 1.0.into())
            }
            CubicEm(m1, m2) => {
                let mu = if centroid(2) < 0.5 { m1 } else { m2 };
                make_maxwell(3, mu.into(), 1.0.into())
            }
            TetraIso(l, m) | CubicIso(l, m) => make_elastic_iso(3, l.into(), m.into(), 1.0.into()),
            _ => unit(),
        }
    }
}

/// Node position in a `(k+1)^d` grid with the central node at `(x,..,x)`.
fn moved_centre(x: f64) -> impl Fn(&[usize]) -> Vec<f64> {
    move |ix: &[usize]| {
        if ix.iter().all(|&i| i == 1) {
            vec![x; ix.len()]
        } else {
            ix.iter().map(|&i| 0.5 * i as f64).collect()
        }
    }
}

/// `k^d` tensor cells from a node-position function on a `(k+1)^d` grid,
/// each with lexicographic vertex order.
fn grid_cells(d: usize, k: usize, pos: &dyn Fn(&[usize]) -> Vec<f64>) -> Vec<(ReferenceShape, Vec<Vec<f64>>)> {
    let shape = if d == 2 {
        ReferenceShape::Quadrilateral
    } else {
        ReferenceShape::Hexahedron
    };
    let mut out = Vec::new();
    for c in 0..k.pow(d as u32) {
        let base: Vec<usize> = (0..d).map(|a| (c / k.pow(a as u32)) % k).collect();
        let verts = (0..1usize << d)
            .map(|v| {
                let ix: Vec<usize> = (0..d).map(|a| base[a] + ((v >> a) & 1)).collect();
                pos(&ix)
            })
            .collect();
        out.push((shape, verts));
    }
    out
}

fn fan_triangles(x: f64) -> Vec<(ReferenceShape, Vec<Vec<f64>>)> {
    let corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    (0..4)
        .map(|i| {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            (ReferenceShape::Triangle, vec![a.to_vec(), b.to_vec(), vec![x, x]])
        })
        .collect()
}

/// Six pyramids from the cube faces to the node `(x,x,x)`, each split into
/// four tetrahedra through the centre of its base.
fn pyramid_tets(x: f64) -> Vec<(ReferenceShape, Vec<Vec<f64>>)> {
    let mut out = Vec::new();
    let apex = vec![x; 3];
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0.0, 1.0] {
            let point = |u: f64, v: f64| {
                let mut p = vec![0.0; 3];
                p[axis] = side;
                p[b] = u;
                p[c] = v;
                p
            };
            let ring = [point(0.0, 0.0), point(1.0, 0.0), point(1.0, 1.0), point(0.0, 1.0)];
            let centre = point(0.5, 0.5);
            for i in 0..4 {
                out.push((
                    ReferenceShape::Tetrahedron,
                    vec![ring[i].clone(), ring[(i + 1) % 4].clone(), centre.clone(), apex.clone()],
                ));
            }
        }
    }
    out
}

fn quantize(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

/// Builds the mesh of `[0,N]^d` from `N^d` unit cells with polynomial degree
/// `p` on every element.
pub fn generate(family: MeshFamily, p: usize, n: usize, boundary: BoundarySpec) -> Result<Mesh> {
    family.check_params()?;
    if n == 0 {
        return Err(Error::invalid("cells per axis must be at least 1"));
    }
    let d = family.dim();
    let periodic = boundary == BoundarySpec::Periodic;
    let n_q = quantize(n as f64);
    let mut template = family.cell();
    for (shape, coords) in template.iter_mut() {
        if shape.is_simplex() && *shape != ReferenceShape::Interval {
            let map = ElementMapping {
                shape: *shape,
                nodes: coords.clone(),
            };
            if map.jacobian(&shape.centroid()).determinant() < 0.0 {
                coords.swap(1, 2);
            }
        }
    }
    let materials = template
        .iter()
        .map(|(_, coords)| family.material(coords))
        .collect::<Result<Vec<_>>>()?;

    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut classes: Vec<usize> = Vec::new();
    let mut by_coord: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut by_class: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut elements = Vec::new();
    for cell in 0..n.pow(d as u32) {
        let shift: Vec<f64> = (0..d).map(|a| ((cell / n.pow(a as u32)) % n) as f64).collect();
        for ((shape, coords), mat) in template.iter().zip(&materials) {
            let mut ids = Vec::with_capacity(coords.len());
            for c in coords {
                let x: Vec<f64> = c.iter().zip(&shift).map(|(a, b)| a + b).collect();
                let key: Vec<i64> = x.iter().map(|v| quantize(*v)).collect();
                let id = match by_coord.get(&key) {
                    Some(&id) => id,
                    None => {
                        let wrapped: Vec<i64> = key
                            .iter()
                            .map(|&k| if periodic { k.rem_euclid(n_q) } else { k })
                            .collect();
                        let next = by_class.len();
                        let cls = *by_class.entry(wrapped).or_insert(next);
                        vertices.push(x);
                        classes.push(cls);
                        by_coord.insert(key, vertices.len() - 1);
                        vertices.len() - 1
                    }
                };
                ids.push(id);
            }
            elements.push(Element {
                shape: *shape,
                vertices: ids,
                degree: p,
                material: mat.clone(),
            });
        }
    }

    // match element faces through their (wrapped) centroids
    let mut groups: Vec<Vec<(usize, usize, Vec<f64>)>> = Vec::new();
    let mut group_of: HashMap<Vec<i64>, usize> = HashMap::new();
    for (e, el) in elements.iter().enumerate() {
        for lf in 0..el.shape.n_faces() {
            let fv = el.shape.face_vertices(lf);
            let mut c = vec![0.0; d];
            for &lv in fv {
                for (ci, xi) in c.iter_mut().zip(&vertices[el.vertices[lv]]) {
                    *ci += xi / fv.len() as f64;
                }
            }
            let key: Vec<i64> = c
                .iter()
                .map(|v| {
                    let k = quantize(*v);
                    if periodic {
                        k.rem_euclid(n_q)
                    } else {
                        k
                    }
                })
                .collect();
            let g = *group_of.entry(key).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push((e, lf, c));
        }
    }
    let mut faces = Vec::with_capacity(groups.len());
    for g in groups {
        match g.len() {
            2 => {
                let off = |a: &[f64], b: &[f64]| -> Vec<i32> {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| {
                            if periodic {
                                ((x - y) / n as f64).round() as i32
                            } else {
                                0
                            }
                        })
                        .collect()
                };
                let (ea, la, ca) = &g[0];
                let (eb, lb, cb) = &g[1];
                faces.push(Face {
                    kind: FaceKind::Interior,
                    sides: vec![
                        FaceSide {
                            element: *ea,
                            local_face: *la,
                            offset: off(ca, cb),
                        },
                        FaceSide {
                            element: *eb,
                            local_face: *lb,
                            offset: off(cb, ca),
                        },
                    ],
                });
            }
            1 => {
                let kind = match boundary {
                    BoundarySpec::Periodic => {
                        return Err(Error::InvalidMesh("unmatched face in a periodic mesh".into()))
                    }
                    BoundarySpec::Dirichlet => FaceKind::Dirichlet,
                    BoundarySpec::Neumann => FaceKind::Neumann,
                };
                let (e, lf, _) = &g[0];
                faces.push(Face {
                    kind,
                    sides: vec![FaceSide {
                        element: *e,
                        local_face: *lf,
                        offset: vec![0; d],
                    }],
                });
            }
            k => return Err(Error::InvalidMesh(format!("{k} element faces share one location"))),
        }
    }
    let mesh = Mesh {
        version: MESH_FORMAT_VERSION,
        dim: d,
        vertices,
        periodic_classes: classes,
        period: vec![if periodic { Some(n as f64) } else { None }; d],
        cells: Some(n),
        elements,
        faces,
    };
    mesh.validate()?;
    Ok(mesh)
}
