use nalgebra::DMatrix;

use super::ReferenceShape;
use crate::linalg::sym_eigen_desc;

/// Quadrature rule on a reference shape.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub shape: Option<ReferenceShape>,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly (total degree on simplices,
    /// per-coordinate degree on tensor shapes).
    pub degree: usize,
}

impl QuadratureRule {
    /// The zero-dimensional rule used on the point faces of an interval.
    pub fn point() -> Self {
        Self {
            shape: None,
            points: vec![vec![]],
            weights: vec![1.0],
            degree: usize::MAX,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

/// Gauss-Jacobi nodes and weights on `[-1, 1]` for the weight
/// `(1-t)^α (1+t)^β`, by the Golub-Welsch eigenvalue method.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Jacobi rule needs at least one point");
    let ab = alpha + beta;
    let diag = |k: usize| {
        let s = 2.0 * k as f64 + ab;
        if s == 0.0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / (s * (s + 2.0))
        }
    };
    let off2 = |k: usize| {
        let kf = k as f64;
        let s = 2.0 * kf + ab;
        if k == 1 {
            4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))
        } else {
            4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab) / (s * s * (s + 1.0) * (s - 1.0))
        }
    };
    let mut jm = DMatrix::zeros(n, n);
    for k in 0..n {
        jm[(k, k)] = diag(k);
        if k + 1 < n {
            let b = off2(k + 1).sqrt();
            jm[(k, k + 1)] = b;
            jm[(k + 1, k)] = b;
        }
    }
    let mu0 = 2f64.powf(ab + 1.0) * gamma(alpha + 1.0) * gamma(beta + 1.0) / gamma(ab + 2.0);
    let (vals, vecs) = sym_eigen_desc(&jm);
    let mut pairs: Vec<(f64, f64)> = (0..n).map(|i| (vals[i], mu0 * vecs[(0, i)] * vecs[(0, i)])).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gamma function for the small non-negative integer and half-integer
/// arguments used here.
fn gamma(x: f64) -> f64 {
    if (x - x.round()).abs() < 1e-14 {
        (1..(x.round() as u64)).map(|k| k as f64).product()
    } else {
        // Lanczos approximation for completeness
        let g = 7.0;
        let c = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = c[0];
        let t = x + g + 0.5;
        for (i, ci) in c.iter().enumerate().skip(1) {
            a += ci / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

/// Gauss-Legendre rule with `n` points on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_jacobi(n, 0.0, 0.0);
    (
        t.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        w.iter().map(|x| 0.5 * x).collect(),
    )
}

/// Gauss-Jacobi rule on `[0, 1]` for the weight `(1-v)^α`.
fn gauss_jacobi_unit(n: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_jacobi(n, alpha, 0.0);
    let scale = 2f64.powf(-alpha - 1.0);
    (
        t.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        w.iter().map(|x| x * scale).collect(),
    )
}

/// Rule on `shape` exact for polynomials of degree `q`: Gauss-Legendre
/// tensor products on the interval, square and cube; collapsed-coordinate
/// Gauss-Jacobi products on the triangle and tetrahedron.
pub fn quadrature(shape: ReferenceShape, q: usize) -> QuadratureRule {
    let n = q / 2 + 1;
    let (points, weights) = match shape {
        ReferenceShape::Interval | ReferenceShape::Quadrilateral | ReferenceShape::Hexahedron => {
            let (x, w) = gauss_legendre_unit(n);
            let d = shape.dim();
            let total = n.pow(d as u32);
            let mut pts = Vec::with_capacity(total);
            let mut wts = Vec::with_capacity(total);
            for idx in 0..total {
                let mut p = Vec::with_capacity(d);
                let mut wt = 1.0;
                let mut r = idx;
                for _ in 0..d {
                    p.push(x[r % n]);
                    wt *= w[r % n];
                    r /= n;
                }
                pts.push(p);
                wts.push(wt);
            }
            (pts, wts)
        }
        ReferenceShape::Triangle => {
            let (u, wu) = gauss_legendre_unit(n);
            let (v, wv) = gauss_jacobi_unit(n, 1.0);
            let mut pts = Vec::new();
            let mut wts = Vec::new();
            for (vj, wvj) in v.iter().zip(&wv) {
                for (ui, wui) in u.iter().zip(&wu) {
                    pts.push(vec![ui * (1.0 - vj), *vj]);
                    wts.push(wui * wvj);
                }
            }
            (pts, wts)
        }
        ReferenceShape::Tetrahedron => {
            let (u, wu) = gauss_legendre_unit(n);
            let (v, wv) = gauss_jacobi_unit(n, 1.0);
            let (w, ww) = gauss_jacobi_unit(n, 2.0);
            let mut pts = Vec::new();
            let mut wts = Vec::new();
            for (wk, wwk) in w.iter().zip(&ww) {
                for (vj, wvj) in v.iter().zip(&wv) {
                    for (ui, wui) in u.iter().zip(&wu) {
                        pts.push(vec![ui * (1.0 - vj) * (1.0 - wk), vj * (1.0 - wk), *wk]);
                        wts.push(wui * wvj * wwk);
                    }
                }
            }
            (pts, wts)
        }
    };
    QuadratureRule {
        shape: Some(shape),
        points,
        weights,
        degree: 2 * n - 1,
    }
}
