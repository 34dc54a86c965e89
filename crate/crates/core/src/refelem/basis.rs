use nalgebra::{DMatrix, DVector};

use super::ReferenceShape;

/// Polynomial basis on a reference shape, orthonormal in `L²` of the
/// reference domain.
///
/// Tensor shapes use products of shifted Legendre polynomials
/// `√(2n+1) P_n(2x-1)` with per-coordinate degree at most `p`. Simplices use
/// the total-degree monomials orthonormalized in degree order, so the first
/// `k` functions span the polynomials of degree below the corresponding
/// threshold.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub shape: ReferenceShape,
    pub degree: usize,
    exponents: Vec<Vec<usize>>,
    /// Monomial-to-basis coefficients (simplices only).
    coeffs: Option<DMatrix<f64>>,
}

pub fn basis(shape: ReferenceShape, degree: usize) -> BasisSet {
    let d = shape.dim();
    if shape.is_tensor() {
        let n = (degree + 1).pow(d as u32);
        let exponents = (0..n)
            .map(|mut idx| {
                (0..d)
                    .map(|_| {
                        let e = idx % (degree + 1);
                        idx /= degree + 1;
                        e
                    })
                    .collect()
            })
            .collect();
        BasisSet {
            shape,
            degree,
            exponents,
            coeffs: None,
        }
    } else {
        let mut exponents: Vec<Vec<usize>> = Vec::new();
        for total in 0..=degree {
            push_compositions(d, total, &mut Vec::new(), &mut exponents);
        }
        let n = exponents.len();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            let e: Vec<usize> = exponents[i].iter().zip(&exponents[j]).map(|(a, b)| a + b).collect();
            simplex_monomial_integral(&e)
        });
        let l = gram.cholesky().expect("monomial Gram matrix is SPD").l();
        let coeffs = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("triangular factor is nonsingular");
        BasisSet {
            shape,
            degree,
            exponents,
            coeffs: Some(coeffs),
        }
    }
}

/// All exponent vectors of length `d` summing to `total`, in reverse
/// lexicographic order of the leading entry.
fn push_compositions(d: usize, total: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() + 1 == d {
        let mut e = prefix.clone();
        e.push(total);
        out.push(e);
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first);
        push_compositions(d, total - first, prefix, out);
        prefix.pop();
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `∫ Π x_k^{e_k}` over the unit simplex.
fn simplex_monomial_integral(e: &[usize]) -> f64 {
    let s: usize = e.iter().sum();
    e.iter().map(|&k| factorial(k)).product::<f64>() / factorial(s + e.len())
}

/// Orthonormal shifted Legendre value and derivative on `[0, 1]`.
fn legendre_unit(n: usize, x: f64) -> (f64, f64) {
    let t = 2.0 * x - 1.0;
    let (mut p0, mut p1) = (1.0, t);
    let (mut d0, mut d1) = (0.0, 1.0);
    let (p, dp) = match n {
        0 => (1.0, 0.0),
        1 => (t, 1.0),
        _ => {
            for k in 1..n {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * t * p1 - kf * p0) / (kf + 1.0);
                let d2 = ((2.0 * kf + 1.0) * (p1 + t * d1) - kf * d0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
                d0 = d1;
                d1 = d2;
            }
            (p1, d1)
        }
    };
    let s = (2.0 * n as f64 + 1.0).sqrt();
    (s * p, 2.0 * s * dp)
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Values and reference gradients (one row per basis function).
    pub fn eval(&self, xi: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.shape.dim();
        let n = self.len();
        let mut vals = DVector::zeros(n);
        let mut grads = DMatrix::zeros(n, d);
        match &self.coeffs {
            None => {
                let table: Vec<Vec<(f64, f64)>> = (0..d)
                    .map(|k| (0..=self.degree).map(|m| legendre_unit(m, xi[k])).collect())
                    .collect();
                for (i, e) in self.exponents.iter().enumerate() {
                    vals[i] = (0..d).map(|k| table[k][e[k]].0).product();
                    for g in 0..d {
                        grads[(i, g)] = (0..d)
                            .map(|k| if k == g { table[k][e[k]].1 } else { table[k][e[k]].0 })
                            .product();
                    }
                }
            }
            Some(r) => {
                let mut mv = DVector::zeros(n);
                let mut mg = DMatrix::zeros(n, d);
                for (i, e) in self.exponents.iter().enumerate() {
                    mv[i] = (0..d).map(|k| xi[k].powi(e[k] as i32)).product();
                    for g in 0..d {
                        if e[g] == 0 {
                            continue;
                        }
                        mg[(i, g)] = (0..d)
                            .map(|k| {
                                if k == g {
                                    e[k] as f64 * xi[k].powi(e[k] as i32 - 1)
                                } else {
                                    xi[k].powi(e[k] as i32)
                                }
                            })
                            .product();
                    }
                }
                vals = r * mv;
                grads = r * mg;
            }
        }
        (vals, grads)
    }

    pub fn values(&self, xi: &[f64]) -> DVector<f64> {
        self.eval(xi).0
    }
}
