//! Coefficient tensors of the second-order hyperbolic model and the
//! pointwise spectral kernels built on them.
//!
//! A [`Tensor4`] stores `C[i_D, i_M, j_M, j_D]` with spatial indices
//! `i_D, j_D < d` and variable indices `i_M, j_M < m`. The quadratic form
//! is `σᵗ:C:τ = Σ C[i,k,l,j] σ[i,k] τ[j,l]` for `d×m` matrices `σ, τ`
//! (gradients `∇u[i,k] = ∂_i u_k`). Flattening rows `(i,k) -> i*m+k` and
//! columns `(j,l) -> j*m+l` turns `C` into a `(d·m)×(d·m)` matrix that is
//! symmetric exactly when `C = Cᵗ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    d: usize,
    m: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(d: usize, m: usize) -> Self {
        Self {
            d,
            m,
            data: vec![0.0; d * m * m * d],
        }
    }

    /// Builds `C[i_D, i_M, j_M, j_D] = f(i_D, i_M, j_M, j_D)`.
    pub fn from_fn(d: usize, m: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(d, m);
        for i in 0..d {
            for k in 0..m {
                for l in 0..m {
                    for j in 0..d {
                        let idx = t.index(i, k, l, j);
                        t.data[idx] = f(i, k, l, j);
                    }
                }
            }
        }
        t
    }

    /// Inverse of [`Tensor4::flatten`].
    pub fn from_flat(d: usize, m: usize, flat: &DMatrix<f64>) -> Result<Self> {
        let n = d * m;
        if flat.nrows() != n || flat.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n}x{n}"),
                got: format!("{}x{}", flat.nrows(), flat.ncols()),
            });
        }
        Ok(Self::from_fn(d, m, |i, k, l, j| flat[(i * m + k, j * m + l)]))
    }

    #[inline]
    fn index(&self, i: usize, k: usize, l: usize, j: usize) -> usize {
        ((i * self.m + k) * self.m + l) * self.d + j
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn vars(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize, l: usize, j: usize) -> f64 {
        self.data[self.index(i, k, l, j)]
    }

    pub fn flatten(&self) -> DMatrix<f64> {
        let (d, m) = (self.d, self.m);
        DMatrix::from_fn(d * m, d * m, |r, c| self.get(r / m, r % m, c % m, c / m))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            d: self.d,
            m: self.m,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Largest violation of the major symmetry `C = Cᵗ`.
    pub fn major_asymmetry(&self) -> f64 {
        linalg::asymmetry(&self.flatten())
    }

    /// Rejects tensors whose flattened form has an eigenvalue below
    /// `-tol * ‖C‖`.
    pub fn check_psd(&self, tol: f64) -> Result<()> {
        let ev = linalg::sym_eigenvalues(&self.flatten());
        let scale = self.norm();
        let min = ev.first().copied().unwrap_or(0.0);
        if min < -tol * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { min_eig: min, scale });
        }
        Ok(())
    }

    /// `C1:C2`, the composition of the two tensors as operators on `d×m`
    /// matrices.
    pub fn double_dot(&self, other: &Tensor4) -> Result<Tensor4> {
        self.same_shape(other)?;
        Tensor4::from_flat(self.d, self.m, &(self.flatten() * other.flatten()))
    }

    fn same_shape(&self, other: &Tensor4) -> Result<()> {
        if self.d != other.d || self.m != other.m {
            return Err(Error::DimensionMismatch {
                expected: format!("d={}, m={}", self.d, self.m),
                got: format!("d={}, m={}", other.d, other.m),
            });
        }
        Ok(())
    }

    fn check_matrix(&self, s: &DMatrix<f64>) -> Result<()> {
        if s.nrows() != self.d || s.ncols() != self.m {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.d, self.m),
                got: format!("{}x{}", s.nrows(), s.ncols()),
            });
        }
        Ok(())
    }

    fn check_normal(&self, n: &[f64]) -> Result<()> {
        if n.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: format!("normal of length {}", self.d),
                got: n.len().to_string(),
            });
        }
        Ok(())
    }

    /// `ĉ_n = n̂·C·n̂`, an `m×m` symmetric matrix.
    pub fn normal_normal(&self, n: &[f64]) -> Result<Matrix2Sym> {
        self.check_normal(n)?;
        let m = self.m;
        let mut out = DMatrix::zeros(m, m);
        for k in 0..m {
            for l in 0..m {
                let mut s = 0.0;
                for (i, ni) in n.iter().enumerate() {
                    for (j, nj) in n.iter().enumerate() {
                        s += ni * self.get(i, k, l, j) * nj;
                    }
                }
                out[(k, l)] = s;
            }
        }
        symmetrize(&mut out);
        Ok(Matrix2Sym(out))
    }

    /// Normal flux `n̂·C:σ`, a vector of length `m`.
    pub fn normal_flux(&self, n: &[f64], sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_normal(n)?;
        self.check_matrix(sigma)?;
        let m = self.m;
        Ok(DVector::from_fn(m, |k, _| {
            let mut s = 0.0;
            for (i, ni) in n.iter().enumerate() {
                for l in 0..m {
                    for j in 0..self.d {
                        s += ni * self.get(i, k, l, j) * sigma[(j, l)];
                    }
                }
            }
            s
        }))
    }

    /// The `m×(d·m)` matrix mapping a flattened gradient to `n̂·C:∇u`.
    pub(crate) fn normal_flux_operator(&self, n: &[f64], flat: &DMatrix<f64>) -> DMatrix<f64> {
        let (d, m) = (self.d, self.m);
        let mut out = DMatrix::zeros(m, d * m);
        for k in 0..m {
            for (i, ni) in n.iter().enumerate().take(d) {
                if *ni == 0.0 {
                    continue;
                }
                let row = flat.row(i * m + k);
                for c in 0..d * m {
                    out[(k, c)] += ni * row[c];
                }
            }
        }
        out
    }
}

/// Double-dot quadratic form `σᵗ:C:τ`.
pub fn ddot_form(c: &Tensor4, sigma: &DMatrix<f64>, tau: &DMatrix<f64>) -> Result<f64> {
    c.check_matrix(sigma)?;
    c.check_matrix(tau)?;
    let (d, m) = (c.d, c.m);
    let mut s = 0.0;
    for i in 0..d {
        for k in 0..m {
            let sik = sigma[(i, k)];
            if sik == 0.0 {
                continue;
            }
            for l in 0..m {
                for j in 0..d {
                    s += c.get(i, k, l, j) * sik * tau[(j, l)];
                }
            }
        }
    }
    Ok(s)
}

/// Symmetric `m×m` matrix, used for `ĉ_n` and its pseudoinverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2Sym(pub DMatrix<f64>);

impl Matrix2Sym {
    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::sym_eigenvalues(&self.0)
    }
}

/// Symmetric square root `C^{1/2}` with `C^{1/2}:C^{1/2} = C`.
///
/// Eigenvalues in `[-tol·‖C‖, 0)` are clamped to zero; anything more
/// negative is rejected.
pub fn tensor_sqrt(c: &Tensor4, tol: f64) -> Result<Tensor4> {
    let flat = c.flatten();
    let (vals, vecs) = linalg::sym_eigen_desc(&flat);
    let scale = c.norm();
    let n = flat.nrows();
    let mut root = DMatrix::zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        if lam < -tol * scale {
            return Err(Error::NotPsd { min_eig: lam, scale });
        }
        if lam > 0.0 {
            let v = vecs.column(k);
            root += (v * v.transpose()) * lam.sqrt();
        }
    }
    symmetrize(&mut root);
    Tensor4::from_flat(c.d, c.m, &root)
}

/// Pseudoinverse of `ĉ_n = n̂·C·n̂`, inverting eigenvalues above
/// `tol_rank · λ_max(ĉ_n)`.
pub fn cn_pinv(c: &Tensor4, n: &[f64], tol_rank: f64) -> Result<Matrix2Sym> {
    let cn = c.normal_normal(n)?;
    Ok(Matrix2Sym(linalg::pinv_sym(&cn.0, tol_rank)))
}

/// A scalar material parameter on one element: constant, or vertex values
/// interpolated with the element's vertex shape functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarField {
    Constant(f64),
    Vertex(Vec<f64>),
}

impl ScalarField {
    pub fn eval(&self, vertex_weights: &[f64]) -> f64 {
        match self {
            ScalarField::Constant(v) => *v,
            ScalarField::Vertex(vals) => vals.iter().zip(vertex_weights).map(|(v, w)| v * w).sum(),
        }
    }

    /// Interpolated square, `Σ w_i v_i²`.
    pub fn eval_squared(&self, vertex_weights: &[f64]) -> f64 {
        match self {
            ScalarField::Constant(v) => v * v,
            ScalarField::Vertex(vals) => vals.iter().zip(vertex_weights).map(|(v, w)| v * v * w).sum(),
        }
    }

    fn samples(&self) -> Vec<f64> {
        match self {
            ScalarField::Constant(v) => vec![*v],
            ScalarField::Vertex(vals) => vals.clone(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            ScalarField::Constant(_) => true,
            ScalarField::Vertex(vals) => vals.windows(2).all(|w| w[0] == w[1]),
        }
    }

    fn vertex_count(&self) -> Option<usize> {
        match self {
            ScalarField::Constant(_) => None,
            ScalarField::Vertex(v) => Some(v.len()),
        }
    }

    fn require_positive(&self, name: &str) -> Result<()> {
        let s = self.samples();
        if s.is_empty() || s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        Ok(())
    }

    fn require_finite(&self, name: &str) -> Result<()> {
        let s = self.samples();
        if s.is_empty() || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be finite")));
        }
        Ok(())
    }
}

impl From<f64> for ScalarField {
    fn from(v: f64) -> Self {
        ScalarField::Constant(v)
    }
}

/// Material model on one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum MaterialModel {
    /// `C[i,1,1,j] = δ_ij c²` with mass density `ρ` and wave speed `c`;
    /// `c²` is interpolated from the squared vertex values.
    Acoustic { c: ScalarField, rho: ScalarField },
    /// `ρ = ε`, `C = μ⁻¹(δδ - δδ)` (curl-curl operator).
    Maxwell { mu: ScalarField, eps: ScalarField },
    /// Isotropic elasticity with Lamé parameters.
    ElasticIso {
        lambda: ScalarField,
        mu: ScalarField,
        rho: ScalarField,
    },
    /// Raw tensor with constant density.
    Tensor { tensor: Tensor4, rho: f64 },
}

/// Density and coefficient tensor of one element as functions of the
/// reference point (through the vertex shape-function weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    pub d: usize,
    pub m: usize,
    #[serde(flatten)]
    pub model: MaterialModel,
}

fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

fn acoustic_tensor(d: usize, rho_c2: f64) -> Tensor4 {
    Tensor4::from_fn(d, 1, |i, _, _, j| delta(i, j) * rho_c2)
}

fn maxwell_tensor(inv_mu: f64) -> Tensor4 {
    Tensor4::from_fn(3, 3, |id, im, jm, jd| {
        inv_mu * (delta(id, jd) * delta(im, jm) - delta(id, jm) * delta(im, jd))
    })
}

fn elastic_tensor(d: usize, lambda: f64, mu: f64) -> Tensor4 {
    Tensor4::from_fn(d, d, |id, im, jm, jd| {
        lambda * delta(id, im) * delta(jd, jm) + mu * (delta(id, jd) * delta(im, jm) + delta(id, jm) * delta(im, jd))
    })
}

/// Acoustic model with unit density.
pub fn make_acoustic(d: usize, c: ScalarField) -> Result<CoefficientField> {
    make_acoustic_with_density(d, c, ScalarField::Constant(1.0))
}

pub fn make_acoustic_with_density(d: usize, c: ScalarField, rho: ScalarField) -> Result<CoefficientField> {
    check_dim(d)?;
    c.require_positive("wave speed c")?;
    rho.require_positive("density")?;
    check_vertex_counts(&[&c, &rho])?;
    Ok(CoefficientField {
        d,
        m: 1,
        model: MaterialModel::Acoustic { c, rho },
    })
}

/// Maxwell's curl-curl model; requires `d = 3`.
pub fn make_maxwell(d: usize, mu: ScalarField, eps: ScalarField) -> Result<CoefficientField> {
    if d != 3 {
        return Err(Error::invalid(format!("Maxwell model requires d = 3, got {d}")));
    }
    mu.require_positive("permeability")?;
    eps.require_positive("permittivity")?;
    check_vertex_counts(&[&mu, &eps])?;
    Ok(CoefficientField {
        d: 3,
        m: 3,
        model: MaterialModel::Maxwell { mu, eps },
    })
}

/// Isotropic elastic model. Any Lamé pair giving a pointwise positive
/// semidefinite tensor is accepted.
pub fn make_elastic_iso(d: usize, lambda: ScalarField, mu: ScalarField, rho: ScalarField) -> Result<CoefficientField> {
    check_dim(d)?;
    rho.require_positive("density")?;
    lambda.require_finite("lambda")?;
    mu.require_finite("mu")?;
    check_vertex_counts(&[&lambda, &mu, &rho])?;
    let field = CoefficientField {
        d,
        m: d,
        model: MaterialModel::ElasticIso { lambda, mu, rho },
    };
    field.check_vertices_psd()?;
    Ok(field)
}

/// Generic constant tensor with constant density.
pub fn make_tensor(tensor: Tensor4, rho: f64) -> Result<CoefficientField> {
    if !(rho > 0.0) {
        return Err(Error::invalid("density must be positive"));
    }
    if tensor.major_asymmetry() > 1e-12 * tensor.norm().max(1.0) {
        return Err(Error::invalid("tensor lacks major symmetry"));
    }
    tensor.check_psd(1e-12)?;
    Ok(CoefficientField {
        d: tensor.d,
        m: tensor.m,
        model: MaterialModel::Tensor { tensor, rho },
    })
}

fn check_dim(d: usize) -> Result<()> {
    if !(1..=3).contains(&d) {
        return Err(Error::invalid(format!("dimension must be 1..=3, got {d}")));
    }
    Ok(())
}

fn check_vertex_counts(fields: &[&ScalarField]) -> Result<()> {
    let counts: Vec<usize> = fields.iter().filter_map(|f| f.vertex_count()).collect();
    if counts.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::invalid("vertex-valued fields disagree on vertex count"));
    }
    Ok(())
}

impl CoefficientField {
    /// Density and tensor at a point given by vertex shape-function weights.
    /// Scalars are interpolated first, then the model formula is applied,
    /// except for the acoustic `c²`, which is interpolated directly.
    pub fn eval(&self, vertex_weights: &[f64]) -> (f64, Tensor4) {
        match &self.model {
            MaterialModel::Acoustic { c, rho } => (
                rho.eval(vertex_weights),
                acoustic_tensor(self.d, c.eval_squared(vertex_weights)),
            ),
            MaterialModel::Maxwell { mu, eps } => {
                (eps.eval(vertex_weights), maxwell_tensor(1.0 / mu.eval(vertex_weights)))
            }
            MaterialModel::ElasticIso { lambda, mu, rho } => (
                rho.eval(vertex_weights),
                elastic_tensor(self.d, lambda.eval(vertex_weights), mu.eval(vertex_weights)),
            ),
            MaterialModel::Tensor { tensor, rho } => (*rho, tensor.clone()),
        }
    }

    /// Constant fields: evaluation at any point.
    pub fn eval_constant(&self) -> (f64, Tensor4) {
        self.eval(&[])
    }

    pub fn is_constant(&self) -> bool {
        match &self.model {
            MaterialModel::Acoustic { c, rho } => c.is_constant() && rho.is_constant(),
            MaterialModel::Maxwell { mu, eps } => mu.is_constant() && eps.is_constant(),
            MaterialModel::ElasticIso { lambda, mu, rho } => {
                lambda.is_constant() && mu.is_constant() && rho.is_constant()
            }
            MaterialModel::Tensor { .. } => true,
        }
    }

    /// Number of vertex values carried, if any field is vertex-valued.
    pub fn vertex_count(&self) -> Option<usize> {
        let fields: Vec<&ScalarField> = match &self.model {
            MaterialModel::Acoustic { c, rho } => vec![c, rho],
            MaterialModel::Maxwell { mu, eps } => vec![mu, eps],
            MaterialModel::ElasticIso { lambda, mu, rho } => vec![lambda, mu, rho],
            MaterialModel::Tensor { .. } => vec![],
        };
        fields.iter().find_map(|f| f.vertex_count())
    }

    /// PSD check at every vertex. Both `ρ` and `C` depend affinely on the
    /// interpolated scalars for the Maxwell (`μ⁻¹` aside) and elastic
    /// models, so vertex checks cover the element.
    pub fn check_vertices_psd(&self) -> Result<()> {
        let n = self.vertex_count().unwrap_or(1);
        for v in 0..n {
            let mut w = vec![0.0; n];
            w[v] = 1.0;
            let (rho, c) = self.eval(&w);
            if !(rho > 0.0) {
                return Err(Error::invalid("density must be positive"));
            }
            c.check_psd(1e-12)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym_eigs(m: &Matrix2Sym) -> Vec<f64> {
        m.eigenvalues()
    }

    /// Independent index-summation oracle for the elastic formula.
    fn elastic_form_bruteforce(d: usize, lambda: f64, mu: f64, s: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for id in 0..d {
            for im in 0..d {
                for jm in 0..d {
                    for jd in 0..d {
                        let c = lambda * delta(id, im) * delta(jd, jm)
                            + mu * (delta(id, jd) * delta(im, jm) + delta(id, jm) * delta(im, jd));
                        total += c * s[(id, im)] * s[(jd, jm)];
                    }
                }
            }
        }
        total
    }

    #[test]
    fn acoustic_ddot() {
        let f = make_acoustic(2, 2.0.into()).unwrap();
        let (_, c) = f.eval_constant();
        let e1 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!((ddot_form(&c, &e1, &e1).unwrap() - 4.0).abs() < 1e-14);
        let z = DMatrix::zeros(2, 1);
        assert_eq!(ddot_form(&c, &z, &e1).unwrap(), 0.0);
    }

    #[test]
    fn elastic_identity_form() {
        let s = DMatrix::<f64>::identity(3, 3);
        let expected = elastic_form_bruteforce(3, 1.0, 1.0, &s);
        // 9λ + 6μ
        assert!((expected - 15.0).abs() < 1e-14);
        let (_, c) = make_elastic_iso(3, 1.0.into(), 1.0.into(), 1.0.into())
            .unwrap()
            .eval_constant();
        assert!((ddot_form(&c, &s, &s).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (_, c) = make_acoustic(3, 1.0.into()).unwrap().eval_constant();
        let bad = DMatrix::zeros(2, 1);
        assert!(matches!(
            ddot_form(&c, &bad, &bad),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn acoustic_unit_speed_flattens_to_identity() {
        let (_, c) = make_acoustic(3, 1.0.into()).unwrap().eval_constant();
        assert!((c.flatten() - DMatrix::<f64>::identity(3, 3)).norm() < 1e-15);
        let (_, c3) = make_acoustic(2, 3.0.into()).unwrap().eval_constant();
        let s = DMatrix::from_row_slice(2, 1, &[0.3, -1.2]);
        assert!((ddot_form(&c3, &s, &s).unwrap() - 9.0 * (0.09 + 1.44)).abs() < 1e-12);
    }

    #[test]
    fn acoustic_interpolates_squared_speed() {
        let f = make_acoustic(1, ScalarField::Vertex(vec![1.0, 10.0])).unwrap();
        let (_, c) = f.eval(&[0.5, 0.5]);
        assert!((c.get(0, 0, 0, 0) - 50.5).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_speed_rejected() {
        assert!(make_acoustic(2, 0.0.into()).is_err());
        assert!(make_acoustic(2, ScalarField::Vertex(vec![1.0, -1.0])).is_err());
    }

    #[test]
    fn maxwell_normal_normal_spectrum() {
        let (_, c) = make_maxwell(3, 1.0.into(), 1.0.into()).unwrap().eval_constant();
        let ev = sym_eigs(&c.normal_normal(&[0.0, 0.0, 1.0]).unwrap());
        for (a, b) in ev.iter().zip([0.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn maxwell_annihilates_symmetric_gradients() {
        let (_, c) = make_maxwell(3, 1.0.into(), 1.0.into()).unwrap().eval_constant();
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, -1.0, 0.5, 3.0, 0.5, 4.0]);
        let mut brute = 0.0;
        for id in 0..3 {
            for im in 0..3 {
                for jm in 0..3 {
                    for jd in 0..3 {
                        let cc = delta(id, jd) * delta(im, jm) - delta(id, jm) * delta(im, jd);
                        brute += cc * s[(id, im)] * s[(jd, jm)];
                    }
                }
            }
        }
        assert!(brute.abs() < 1e-13);
        assert!(ddot_form(&c, &s, &s).unwrap().abs() < 1e-13);
    }

    #[test]
    fn maxwell_scales_with_inverse_permeability() {
        let (_, c1) = make_maxwell(3, 1.0.into(), 1.0.into()).unwrap().eval_constant();
        let (_, c2) = make_maxwell(3, 2.0.into(), 1.0.into()).unwrap().eval_constant();
        assert!((c1.scaled(0.5).flatten() - c2.flatten()).norm() < 1e-15);
        assert!(make_maxwell(2, 1.0.into(), 1.0.into()).is_err());
    }

    #[test]
    fn elastic_normal_normal_spectrum() {
        let (_, c) = make_elastic_iso(3, 1.0.into(), 1.0.into(), 1.0.into())
            .unwrap()
            .eval_constant();
        let ev = sym_eigs(&c.normal_normal(&[1.0, 0.0, 0.0]).unwrap());
        for (a, b) in ev.iter().zip([1.0, 1.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn elastic_pure_shear_is_twice_symmetrizer() {
        let (_, c) = make_elastic_iso(3, 0.0.into(), 1.0.into(), 1.0.into())
            .unwrap()
            .eval_constant();
        let s = DMatrix::from_row_slice(3, 3, &[0.2, 1.0, -0.3, 0.0, 0.7, 0.4, 1.1, -0.5, 0.9]);
        let sym = (&s + s.transpose()) * 0.5;
        let expected = 2.0 * sym.norm_squared();
        assert!((ddot_form(&c, &s, &s).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn elastic_minor_symmetry() {
        let (_, c) = make_elastic_iso(3, 2.5.into(), 0.7.into(), 1.0.into())
            .unwrap()
            .eval_constant();
        for a in 0..3 {
            for b in 0..3 {
                for e in 0..3 {
                    for f in 0..3 {
                        assert_eq!(c.get(a, b, e, f), c.get(b, a, e, f));
                        assert_eq!(c.get(a, b, e, f), c.get(a, b, f, e));
                    }
                }
            }
        }
    }

    #[test]
    fn elastic_rejects_bad_density_and_indefinite_lame() {
        assert!(make_elastic_iso(3, 1.0.into(), 1.0.into(), 0.0.into()).is_err());
        // λ + 2μ > 0 but bulk modulus negative
        assert!(matches!(
            make_elastic_iso(3, (-1.0).into(), 0.6.into(), 1.0.into()),
            Err(Error::NotPsd { .. })
        ));
        // λ < 0 with a positive bulk modulus is accepted
        assert!(make_elastic_iso(3, (-0.5).into(), 1.0.into(), 1.0.into()).is_ok());
    }

    #[test]
    fn sqrt_examples() {
        let (_, c) = make_acoustic(2, 4.0.into()).unwrap().eval_constant();
        let (_, half) = make_acoustic(2, 2.0.into()).unwrap().eval_constant();
        let r = tensor_sqrt(&c, 1e-12).unwrap();
        assert!((r.flatten() - half.flatten()).norm() < 1e-13);

        let z = Tensor4::zeros(3, 3);
        assert_eq!(tensor_sqrt(&z, 1e-12).unwrap().norm(), 0.0);

        let (_, mx) = make_maxwell(3, 1.0.into(), 1.0.into()).unwrap().eval_constant();
        let r = tensor_sqrt(&mx, 1e-12).unwrap();
        let back = r.double_dot(&r).unwrap();
        for (a, b) in back.flatten().iter().zip(mx.flatten().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let flat = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let t = Tensor4::from_flat(2, 1, &flat).unwrap();
        assert!(matches!(tensor_sqrt(&t, 1e-12), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn pinv_examples() {
        let (_, ac) = make_acoustic(3, 2.0.into()).unwrap().eval_constant();
        let n = [0.6, 0.0, 0.8];
        let p = cn_pinv(&ac, &n, 1e-10).unwrap();
        assert!((p.0[(0, 0)] - 0.25).abs() < 1e-14);

        let (_, mx) = make_maxwell(3, 1.0.into(), 1.0.into()).unwrap().eval_constant();
        let p = cn_pinv(&mx, &[0.0, 0.0, 1.0], 1e-10).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert!((p.0 - expected).norm() < 1e-14);

        let (_, el) = make_elastic_iso(3, 1.0.into(), 1.0.into(), 1.0.into())
            .unwrap()
            .eval_constant();
        let ev = cn_pinv(&el, &[1.0, 0.0, 0.0], 1e-10).unwrap().eigenvalues();
        for (a, b) in ev.iter().zip([1.0 / 3.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn normal_flux_matches_operator_form() {
        let (_, el) = make_elastic_iso(3, 1.5.into(), 0.5.into(), 1.0.into())
            .unwrap()
            .eval_constant();
        let n = [0.0, 0.6, 0.8];
        let g = DMatrix::from_row_slice(3, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6, 0.7, -0.8, 0.9]);
        let direct = el.normal_flux(&n, &g).unwrap();
        let gflat = DVector::from_fn(9, |r, _| g[(r / 3, r % 3)]);
        let op = el.normal_flux_operator(&n, &el.flatten()) * gflat;
        assert!((direct - op).norm() < 1e-14);
    }
}
