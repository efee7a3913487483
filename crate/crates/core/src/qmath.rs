//! Dense complex linear algebra.
//!
//! Everything here works on small dense matrices (at most a few hundred rows);
//! the only non-trivial numerics is the Hermitian eigendecomposition, which is
//! delegated to `nalgebra`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result, C64};

/// Tolerance used when a matrix is required to be Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Eigenvalues in `[-PSD_TOL, 0)` are treated as numerical noise and clipped.
pub const PSD_TOL: f64 = 1e-9;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidDims(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CMatrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals.
    pub fn from_rows<R: AsRef<[C64]>>(rows: &[R]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.as_ref().len(), ncols, "ragged matrix literal");
            data.extend_from_slice(r.as_ref());
        }
        CMatrix {
            rows: nrows,
            cols: ncols,
            data,
        }
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// `|ψ⟩⟨φ|`.
    pub fn outer(psi: &[C64], phi: &[C64]) -> Self {
        let mut m = Self::zeros(psi.len(), phi.len());
        for (i, a) in psi.iter().enumerate() {
            for (j, b) in phi.iter().enumerate() {
                m[(i, j)] = a * b.conj();
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(j, i)] = self[(i, j)].conj();
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(j, i)] = self[(i, j)];
            }
        }
        m
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.cols, "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Largest elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn hermiticity_error(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// `‖U†U − I‖_max`.
    pub fn unitarity_error(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        (&self.adjoint() * self).max_abs_diff(&Self::identity(self.rows))
    }

    /// `Tr(A† B)`.
    pub fn inner(&self, other: &CMatrix) -> C64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Kronecker product; see [`tensor`].
    pub fn kron(&self, other: &CMatrix) -> Self {
        tensor(self, other)
    }

    fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Kronecker product with `a` on the most significant index.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut out = CMatrix::zeros(rows, cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..b.rows {
                for l in 0..b.cols {
                    out[(i * b.rows + k, j * b.cols + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of state vectors, `a` most significant.
pub fn tensor_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| x * y))
        .collect()
}

/// Single-qubit Pauli matrices in the `{|H⟩, |V⟩}` basis.
pub mod pauli {
    use super::{CMatrix, I, ONE, ZERO};

    pub fn id() -> CMatrix {
        CMatrix::identity(2)
    }

    pub fn x() -> CMatrix {
        CMatrix::from_rows(&[[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn y() -> CMatrix {
        CMatrix::from_rows(&[[ZERO, -I], [I, ZERO]])
    }

    pub fn z() -> CMatrix {
        CMatrix::from_rows(&[[ONE, ZERO], [ZERO, -ONE]])
    }

    /// `[I, X, Y, Z]`.
    pub fn all() -> [CMatrix; 4] {
        [id(), x(), y(), z()]
    }
}

/// Hermitian eigendecomposition with eigenvalues sorted in descending order.
/// Column `k` of the returned matrix is the eigenvector of eigenvalue `k`.
pub fn herm_eig(a: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    if !a.is_square() {
        return Err(Error::InvalidDims(format!(
            "eigendecomposition of a {}x{} matrix",
            a.rows, a.cols
        )));
    }
    let err = a.hermiticity_error();
    if err > HERMITIAN_TOL {
        return Err(Error::NotHermitian(err));
    }
    // Symmetrize so that the solver sees an exactly Hermitian input.
    let sym = (a + &a.adjoint()).scale_re(0.5);
    let eig = sym.to_nalgebra().symmetric_eigen();
    let n = a.rows;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = CMatrix::from_nalgebra(&eig.eigenvectors);
    let mut sorted = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            sorted[(i, dst)] = vecs[(i, src)];
        }
    }
    Ok((values, sorted))
}

/// `V diag(f(λ)) V†` for Hermitian `a`.
pub fn herm_fn(a: &CMatrix, f: impl Fn(f64) -> f64) -> Result<CMatrix> {
    let (vals, vecs) = herm_eig(a)?;
    let mapped: Vec<f64> = vals.into_iter().map(f).collect();
    Ok(&(&vecs * &CMatrix::from_real_diag(&mapped)) * &vecs.adjoint())
}

/// Square root of a positive semidefinite matrix; eigenvalues in
/// `[-PSD_TOL, 0)` are clipped to zero.
pub fn sqrt_psd(a: &CMatrix) -> Result<CMatrix> {
    let (vals, _) = herm_eig(a)?;
    if let Some(&min) = vals.last() {
        if min < -PSD_TOL {
            return Err(Error::NotPositive(min));
        }
    }
    herm_fn(a, |x| x.max(0.0).sqrt())
}

/// Trace-one positive semidefinite Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
}

impl DensityMatrix {
    /// Validates and wraps `mat`. Eigenvalues in `[-PSD_TOL, 0)` are clipped and
    /// the result renormalised; anything more negative is rejected.
    pub fn new(mat: CMatrix) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::InvalidDims(format!(
                "density matrix must be square, got {}x{}",
                mat.rows, mat.cols
            )));
        }
        let herm = mat.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > PSD_TOL || tr.im.abs() > PSD_TOL {
            return Err(Error::InvalidTrace(tr.re));
        }
        let (vals, vecs) = herm_eig(&mat)?;
        let min = vals.last().copied().unwrap_or(0.0);
        if min < -PSD_TOL {
            return Err(Error::NotPositive(min));
        }
        if min < 0.0 {
            return Ok(Self::from_spectrum(&vals, &vecs));
        }
        let mat = (&mat + &mat.adjoint()).scale_re(0.5);
        Ok(DensityMatrix { mat })
    }

    /// Projects an arbitrary Hermitian matrix of positive trace onto the
    /// density matrices by zeroing negative eigenvalues and renormalising.
    pub fn project_psd(mat: &CMatrix) -> Result<Self> {
        let (vals, vecs) = herm_eig(mat)?;
        if vals.iter().all(|&v| v <= 0.0) {
            return Err(Error::InvalidState(
                "matrix has no positive eigenvalue".into(),
            ));
        }
        Ok(Self::from_spectrum(&vals, &vecs))
    }

    fn from_spectrum(vals: &[f64], vecs: &CMatrix) -> Self {
        let clipped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let scaled: Vec<f64> = clipped.iter().map(|v| v / total).collect();
        let m = &(vecs * &CMatrix::from_real_diag(&scaled)) * &vecs.adjoint();
        DensityMatrix {
            mat: (&m + &m.adjoint()).scale_re(0.5),
        }
    }

    /// `|ψ⟩⟨ψ|/⟨ψ|ψ⟩`.
    pub fn from_pure(psi: &[C64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("zero or non-finite state vector".into()));
        }
        let m = CMatrix::outer(psi, psi).scale_re(1.0 / norm);
        Ok(DensityMatrix { mat: m })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix {
            mat: CMatrix::identity(dim).scale_re(1.0 / dim as f64),
        }
    }

    /// Normalises a positive semidefinite matrix with positive trace.
    pub fn from_unnormalized(mat: CMatrix) -> Result<Self> {
        let tr = mat.trace().re;
        if tr <= 0.0 || !tr.is_finite() {
            return Err(Error::InvalidTrace(tr));
        }
        Self::new(mat.scale_re(1.0 / tr))
    }

    pub fn dim(&self) -> usize {
        self.mat.rows
    }

    pub fn mat(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_mat(self) -> CMatrix {
        self.mat
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        herm_eig(&self.mat).map(|(v, _)| v).unwrap_or_default()
    }

    /// `⟨ψ|ρ|ψ⟩` for a normalised `ψ`.
    pub fn expectation_pure(&self, psi: &[C64]) -> f64 {
        let rho_psi = self.mat.apply(psi);
        psi.iter()
            .zip(&rho_psi)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            .re
    }

    /// `Tr(ρ A)`.
    pub fn expectation(&self, op: &CMatrix) -> C64 {
        (&self.mat * op).trace()
    }

    /// `U ρ U†`.
    pub fn conjugate_by(&self, u: &CMatrix) -> Result<Self> {
        Self::new(&(u * &self.mat) * &u.adjoint())
    }
}

fn check_subsystems(dim: usize, dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidDims(format!("bad subsystem dims {dims:?}")));
    }
    let prod: usize = dims.iter().product();
    if prod != dim {
        return Err(Error::InvalidDims(format!(
            "subsystem dims {dims:?} multiply to {prod}, matrix has dim {dim}"
        )));
    }
    Ok(())
}

/// Reduced state on the subsystems listed in `keep` (in increasing order of
/// subsystem index, regardless of the order in `keep`).
pub fn partial_trace(rho: &DensityMatrix, dims: &[usize], keep: &[usize]) -> Result<DensityMatrix> {
    check_subsystems(rho.dim(), dims)?;
    let n = dims.len();
    let mut kept = vec![false; n];
    for &k in keep {
        if k >= n {
            return Err(Error::InvalidDims(format!(
                "subsystem {k} out of range for {n} subsystems"
            )));
        }
        kept[k] = true;
    }
    let keep_dims: Vec<usize> = (0..n).filter(|&i| kept[i]).map(|i| dims[i]).collect();
    let out_dim: usize = keep_dims.iter().product();

    // digits of a flat index, most significant first
    let digits = |mut idx: usize| {
        let mut d = vec![0; n];
        for i in (0..n).rev() {
            d[i] = idx % dims[i];
            idx /= dims[i];
        }
        d
    };
    let mut out = CMatrix::zeros(out_dim, out_dim);
    let m = rho.mat();
    let total = rho.dim();
    for r in 0..total {
        let dr = digits(r);
        for c in 0..total {
            let dc = digits(c);
            if (0..n).any(|i| !kept[i] && dr[i] != dc[i]) {
                continue;
            }
            let (mut ri, mut ci) = (0, 0);
            for i in (0..n).filter(|&i| kept[i]) {
                ri = ri * dims[i] + dr[i];
                ci = ci * dims[i] + dc[i];
            }
            out[(ri, ci)] += m[(r, c)];
        }
    }
    DensityMatrix::new(out)
}

/// Uhlmann–Jozsa fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn uhlmann_fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::InvalidDims(format!(
            "fidelity between dims {} and {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    let sr = sqrt_psd(rho.mat())?;
    let inner = &(&sr * sigma.mat()) * &sr;
    let inner = (&inner + &inner.adjoint()).scale_re(0.5);
    let (vals, _) = herm_eig(&inner)?;
    let root: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((root * root).clamp(0.0, 1.0))
}

/// `½ Tr|ρ − σ|`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::InvalidDims(format!(
            "trace distance between dims {} and {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    let (vals, _) = herm_eig(&(rho.mat() - sigma.mat()))?;
    Ok(0.5 * vals.iter().map(|v| v.abs()).sum::<f64>())
}

fn gaussian_complex<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im)
}

/// Haar-random unitary via Gram–Schmidt on a complex Ginibre matrix.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<C64> = (0..n).map(|_| gaussian_complex(rng)).collect();
        for u in &cols {
            let proj: C64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= proj * ui;
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        cols.push(v.into_iter().map(|z| z / norm).collect());
    }
    let mut m = CMatrix::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        for (i, z) in c.iter().enumerate() {
            m[(i, j)] = *z;
        }
    }
    m
}

/// Random full-rank density matrix `G G† / Tr(G G†)` with Ginibre `G`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let data = (0..dim * dim).map(|_| gaussian_complex(rng)).collect();
    let g = CMatrix::from_vec(dim, dim, data).expect("square");
    let m = &g * &g.adjoint();
    DensityMatrix::from_unnormalized(m).expect("Ginibre product is positive definite")
}

/// Random normalised pure state.
pub fn random_pure<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<C64> {
    let v: Vec<C64> = (0..dim).map(|_| gaussian_complex(rng)).collect();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / n).collect()
}
