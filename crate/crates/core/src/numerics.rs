//! Dense symmetric linear algebra kernels.
//!
//! Every positive-semidefiniteness decision in the crate goes through this
//! module, so the verification layer can re-check solver output without
//! touching the interior-point code.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry accepted (and averaged away) by [`SymMatrix::new`].
pub const DEFAULT_ASYMMETRY_TOL: f64 = 1e-12;

/// A real symmetric matrix. Both triangles are stored and kept identical.
#[derive(Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m` as `(m + mᵀ)/2`, rejecting inputs whose asymmetry
    /// exceeds [`DEFAULT_ASYMMETRY_TOL`] relative to the largest entry.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, DEFAULT_ASYMMETRY_TOL)
    }

    pub fn with_tolerance(m: DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(Error::InvalidMatrix(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                let d = (m[(i, j)] - m[(j, i)]).abs();
                if d > rel_tol * scale.max(1.0) {
                    return Err(Error::InvalidMatrix(format!(
                        "asymmetry {d:e} at ({i}, {j}) exceeds tolerance"
                    )));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, n, data))
    }

    /// Builds the matrix from its lower triangle (`f(i, j)` is queried for `j <= i`).
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// `v vᵀ`
    pub fn outer(v: &DVector<f64>) -> Self {
        SymMatrix(v * v.transpose())
    }

    /// `X M Xᵀ` for an arbitrary (possibly rectangular) `x`.
    pub fn congruence(&self, x: &DMatrix<f64>) -> Self {
        Self::symmetrized(x * &self.0 * x.transpose())
    }

    /// `X Xᵀ`
    pub fn gram_of(x: &DMatrix<f64>) -> Self {
        Self::symmetrized(x * x.transpose())
    }

    /// `X + Xᵀ` for a square `x`.
    pub fn sym_part_doubled(x: &DMatrix<f64>) -> Self {
        SymMatrix(x + x.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Frobenius inner product `tr(self · other)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }

    pub fn scale(&self, a: f64) -> Self {
        SymMatrix(&self.0 * a)
    }

    /// Rows/columns as `Vec<Vec<f64>>`, row-major.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.0[(i, j)]).collect())
            .collect()
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMatrix{:?}", self.to_rows())
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        SymMatrix(-&self.0)
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `Σ λ_i v_i v_iᵀ`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.values);
        &self.vectors * d * self.vectors.transpose()
    }
}

fn ensure_finite(m: &SymMatrix) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidMatrix("non-finite entry".into()))
    }
}

pub fn sym_eig(m: &SymMatrix) -> Result<SymEigen> {
    ensure_finite(m)?;
    let eig = SymmetricEigen::new(m.0.clone());
    let n = m.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { values, vectors })
}

pub fn lambda_min(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eig(m)?.min())
}

pub fn lambda_max(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eig(m)?.max())
}

/// `λ_min(M) ≥ -tol`
pub fn is_psd(m: &SymMatrix, tol: f64) -> Result<bool> {
    Ok(lambda_min(m)? >= -tol)
}

/// Lower-triangular `L` with `L Lᵀ = M + shift·I`.
pub fn cholesky_psd(m: &SymMatrix, shift: f64) -> Result<DMatrix<f64>> {
    ensure_finite(m)?;
    let n = m.dim();
    let a = &m.0;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + shift;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// `L⁻¹ M L⁻ᵀ` for `P = L Lᵀ`.
fn whiten(m: &SymMatrix, l: &DMatrix<f64>) -> SymMatrix {
    let n = m.dim();
    let mut linv = DMatrix::identity(n, n);
    // L is invertible: cholesky_psd rejected zero pivots.
    let solved = l.solve_lower_triangular_mut(&mut linv);
    debug_assert!(solved);
    SymMatrix::symmetrized(&linv * &m.0 * linv.transpose())
}

/// Largest generalized eigenvalue `λ_max(P⁻¹M)` for `M ⪰ 0`, `P ≻ 0`.
pub fn gen_eig_max(m: &SymMatrix, p: &SymMatrix) -> Result<f64> {
    Ok(gen_eig_max_vector(m, p)?.0)
}

/// Like [`gen_eig_max`], also returning a maximizer `x` normalized to `xᵀPx = 1`,
/// so that `xᵀMx = λ_max(P⁻¹M)`.
pub fn gen_eig_max_vector(m: &SymMatrix, p: &SymMatrix) -> Result<(f64, DVector<f64>)> {
    if m.dim() != p.dim() {
        return Err(Error::InvalidMatrix(format!(
            "dimension mismatch: {} vs {}",
            m.dim(),
            p.dim()
        )));
    }
    ensure_finite(m)?;
    let l = cholesky_psd(p, 0.0)?;
    let w = whiten(m, &l);
    let eig = sym_eig(&w)?;
    let scale = w.max_abs().max(1.0);
    if eig.min() < -1e-10 * scale {
        return Err(Error::InvalidMatrix(format!(
            "generalized eigenproblem expects M ⪰ 0 (λ_min = {:e})",
            eig.min()
        )));
    }
    let n = m.dim();
    let v = eig.vectors.column(n - 1).into_owned();
    let x = l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or_else(|| Error::InvalidMatrix("singular Cholesky factor".into()))?;
    Ok((eig.max().max(0.0), x))
}

/// Numerical rank from singular values above `rel_tol · σ_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}
