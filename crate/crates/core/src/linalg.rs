//! Small dense complex linear-algebra helpers shared by the model modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{IsacError, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Entrywise Hermitian tolerance for covariance inputs.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues down to `-PSD_TOL * Tr(R)` are accepted as rounding.
pub const PSD_TOL: f64 = 1e-10;

/// Sample covariance of the excitation, `R_x`.
///
/// Hermitian and positive semidefinite up to rounding; the trace is the
/// transmit power when the pulse has unit average power.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianCovariance(CMatrix);

impl HermitianCovariance {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(IsacError::Dimension(format!(
                "covariance must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let asym = max_hermitian_defect(&matrix);
        if asym > HERMITIAN_TOL * matrix.norm().max(1.0) {
            return Err(IsacError::InvalidMatrix(format!(
                "covariance is not Hermitian (defect {asym:e})"
            )));
        }
        let sym = hermitian_part(&matrix);
        let trace = sym.trace().re;
        let min_eig = hermitian_eigenvalues(&sym).min();
        if min_eig < -PSD_TOL * trace.abs().max(f64::MIN_POSITIVE) {
            return Err(IsacError::InvalidMatrix(format!(
                "covariance is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self(sym))
    }

    /// `(power / n) · I_n`, the isotropic excitation.
    pub fn isotropic(n: usize, power: f64) -> Self {
        Self(CMatrix::identity(n, n) * Complex64::new(power / n as f64, 0.0))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * Complex64::new(c, 0.0))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.0).min()
    }
}

pub fn max_hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(A + Aᴴ) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Real eigenvalues of a Hermitian matrix (the input is symmetrized first).
pub fn hermitian_eigenvalues(m: &CMatrix) -> DVector<f64> {
    hermitian_part(m).symmetric_eigen().eigenvalues
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Real basis of the `n x n` Hermitian matrices, `n²` elements.
///
/// Order: the `n` diagonal units, then for each `i < j` the real symmetric
/// pair followed by the imaginary antisymmetric pair, so that
/// `R = Σ r_k E_k` with `R[i][j] = r_re + j·r_im` above the diagonal.
pub fn hermitian_basis(n: usize) -> Vec<CMatrix> {
    let mut basis = Vec::with_capacity(n * n);
    for i in 0..n {
        let mut e = CMatrix::zeros(n, n);
        e[(i, i)] = Complex64::new(1.0, 0.0);
        basis.push(e);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut re = CMatrix::zeros(n, n);
            re[(i, j)] = Complex64::new(1.0, 0.0);
            re[(j, i)] = Complex64::new(1.0, 0.0);
            basis.push(re);
            let mut im = CMatrix::zeros(n, n);
            im[(i, j)] = Complex64::new(0.0, 1.0);
            im[(j, i)] = Complex64::new(0.0, -1.0);
            basis.push(im);
        }
    }
    basis
}

/// Coordinates of a Hermitian matrix in [`hermitian_basis`].
pub fn hermitian_coords(m: &CMatrix) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        out.push(m[(i, i)].re);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(m[(i, j)].re);
            out.push(m[(i, j)].im);
        }
    }
    out
}

/// Inverse of [`hermitian_coords`].
pub fn hermitian_from_coords(n: usize, coords: &[f64]) -> CMatrix {
    debug_assert_eq!(coords.len(), n * n);
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = Complex64::new(coords[i], 0.0);
    }
    let mut k = n;
    for i in 0..n {
        for j in (i + 1)..n {
            let z = Complex64::new(coords[k], coords[k + 1]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 2;
        }
    }
    m
}

/// Linear functional `R ↦ Re Tr(Q R)` expressed in basis coordinates.
pub fn trace_functional_coords(q: &CMatrix) -> Vec<f64> {
    let n = q.nrows();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        out.push(q[(i, i)].re);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            // Tr(Q E_re) = Q_ji + Q_ij, Tr(Q E_im) = j (Q_ji - Q_ij)
            let re = q[(j, i)] + q[(i, j)];
            let im = Complex64::new(0.0, 1.0) * (q[(j, i)] - q[(i, j)]);
            out.push(re.re);
            out.push(im.re);
        }
    }
    out
}

/// Factor `B` with `B Bᴴ = R` for a PSD `R`, flooring negative eigenvalues at zero.
pub fn psd_sqrt_factor(r: &CMatrix) -> CMatrix {
    let eig = hermitian_part(r).symmetric_eigen();
    let mut factor = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = Complex64::new(lam.max(0.0).sqrt(), 0.0);
        for i in 0..factor.nrows() {
            factor[(i, j)] *= s;
        }
    }
    factor
}

/// Inverse of a real symmetric positive definite matrix by Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}
