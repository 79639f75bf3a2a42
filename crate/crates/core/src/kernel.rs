//! Quadratic exposure kernel and its positive-definite repair.
//!
//! The kernel is `K(z, z') = (1 + z'z)^2`. For `n` subjects and `m`
//! pollutants its rank is at most `(m + 1)(m + 2) / 2`, so for realistic
//! sample sizes the raw matrix is singular and must be repaired before it
//! can be factored. Repair clips the spectrum from below at
//! `eps_floor * rho(S)`, which is the Frobenius-nearest symmetric matrix
//! whose eigenvalues all clear the floor.

use nalgebra::allocator::Allocator;
use nalgebra::{Cholesky, DMatrix, DVector, DefaultAllocator, Dim, Dyn, Matrix, OMatrix, Storage};

use crate::error::{Error, Result};
use crate::linalg;

/// Default eigenvalue floor, relative to the spectral radius.
pub const DEFAULT_EPS_FLOOR: f64 = 1e-8;

/// Relative asymmetry accepted (and averaged away) by [`nearest_pd`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Exposure profiles: one row per subject, one column per pollutant.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureMatrix(DMatrix<f64>);

impl ExposureMatrix {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() < 2 {
            return Err(Error::input(format!(
                "exposure matrix needs at least 2 subjects, got {}",
                z.nrows()
            )));
        }
        if z.ncols() < 1 {
            return Err(Error::input("exposure matrix needs at least 1 pollutant"));
        }
        if let Some((idx, _)) = z.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (idx % z.nrows(), idx / z.nrows());
            return Err(Error::input(format!(
                "non-finite exposure at subject {row}, pollutant {col}"
            )));
        }
        Ok(Self(z))
    }

    #[cfg(test)]
    pub(crate) fn from_raw(z: DMatrix<f64>) -> Self {
        Self(z)
    }

    pub fn n_subjects(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_pollutants(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Column-wise z-scores (sample standard deviation). Constant columns
    /// are centered but left unscaled.
    pub fn standardized(&self) -> Self {
        let n = self.0.nrows() as f64;
        let mut out = self.0.clone();
        for mut col in out.column_iter_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            for v in col.iter_mut() {
                *v -= mean;
                if sd > 0.0 {
                    *v /= sd;
                }
            }
        }
        Self(out)
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.0.select_rows(indices))
    }
}

/// Raw quadratic kernel `S_ij = (1 + z_i'z_j)^2`.
pub fn quadratic_kernel(z: &ExposureMatrix) -> DMatrix<f64> {
    let zm = z.as_matrix();
    let gram = zm * zm.transpose();
    let mut s = gram.map(|g| (1.0 + g) * (1.0 + g));
    // The gram product is symmetric up to rounding; make it exact.
    linalg::symmetrize_in_place(&mut s);
    s
}

/// A repaired, positive-definite kernel together with its Cholesky factor
/// and its eigendecomposition `K = U diag(lambda) U'`.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    k: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    eps_floor: f64,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    repaired: bool,
}

impl KernelMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Lower-triangular Cholesky factor `L` with `K = L L'`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn eps_floor(&self) -> f64 {
        self.eps_floor
    }

    /// Eigenvalues of `K` (after repair), ascending as returned by the solver order.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors of `K`, one per column.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Whether the spectrum had to be clipped.
    pub fn was_repaired(&self) -> bool {
        self.repaired
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// `ln det K` from the Cholesky pivots.
    pub fn log_det(&self) -> f64 {
        linalg::chol_logdet(&self.chol)
    }

    /// Smallest diagonal entry of the Cholesky factor.
    pub fn min_pivot(&self) -> f64 {
        self.chol.l_dirty().diagonal().min()
    }

    /// Solves `K X = B` with two triangular solves against the Cholesky factor.
    pub fn solve<C, S>(&self, b: &Matrix<f64, Dyn, C, S>) -> Result<OMatrix<f64, Dyn, C>>
    where
        C: Dim,
        S: Storage<f64, Dyn, C>,
        DefaultAllocator: Allocator<Dyn, C>,
    {
        if b.nrows() != self.dim() {
            return Err(Error::input(format!(
                "kernel is {n}x{n} but right-hand side has {} rows",
                b.nrows(),
                n = self.dim()
            )));
        }
        Ok(self.chol.solve(b))
    }
}

/// Free-function form of [`KernelMatrix::solve`].
pub fn kernel_solve<C, S>(k: &KernelMatrix, b: &Matrix<f64, Dyn, C, S>) -> Result<OMatrix<f64, Dyn, C>>
where
    C: Dim,
    S: Storage<f64, Dyn, C>,
    DefaultAllocator: Allocator<Dyn, C>,
{
    k.solve(b)
}

/// Nearest (Frobenius) symmetric matrix whose eigenvalues are at least
/// `eps_floor * rho(S)`, returned with its Cholesky factor.
///
/// Without a unit-diagonal constraint the alternating-projection scheme
/// collapses to a single projection onto the floored cone, which is what
/// this computes. A matrix that already clears the floor is returned as is.
pub fn nearest_pd(s: &DMatrix<f64>, eps_floor: f64) -> Result<KernelMatrix> {
    if !(eps_floor > 0.0 && eps_floor.is_finite()) {
        return Err(Error::input(format!("eps_floor must be positive, got {eps_floor}")));
    }
    let n = s.nrows();
    if n == 0 || s.ncols() != n {
        return Err(Error::input(format!(
            "expected a non-empty square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if !linalg::all_finite_mat(s) {
        return Err(Error::input("matrix has non-finite entries"));
    }

    let scale = s.amax().max(1.0);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::input(format!(
            "matrix is not symmetric (max |S_ij - S_ji| = {asym:e})"
        )));
    }
    let mut sym = s.clone();
    linalg::symmetrize_in_place(&mut sym);

    let eig = sym.clone().symmetric_eigen();
    let rho = eig.eigenvalues.amax();
    let threshold = if rho > 0.0 { eps_floor * rho } else { eps_floor };
    let repaired = eig.eigenvalues.iter().any(|&l| l < threshold);

    let (k, eigenvalues) = if repaired {
        let clipped = eig.eigenvalues.map(|l| l.max(threshold));
        let u = &eig.eigenvectors;
        let mut scaled = u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= clipped[j];
        }
        let mut k = scaled * u.transpose();
        linalg::symmetrize_in_place(&mut k);
        (k, clipped)
    } else {
        (sym, eig.eigenvalues.clone())
    };

    let chol = Cholesky::new(k.clone())
        .ok_or_else(|| Error::internal("Cholesky factorization failed after eigenvalue repair"))?;
    if chol.l_dirty().diagonal().iter().any(|&d| !(d > 0.0)) {
        return Err(Error::internal("non-positive Cholesky pivot after repair"));
    }

    Ok(KernelMatrix {
        k,
        chol,
        eps_floor,
        eigenvalues,
        eigenvectors: eig.eigenvectors,
        repaired,
    })
}

/// Builds the repaired quadratic kernel for a set of exposure profiles.
pub fn build_kernel(z: &ExposureMatrix, eps_floor: f64) -> Result<KernelMatrix> {
    nearest_pd(&quadratic_kernel(z), eps_floor)
}
