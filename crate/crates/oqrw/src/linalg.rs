//! Dense complex linear algebra helpers shared by the walk, evolution and
//! QMC modules.
//!
//! Everything here operates on `nalgebra::DMatrix<Complex<T>>`; the heavier
//! primitives (Hermitian eigendecomposition, SVD) are nalgebra's, wrapped so
//! the rest of the crate can stay in terms of block operations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Dense complex matrix over the crate scalar.
pub type CMatrix<T> = DMatrix<Complex<T>>;
/// Dense complex vector over the crate scalar.
pub type CVector<T> = DVector<Complex<T>>;

/// Complex entry from real literals.
pub fn c<T: Scalar>(re: f64, im: f64) -> Complex<T> {
    Complex::new(real::<T>(re), real::<T>(im))
}

pub fn identity<T: Scalar>(dim: usize) -> CMatrix<T> {
    CMatrix::<T>::identity(dim, dim)
}

pub fn zeros<T: Scalar>(dim: usize) -> CMatrix<T> {
    CMatrix::<T>::zeros(dim, dim)
}

/// Elementary matrix unit `|a⟩⟨b|`.
pub fn matrix_unit<T: Scalar>(dim: usize, a: usize, b: usize) -> CMatrix<T> {
    let mut m = zeros(dim);
    m[(a, b)] = Complex::new(T::one(), T::zero());
    m
}

/// Frobenius norm.
pub fn fro_norm<T: Scalar>(m: &CMatrix<T>) -> T {
    m.norm()
}

/// Frobenius distance `‖a − b‖_F`.
pub fn fro_dist<T: Scalar>(a: &CMatrix<T>, b: &CMatrix<T>) -> T {
    (a - b).norm()
}

/// Real part of the trace.
pub fn trace_re<T: Scalar>(m: &CMatrix<T>) -> T {
    m.trace().re
}

/// Modulus of a complex scalar.
pub fn cmod<T: Scalar>(z: Complex<T>) -> T {
    (z.re * z.re + z.im * z.im).sqrt()
}

/// `‖m − m†‖_F`, zero iff `m` is Hermitian.
pub fn hermitian_residual<T: Scalar>(m: &CMatrix<T>) -> T {
    (m - m.adjoint()).norm()
}

/// Hermitian part `(m + m†)/2`.
pub fn hermitize<T: Scalar>(m: &CMatrix<T>) -> CMatrix<T> {
    (m + m.adjoint()).scale(real::<T>(0.5))
}

pub fn all_finite<T: Scalar>(m: &CMatrix<T>) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues<T: Scalar>(m: &CMatrix<T>) -> Vec<T> {
    let eig = m.clone().symmetric_eigen();
    let mut vals: Vec<T> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    vals
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue<T: Scalar>(m: &CMatrix<T>) -> T {
    let vals = hermitian_eigenvalues(m);
    vals.first().copied().unwrap_or_else(T::zero)
}

/// Positive-semidefinite square root of a Hermitian matrix.
///
/// Eigenvalues below zero are clipped to zero before taking the root; blocks
/// handed to this are PSD up to rounding, so the clip only removes noise on
/// the order of the `1e-12` eigenvalue tolerance.
pub fn sqrt_psd<T: Scalar>(m: &CMatrix<T>) -> CMatrix<T> {
    let eig = m.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let dim = m.nrows();
    let mut d = zeros::<T>(dim);
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let lam = if *lam < T::zero() { T::zero() } else { *lam };
        d[(k, k)] = Complex::new(lam.sqrt(), T::zero());
    }
    v * d * v.adjoint()
}

/// Hermitize, clip negative eigenvalues to zero and renormalize to unit
/// trace. Used to repair eigen-solver output into a valid density block map.
pub fn project_to_density<T: Scalar>(m: &CMatrix<T>) -> CMatrix<T> {
    let h = hermitize(m);
    let eig = h.symmetric_eigen();
    let v = &eig.eigenvectors;
    let dim = m.nrows();
    let mut d = zeros::<T>(dim);
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let lam = if *lam < T::zero() { T::zero() } else { *lam };
        d[(k, k)] = Complex::new(lam, T::zero());
    }
    v * d * v.adjoint()
}

/// Basis vectors of a numerical nullspace.
pub type NullBasis<T> = Vec<CVector<T>>;

/// Right and left numerical nullspaces of `m`.
///
/// Returns the singular vectors whose singular values fall at or below
/// `tol`: `(right, left)` with `m v ≈ 0` for the right vectors and
/// `m† u ≈ 0` for the left vectors. The two lists share indices.
pub fn nullspaces<T: Scalar>(m: &CMatrix<T>, tol: T) -> Result<(NullBasis<T>, NullBasis<T>)> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::InvalidInput {
        kind: "matrix",
        reason: "SVD did not produce U".into(),
    })?;
    let v_t = svd.v_t.ok_or_else(|| Error::InvalidInput {
        kind: "matrix",
        reason: "SVD did not produce V^H".into(),
    })?;
    let mut right = Vec::new();
    let mut left = Vec::new();
    for (k, sigma) in svd.singular_values.iter().enumerate() {
        if *sigma <= tol {
            right.push(v_t.row(k).adjoint());
            left.push(u.column(k).into_owned());
        }
    }
    Ok((right, left))
}

/// Checks that `m` is square with the expected dimension and finite entries.
pub fn check_operator<T: Scalar>(m: &CMatrix<T>, dim: usize, context: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput {
            kind: "matrix",
            reason: format!(
                "{context}: matrix is {}x{}, not square",
                m.nrows(),
                m.ncols()
            ),
        });
    }
    if m.nrows() != dim {
        return Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected: dim,
            found: m.nrows(),
        });
    }
    if !all_finite(m) {
        return Err(Error::NonFinite(context.to_string()));
    }
    Ok(())
}
