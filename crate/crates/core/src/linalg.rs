//! Regularized Gram-system solves shared by combiners and precoders.

use nalgebra::Cholesky;
use num_complex::Complex64;

use crate::CMatrix;

/// Pivot ratio below which an unregularized Gram matrix counts as singular.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramFailure {
    /// Cholesky failed: the matrix is not positive definite.
    NotPositiveDefinite,
    /// Factorization succeeded but a pivot is negligible.
    IllConditioned,
}

/// Returns `H (H^H H + diag(reg))^{-1}` via a Cholesky solve of the `K x K`
/// Hermitian system `(H^H H + diag(reg)) X = H^H`. Without regularization a
/// negligible pivot is reported as [`GramFailure::IllConditioned`].
pub fn regularized_right_inverse(h: &CMatrix, reg: &[f64]) -> Result<CMatrix, GramFailure> {
    let k = h.ncols();
    debug_assert_eq!(reg.len(), k);
    let hh = h.adjoint();
    let mut gram = &hh * h;
    for (i, r) in reg.iter().enumerate() {
        gram[(i, i)] += Complex64::new(*r, 0.0);
    }
    let max_diag = (0..k).map(|i| gram[(i, i)].re).fold(0.0, f64::max);
    if !gram.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(GramFailure::NotPositiveDefinite);
    }
    let chol = Cholesky::new(gram).ok_or(GramFailure::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    let min_pivot = (0..k).map(|i| l[(i, i)].re.powi(2)).fold(f64::INFINITY, f64::min);
    let unregularized = reg.iter().all(|r| *r == 0.0);
    if unregularized && k > 0 && min_pivot <= RANK_TOLERANCE * max_diag {
        return Err(GramFailure::IllConditioned);
    }
    let x = chol.solve(&hh);
    Ok(x.adjoint())
}

/// `||(H^H H + diag(reg)) V^H - H^H||_F / ||H^H||_F` for a computed `V`.
pub fn gram_residual(h: &CMatrix, reg: &[f64], v: &CMatrix) -> f64 {
    let hh = h.adjoint();
    let mut gram = &hh * h;
    for (i, r) in reg.iter().enumerate() {
        gram[(i, i)] += Complex64::new(*r, 0.0);
    }
    (gram * v.adjoint() - &hh).norm() / hh.norm()
}
