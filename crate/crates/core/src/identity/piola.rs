//! Divergence-free columns of the cofactor of `I + ∇vᵀ`.

use super::{cofactor, deformation};
use crate::error::{FpfError, Result};
use crate::fields::VectorField;
use crate::scalar::{lit, Scalar};

/// `Σ_i ∂_i C_ij` for each column `j` of `C = cof(I + ∇vᵀ)`, by central
/// differences of the cofactors. Zero in exact arithmetic.
pub fn piola_residual<T: Scalar>(v: &dyn VectorField<T>, x: &[T], fd_step: T) -> Result<Vec<T>> {
    let d = x.len();
    if v.dim() != d {
        return Err(FpfError::DimensionMismatch { expected: v.dim(), got: d });
    }
    let det = deformation(v, x).determinant();
    if det.abs() <= lit(1e-12) {
        return Err(FpfError::Singular(format!("I + ∇vᵀ singular at {x:?}")));
    }
    let mut out = vec![T::zero(); d];
    for i in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += fd_step;
        xm[i] -= fd_step;
        let cp = cofactor(&deformation(v, &xp));
        let cm = cofactor(&deformation(v, &xm));
        for (j, o) in out.iter_mut().enumerate() {
            *o += (cp[(i, j)] - cm[(i, j)]) / (fd_step + fd_step);
        }
    }
    Ok(out)
}
