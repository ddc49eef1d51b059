//! Dense linear-algebra kernel: matrices, entry-wise and Schatten p-norms,
//! duality, SVD, Newton-Schulz orthogonalization and softmax.

mod matrix;
mod newton_schulz;
mod scaled;
mod softmax;
mod spec;
mod svd;

pub use matrix::Matrix;
pub(crate) use matrix::{dot_slices, scaled_l2};
pub use newton_schulz::{newton_schulz_orthogonalize, DEFAULT_NS_STEPS};
pub use scaled::ScaledMatrix;
pub use softmax::{log_sum_exp, sigmoid, softmax, softmax_jacobian, softplus};
pub use spec::{Exponent, NormFamily, NormSpec};
pub use svd::{singular_values, svd, SvdFactors, DEFAULT_RANK_TOL, MAX_SWEEPS};

use crate::error::Result;

/// ℓp norm of a vector, scaled by the largest magnitude to avoid
/// overflow/underflow in `|x|^p`.
pub fn vector_norm(values: &[f64], p: Exponent) -> Result<f64> {
    let p = p.validate()?;
    let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(match p {
        Exponent::Infinity => m,
        _ if m == 0.0 => 0.0,
        Exponent::Finite(p) if p == 1.0 => values.iter().map(|v| v.abs()).sum(),
        Exponent::Finite(p) if p == 2.0 => scaled_l2(values),
        Exponent::Finite(p) => {
            let s: f64 = values.iter().map(|v| (v.abs() / m).powf(p)).sum();
            m * s.powf(1.0 / p)
        }
    })
}

/// `(Σ_{i,j} |A[i,j]|^p)^{1/p}`; the max-norm for `p = ∞`.
pub fn entrywise_norm(a: &Matrix, p: impl Into<Exponent>) -> Result<f64> {
    vector_norm(a.as_slice(), p.into())
}

/// ℓp norm of the singular values.
pub fn schatten_norm(a: &Matrix, p: impl Into<Exponent>) -> Result<f64> {
    let p = p.into().validate()?;
    if p.is_two() {
        return Ok(a.frobenius());
    }
    if a.is_zero() {
        return Ok(0.0);
    }
    vector_norm(&singular_values(a)?, p)
}

pub fn norm(a: &Matrix, spec: NormSpec) -> Result<f64> {
    match spec.family() {
        NormFamily::Entrywise => entrywise_norm(a, spec.exponent()),
        NormFamily::Schatten => schatten_norm(a, spec.exponent()),
    }
}

/// Norm under `spec.dual()`, i.e. `max_{norm(Δ, spec) ≤ 1} ⟨A, Δ⟩`.
pub fn dual_norm(a: &Matrix, spec: NormSpec) -> Result<f64> {
    norm(a, spec.dual())
}
