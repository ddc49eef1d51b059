use crate::error::{Error, Result};
use crate::norms::matrix::Matrix;

/// Default number of cubic iterations used by Muon's approximate update.
pub const DEFAULT_NS_STEPS: usize = 8;

/// Approximates the orthogonal polar factor `U·Vᵀ` of `a` with the cubic
/// Newton-Schulz iteration
///
/// ```text
/// X_0     = A / ‖A‖_F
/// X_{s+1} = 1.5·X_s − 0.5·X_s X_sᵀ X_s
/// ```
///
/// Frobenius pre-normalization bounds the spectral norm of `X_0` by one, the
/// region where the iteration converges. Singular values approach 1 at a
/// linear-then-quadratic rate, so tiny singular values need more steps.
pub fn newton_schulz_orthogonalize(a: &Matrix, steps: usize) -> Result<Matrix> {
    let fro = a.frobenius();
    if fro == 0.0 {
        return Err(Error::DegenerateInput(
            "Newton-Schulz orthogonalization of the zero matrix".into(),
        ));
    }
    let mut x = a.scale(1.0 / fro);
    let bound = 2.0 * (a.rows().min(a.cols()) as f64).sqrt();
    let wide = a.rows() <= a.cols();
    for step in 0..steps {
        // Multiply through the smaller Gram matrix.
        let cubic = if wide {
            x.gram_rows().matmul(&x)?
        } else {
            let xt = x.transpose();
            x.matmul(&xt.gram_rows())?
        };
        let mut next = x.scale(1.5);
        next.axpy(-0.5, &cubic);
        let norm = next.frobenius();
        if !norm.is_finite() || norm > bound {
            return Err(Error::NumericalFailure(format!(
                "Newton-Schulz diverged at step {step}: ‖X‖_F = {norm:.3e} exceeds {bound:.3e}"
            )));
        }
        x = next;
    }
    Ok(x)
}
