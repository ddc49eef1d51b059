use crate::norms::Matrix;

/// A matrix stored as `exp(log_scale) · mantissa` with `max |mantissa| = 1`.
///
/// Late in training on separable data, gradients shrink like
/// `exp(-margin)` and squared gradients leave the f64 range long before the
/// gradients themselves do. Every direction the optimizers take is
/// invariant to a common positive scale, so they operate on mantissas and
/// carry the scale separately. The zero matrix has `log_scale = -∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledMatrix {
    log_scale: f64,
    mantissa: Matrix,
}

impl ScaledMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ScaledMatrix {
            log_scale: f64::NEG_INFINITY,
            mantissa: Matrix::zeros(rows, cols),
        }
    }

    /// Normalizes `exp(log_scale) · raw`.
    pub fn from_parts(log_scale: f64, raw: Matrix) -> Self {
        let m = raw.max_abs();
        if m == 0.0 || log_scale == f64::NEG_INFINITY {
            let (r, c) = raw.shape();
            return ScaledMatrix::zeros(r, c);
        }
        ScaledMatrix {
            log_scale: log_scale + m.ln(),
            mantissa: raw.scale(1.0 / m),
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self::from_parts(0.0, m.clone())
    }

    #[inline]
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    #[inline]
    pub fn mantissa(&self) -> &Matrix {
        &self.mantissa
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.mantissa.shape()
    }

    pub fn is_zero(&self) -> bool {
        self.log_scale == f64::NEG_INFINITY
    }

    /// Plain f64 value; entries may underflow to zero.
    pub fn to_matrix(&self) -> Matrix {
        if self.is_zero() {
            let (r, c) = self.shape();
            return Matrix::zeros(r, c);
        }
        let s = self.log_scale.exp();
        if s.is_finite() && s > 0.0 {
            self.mantissa.scale(s)
        } else {
            // split the exponent so the product is correctly rounded when representable
            let half = (0.5 * self.log_scale).exp();
            self.mantissa.map(|v| v * half * half)
        }
    }

    /// Entry-wise square.
    pub fn squared(&self) -> ScaledMatrix {
        if self.is_zero() {
            return self.clone();
        }
        ScaledMatrix {
            log_scale: 2.0 * self.log_scale,
            mantissa: self.mantissa.map(|v| v * v),
        }
    }

    /// `self ← beta · self + (1 − beta) · other`, computed in scaled form.
    pub fn ema_update(&mut self, beta: f64, other: &ScaledMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        let a = self.log_scale + beta.ln();
        let b = other.log_scale + (1.0 - beta).ln();
        let top = a.max(b);
        if top == f64::NEG_INFINITY {
            *self = ScaledMatrix::zeros(self.shape().0, self.shape().1);
            return;
        }
        let wa = (a - top).exp();
        let wb = (b - top).exp();
        let mut raw = if wa > 0.0 {
            self.mantissa.scale(wa)
        } else {
            Matrix::zeros(self.shape().0, self.shape().1)
        };
        if wb > 0.0 {
            raw.axpy(wb, &other.mantissa);
        }
        *self = ScaledMatrix::from_parts(top, raw);
    }

    /// `self − other`, in scaled form.
    pub fn difference(&self, other: &ScaledMatrix) -> ScaledMatrix {
        debug_assert_eq!(self.shape(), other.shape());
        let top = self.log_scale.max(other.log_scale);
        if top == f64::NEG_INFINITY {
            return self.clone();
        }
        let mut raw = self.mantissa.scale((self.log_scale - top).exp());
        raw.axpy(-(other.log_scale - top).exp(), &other.mantissa);
        ScaledMatrix::from_parts(top, raw)
    }

    /// `ln Σ |entries|`; `-∞` for the zero matrix.
    pub fn log_sum_abs(&self) -> f64 {
        if self.is_zero() {
            return f64::NEG_INFINITY;
        }
        self.log_scale + self.mantissa.sum_abs().ln()
    }
}
