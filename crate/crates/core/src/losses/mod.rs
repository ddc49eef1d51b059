//! Multiclass losses, their gradients and the proxy functions that track
//! them.
//!
//! For cross-entropy the proxy is `G(W) = (1/n) Σ_i (1 − s_{i,y_i})` with
//! `s_i = softmax(W h_i)`. It splits per class two ways:
//! `G_c` groups the terms by true class, `Q_c = (1/n) Σ_{i: y_i ≠ c} s_ic`
//! by competing class, and both families sum to `G`.
//!
//! The exponential loss is its own proxy. For PairLogLoss the proxy is the
//! sum of `|f'|` over all (datapoint, competing class) pairs, `f` the
//! logistic loss. For these two losses the per-class fields group the same
//! `|ℓ'|` terms by true class (`g`) and by competing class (`q`). That
//! grouping mirrors cross-entropy; it is an extension, not a derived result.

mod dataset;

pub use dataset::Dataset;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::{log_sum_exp, softplus, Matrix, ScaledMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Exponential,
    PairLogLoss,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "exponential" | "exp" => Ok(LossKind::Exponential),
            "pair_log_loss" | "pll" => Ok(LossKind::PairLogLoss),
            other => Err(Error::InvalidInput(format!("unknown loss '{other}'"))),
        }
    }
}

/// Loss, gradient and proxies at one classifier.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub kind: LossKind,
    pub loss: f64,
    /// Gradient in scaled form; see [`ScaledMatrix`].
    pub grad: ScaledMatrix,
    pub proxy: f64,
    /// `log G(W)`, finite even when `proxy` underflows.
    pub log_proxy: f64,
    pub per_class_g: Vec<f64>,
    pub per_class_q: Vec<f64>,
}

impl LossEval {
    /// The gradient as plain f64 entries.
    pub fn gradient(&self) -> Matrix {
        self.grad.to_matrix()
    }
}

/// One logit gap `(e_{y_i} − e_c)ᵀ W h_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginTerm {
    pub i: usize,
    pub c: usize,
    pub value: f64,
}

/// All `n·(k−1)` logit gaps, ordered by datapoint then class.
pub fn margin_terms(w: &Matrix, data: &Dataset) -> Result<Vec<MarginTerm>> {
    let logits = data.logits(w)?;
    let mut out = Vec::with_capacity(data.n() * (data.k() - 1));
    for (i, &y) in data.labels().iter().enumerate() {
        let row = logits.row(i);
        for (c, &l) in row.iter().enumerate() {
            if c != y {
                out.push(MarginTerm {
                    i,
                    c,
                    value: row[y] - l,
                });
            }
        }
    }
    Ok(out)
}

/// Evaluates loss, analytic gradient and proxies for `kind`.
pub fn evaluate(kind: LossKind, w: &Matrix, data: &Dataset) -> Result<LossEval> {
    let logits = data.logits(w)?;
    if !logits.is_finite() {
        return Err(Error::NumericalFailure("non-finite logits".into()));
    }
    let (n, k) = (data.n(), data.k());

    // Per datapoint: loss term, log of its proxy term, and the gradient
    // coefficient of every class relative to a per-point log offset.
    let mut losses = Vec::with_capacity(n);
    let mut log_terms = Vec::with_capacity(n);
    let mut coeffs = Matrix::zeros(n, k);
    let mut log_offsets = Vec::with_capacity(n);
    let mut per_class_g = vec![0.0; k];
    let mut per_class_q = vec![0.0; k];
    let inv_n = 1.0 / n as f64;

    for (i, &y) in data.labels().iter().enumerate() {
        let row = logits.row(i);
        let coeff_row = coeffs.row_mut(i);
        match kind {
            LossKind::CrossEntropy => {
                let others: Vec<f64> = (0..k).filter(|&c| c != y).map(|c| row[c]).collect();
                let z = log_sum_exp(&others) - row[y];
                let log_term = -softplus(-z);
                let lse_all = row[y] + softplus(z);
                losses.push(softplus(z));
                log_terms.push(log_term);
                // coefficients relative to exp(log_term)
                for c in 0..k {
                    coeff_row[c] = if c == y {
                        -1.0
                    } else {
                        (row[c] - lse_all - log_term).exp()
                    };
                }
                log_offsets.push(log_term);
                per_class_g[y] += log_term.exp() * inv_n;
                for c in (0..k).filter(|&c| c != y) {
                    per_class_q[c] += (row[c] - lse_all).exp() * inv_n;
                }
            }
            LossKind::Exponential | LossKind::PairLogLoss => {
                // log |ℓ'(m_ic)| for every competing class
                let logs: Vec<(usize, f64)> = (0..k)
                    .filter(|&c| c != y)
                    .map(|c| {
                        let m = row[y] - row[c];
                        let l = match kind {
                            LossKind::Exponential => -m,
                            _ => -softplus(m),
                        };
                        (c, l)
                    })
                    .collect();
                let values: Vec<f64> = logs.iter().map(|&(_, l)| l).collect();
                let log_term = log_sum_exp(&values);
                let loss_i: f64 = match kind {
                    LossKind::Exponential => {
                        let v = log_term.exp();
                        if !v.is_finite() {
                            return Err(Error::NumericalFailure(format!(
                                "exponential loss overflows at datapoint {i}"
                            )));
                        }
                        v
                    }
                    _ => (0..k)
                        .filter(|&c| c != y)
                        .map(|c| softplus(row[c] - row[y]))
                        .sum(),
                };
                losses.push(loss_i);
                log_terms.push(log_term);
                log_offsets.push(log_term);
                coeff_row[y] = -1.0;
                for &(c, l) in &logs {
                    coeff_row[c] = (l - log_term).exp();
                    per_class_q[c] += l.exp() * inv_n;
                }
                per_class_g[y] += log_term.exp() * inv_n;
            }
        }
    }

    let loss = losses.iter().sum::<f64>() * inv_n;
    if !loss.is_finite() {
        return Err(Error::NumericalFailure("loss is not finite".into()));
    }
    let log_proxy = log_sum_exp(&log_terms) - (n as f64).ln();
    let proxy = log_terms.iter().map(|l| l.exp()).sum::<f64>() * inv_n;

    // ∇ = (1/n) Σ_i exp(offset_i) · coeff_i h_iᵀ, accumulated relative to
    // the largest offset so the mantissa never underflows wholesale.
    let top = log_offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut raw = Matrix::zeros(k, data.d());
    for i in 0..n {
        let weight = (log_offsets[i] - top).exp() * inv_n;
        if weight == 0.0 {
            continue;
        }
        let h = data.point(i);
        for c in 0..k {
            let a = weight * coeffs[(i, c)];
            if a == 0.0 {
                continue;
            }
            for (g, &x) in raw.row_mut(c).iter_mut().zip(h) {
                *g += a * x;
            }
        }
    }
    let grad = ScaledMatrix::from_parts(top, raw);

    Ok(LossEval {
        kind,
        loss,
        grad,
        proxy,
        log_proxy,
        per_class_g,
        per_class_q,
    })
}

/// Loss value only; cheaper than [`evaluate`].
pub fn loss_value(kind: LossKind, w: &Matrix, data: &Dataset) -> Result<f64> {
    Ok(evaluate(kind, w, data)?.loss)
}
