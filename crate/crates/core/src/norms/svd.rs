//! One-sided (Hestenes) Jacobi SVD.
//!
//! The thinner dimension is orthogonalized: for a k×d matrix with k ≤ d we
//! rotate the k columns of Aᵀ, otherwise the d columns of A. Column pairs
//! are visited in a fixed cyclic order, so results are deterministic.

use crate::error::{Error, Result};
use crate::norms::matrix::{dot_slices, Matrix};

/// Default relative threshold below which singular values are truncated.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;
/// Maximum number of full Jacobi sweeps.
pub const MAX_SWEEPS: usize = 60;

/// Thin SVD `A = U · diag(sigma) · Vt` truncated to the numerical rank.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// k×r, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, all above the truncation threshold.
    pub sigma: Vec<f64>,
    /// r×d, orthonormal rows.
    pub vt: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U · diag(weights) · Vt` for an arbitrary weight per retained triple.
    pub fn recompose_with(&self, weights: &[f64]) -> Matrix {
        assert_eq!(weights.len(), self.rank());
        let (k, d) = (self.u.rows(), self.vt.cols());
        let mut out = Matrix::zeros(k, d);
        for (r, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let v_row = self.vt.row(r);
            for i in 0..k {
                let coeff = w * self.u[(i, r)];
                if coeff == 0.0 {
                    continue;
                }
                for (o, &v) in out.row_mut(i).iter_mut().zip(v_row) {
                    *o += coeff * v;
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.recompose_with(&self.sigma)
    }
}

/// Columns of the matrix being orthogonalized plus accumulated rotations.
struct JacobiOutput {
    cols: Vec<Vec<f64>>,
    rotations: Option<Vec<Vec<f64>>>,
}

fn jacobi_orthogonalize(mut cols: Vec<Vec<f64>>, accumulate: bool) -> Result<JacobiOutput> {
    let n = cols.len();
    let m = cols.first().map_or(0, Vec::len);
    let mut rot: Option<Vec<Vec<f64>>> = accumulate.then(|| {
        (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                e
            })
            .collect()
    });
    let tol = f64::EPSILON * (m.max(1) as f64);
    let mut norms: Vec<f64> = cols.iter().map(|c| dot_slices(c, c)).collect();
    // columns below round-off of the whole matrix carry no signal; rotating
    // them against the rest never settles on rank-deficient input
    let floor = (f64::EPSILON * f64::EPSILON) * norms.iter().sum::<f64>();

    for sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= floor || beta <= floor {
                    continue;
                }
                let gamma = dot_slices(&cols[p], &cols[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                if let Some(r) = rot.as_mut() {
                    rotate_pair(r, p, q, c, s);
                }
                norms[p] = dot_slices(&cols[p], &cols[p]);
                norms[q] = dot_slices(&cols[q], &cols[q]);
            }
        }
        if !rotated {
            return Ok(JacobiOutput {
                cols,
                rotations: rot,
            });
        }
        if cols.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "Jacobi SVD produced non-finite values in sweep {sweep}"
            )));
        }
    }
    let off = max_off_diagonal(&cols);
    Err(Error::NumericalFailure(format!(
        "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps on a {m}x{n} problem \
         (largest relative column coupling {off:.3e})"
    )))
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let xp = &mut left[p];
    let xq = &mut right[0];
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (u, v) = (*a, *b);
        *a = c * u - s * v;
        *b = s * u + c * v;
    }
}

fn max_off_diagonal(cols: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for p in 0..cols.len() {
        for q in (p + 1)..cols.len() {
            let a = dot_slices(&cols[p], &cols[p]);
            let b = dot_slices(&cols[q], &cols[q]);
            if a > 0.0 && b > 0.0 {
                worst = worst.max(dot_slices(&cols[p], &cols[q]).abs() / (a * b).sqrt());
            }
        }
    }
    worst
}

/// Column vectors of the thin side: columns of Aᵀ when k ≤ d, else of A.
fn thin_columns(a: &Matrix) -> (Vec<Vec<f64>>, bool) {
    let (k, d) = a.shape();
    if k <= d {
        ((0..k).map(|i| a.row(i).to_vec()).collect(), true)
    } else {
        ((0..d).map(|j| a.column(j)).collect(), false)
    }
}

/// Prescaling keeps squared column norms inside the f64 range.
fn prescale(a: &Matrix) -> (Matrix, f64) {
    let m = a.max_abs();
    if m == 0.0 || (1e-100..=1e100).contains(&m) {
        (a.clone(), 1.0)
    } else {
        (a.scale(1.0 / m), m)
    }
}

/// All `min(k, d)` singular values in non-increasing order (zeros included).
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    if a.rows() == 1 || a.cols() == 1 {
        return Ok(vec![a.frobenius()]);
    }
    let (scaled, factor) = prescale(a);
    let (cols, _) = thin_columns(&scaled);
    let out = jacobi_orthogonalize(cols, false)?;
    let mut sv: Vec<f64> = out
        .cols
        .iter()
        .map(|c| dot_slices(c, c).sqrt() * factor)
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

/// Truncated thin SVD. Singular values `≤ rank_tol · σ_max` are dropped.
///
/// Each left singular vector is signed so that its largest-magnitude entry
/// is positive (first such entry on ties).
pub fn svd(a: &Matrix, rank_tol: f64) -> Result<SvdFactors> {
    if a.is_zero() {
        return Err(Error::DegenerateInput("SVD of the zero matrix".into()));
    }
    let (k, d) = a.shape();
    let (scaled, factor) = prescale(a);
    let (cols, transposed) = thin_columns(&scaled);
    let out = jacobi_orthogonalize(cols, true)?;
    let rotations = out.rotations.expect("rotations were accumulated");

    let mut triples: Vec<(f64, usize)> = out
        .cols
        .iter()
        .enumerate()
        .map(|(j, c)| (dot_slices(c, c).sqrt(), j))
        .collect();
    triples.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let sigma_max = triples[0].0;
    triples.retain(|&(s, _)| s > rank_tol * sigma_max && s > 0.0);
    let r = triples.len();

    let mut u = Matrix::zeros(k, r);
    let mut vt = Matrix::zeros(r, d);
    let mut sigma = Vec::with_capacity(r);
    for (slot, &(s, j)) in triples.iter().enumerate() {
        let normalized: Vec<f64> = out.cols[j].iter().map(|v| v / s).collect();
        let rotation = &rotations[j];
        // Columns orthogonalized = rows of A (transposed) or columns of A.
        let (left, right): (&[f64], &[f64]) = if transposed {
            (rotation, &normalized)
        } else {
            (&normalized, rotation)
        };
        let pivot = left
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, &v)| {
                if v.abs() > best.1.abs() {
                    (i, v)
                } else {
                    best
                }
            })
            .1;
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..k {
            u[(i, slot)] = sign * left[i];
        }
        for (c, &v) in right.iter().enumerate() {
            vt[(slot, c)] = sign * v;
        }
        sigma.push(s * factor);
    }
    Ok(SvdFactors { u, sigma, vt })
}
