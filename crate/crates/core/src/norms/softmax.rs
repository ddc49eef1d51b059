use crate::norms::matrix::Matrix;

/// `log Σ exp(v)` with max-subtraction.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + e^{-x})`, accurate in both tails.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax onto the probability simplex, shift-invariant by construction.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `diag(S(v)) − S(v)S(v)ᵀ`.
pub fn softmax_jacobian(v: &[f64]) -> Matrix {
    let s = softmax(v);
    let k = s.len();
    Matrix::from_fn(k, k, |i, j| {
        let diag = if i == j { s[i] } else { 0.0 };
        diag - s[i] * s[j]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_and_known_values() {
        let s = softmax(&[0.0, 0.0, 0.0]);
        assert!(s.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let s = softmax(&[2f64.ln(), 0.0]);
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15 && (s[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let s = softmax(&[1000.0, 0.0]);
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] < 1e-300);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn jacobian_two_class_at_origin() {
        let j = softmax_jacobian(&[0.0, 0.0]);
        let expected = Matrix::from_rows(&[[0.25, -0.25], [-0.25, 0.25]]).unwrap();
        assert!(j.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let v = [0.3, -1.2, 2.0, 0.7];
        let j = softmax_jacobian(&v);
        let h = 1e-6;
        for c in 0..v.len() {
            let mut plus = v;
            let mut minus = v;
            plus[c] += h;
            minus[c] -= h;
            let (sp, sm) = (softmax(&plus), softmax(&minus));
            for r in 0..v.len() {
                let fd = (sp[r] - sm[r]) / (2.0 * h);
                assert!((fd - j[(r, c)]).abs() < 1e-6, "entry ({r},{c})");
            }
        }
    }

    #[test]
    fn tails_are_accurate() {
        assert!((softplus(-800.0) - (-800f64).exp()).abs() == 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((sigmoid(-40.0) - (-40f64).exp() / (1.0 + (-40f64).exp())).abs() < 1e-30);
    }

    proptest! {
        #[test]
        fn softmax_simplex_and_shift_invariance(
            v in prop::collection::vec(-50.0f64..50.0, 1..8),
            shift in -100.0f64..100.0,
        ) {
            let s = softmax(&v);
            prop_assert!(s.iter().all(|&x| x >= 0.0));
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let s2 = softmax(&shifted);
            for (a, b) in s.iter().zip(&s2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn jacobian_rows_sum_to_zero_and_psd(v in prop::collection::vec(-10.0f64..10.0, 2..6),
                                             x in prop::collection::vec(-1.0f64..1.0, 6)) {
            let j = softmax_jacobian(&v);
            let k = v.len();
            for r in 0..k {
                prop_assert!(j.row(r).iter().sum::<f64>().abs() < 1e-12);
                for c in 0..k {
                    prop_assert_eq!(j[(r, c)], j[(c, r)]);
                }
            }
            let quad: f64 = (0..k).flat_map(|r| (0..k).map(move |c| (r, c)))
                .map(|(r, c)| x[r] * j[(r, c)] * x[c]).sum();
            prop_assert!(quad >= -1e-15);
        }
    }
}
