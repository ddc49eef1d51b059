//! Steepest-descent directions and Euclidean projections onto norm balls.

use crate::error::{Error, Result};
use crate::norms::{
    norm, svd, vector_norm, Exponent, Matrix, NormFamily, NormSpec, DEFAULT_RANK_TOL,
};

/// Linear maximization oracle: `argmax_{norm(Δ, spec) ≤ 1} ⟨G, Δ⟩`.
///
/// Ties at `p = 1` go to the lowest (row, col) index; at `p = ∞` entries with
/// `G = 0` get a zero sign. Schatten geometries always use an exact
/// truncated SVD.
pub fn lmo(g: &Matrix, spec: NormSpec) -> Result<Matrix> {
    if g.is_zero() {
        return Err(Error::ZeroGradient);
    }
    // Every oracle below is invariant to positive rescaling of G.
    let g = &g.scale(1.0 / g.max_abs());
    let p = spec.exponent();
    match spec.family() {
        NormFamily::Entrywise => Ok(match p {
            Exponent::Infinity => g.map(sign),
            _ if p.is_one() => {
                let (mut best, mut idx) = (0.0f64, 0usize);
                for (i, v) in g.as_slice().iter().enumerate() {
                    if v.abs() > best {
                        best = v.abs();
                        idx = i;
                    }
                }
                let mut out = Matrix::zeros(g.rows(), g.cols());
                out.as_mut_slice()[idx] = sign(g.as_slice()[idx]);
                out
            }
            _ if p.is_two() => g.scale(1.0 / g.frobenius()),
            Exponent::Finite(p) => {
                let q = p / (p - 1.0);
                let scale = vector_norm(g.as_slice(), Exponent::Finite(q))?.powf(q - 1.0);
                g.map(|v| sign(v) * v.abs().powf(q - 1.0) / scale)
            }
        }),
        NormFamily::Schatten => {
            if p.is_two() {
                return Ok(g.scale(1.0 / g.frobenius()));
            }
            let f = svd(g, DEFAULT_RANK_TOL)?;
            let weights: Vec<f64> = match p {
                Exponent::Infinity => vec![1.0; f.rank()],
                _ if p.is_one() => {
                    let mut w = vec![0.0; f.rank()];
                    w[0] = 1.0;
                    w
                }
                Exponent::Finite(p) => {
                    let q = p / (p - 1.0);
                    let scale = vector_norm(&f.sigma, Exponent::Finite(q))?.powf(q - 1.0);
                    f.sigma.iter().map(|s| s.powf(q - 1.0) / scale).collect()
                }
            };
            Ok(f.recompose_with(&weights))
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Frobenius-nearest point of `{X : norm(X, spec) ≤ radius}`.
///
/// Supported for `p ∈ {1, 2, ∞}` in both families.
pub fn project_ball(a: &Matrix, spec: NormSpec, radius: f64) -> Result<Matrix> {
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!("ball radius {radius} must be positive")));
    }
    let p = spec.exponent();
    if !(p.is_one() || p.is_two() || p.is_infinite()) {
        return Err(Error::UnsupportedProjection(spec.tag()));
    }
    if p.is_two() {
        let f = a.frobenius();
        return Ok(if f <= radius { a.clone() } else { a.scale(radius / f) });
    }
    match spec.family() {
        NormFamily::Entrywise => {
            if p.is_infinite() {
                Ok(a.map(|v| v.clamp(-radius, radius)))
            } else {
                let mut out = a.clone();
                project_l1_in_place(out.as_mut_slice(), radius);
                Ok(out)
            }
        }
        NormFamily::Schatten => {
            if norm(a, spec)? <= radius {
                return Ok(a.clone());
            }
            let f = svd(a, 0.0)?;
            let target: Vec<f64> = if p.is_infinite() {
                f.sigma.iter().map(|s| s.min(radius)).collect()
            } else {
                let mut t = f.sigma.clone();
                project_l1_in_place(&mut t, radius);
                t
            };
            // Subtract only the removed spectrum so discarded directions
            // are left untouched.
            let removed: Vec<f64> = f.sigma.iter().zip(&target).map(|(s, t)| s - t).collect();
            let mut out = a.clone();
            out -= &f.recompose_with(&removed);
            Ok(out)
        }
    }
}

/// Euclidean projection onto the ℓ1 ball by sorting magnitudes.
fn project_l1_in_place(v: &mut [f64], radius: f64) {
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    if total <= radius {
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumulative += m;
        let candidate = (cumulative - radius) / (j as f64 + 1.0);
        if m > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::dual_norm;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn specs() -> Vec<NormSpec> {
        ["ew1", "ew1.5", "ew2", "ew3", "ewinf", "s1", "s1.5", "s2", "s3", "sinf"]
            .iter()
            .map(|t| t.parse().unwrap())
            .collect()
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn sign_rule_with_zero_tie() {
        let g = Matrix::from_rows(&[[2.0, 0.0], [0.0, -1.0]]).unwrap();
        let d = lmo(&g, NormSpec::MAX).unwrap();
        assert_eq!(d, Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]).unwrap());
        assert_eq!(g.dot(&d), 3.0);
    }

    #[test]
    fn spectral_and_nuclear_oracles() {
        let g = Matrix::from_diag(&[3.0, 1.0]);
        let d = lmo(&g, NormSpec::SPECTRAL).unwrap();
        assert!(d.max_abs_diff(&Matrix::identity(2)) < 1e-14);
        assert!((g.dot(&d) - 4.0).abs() < 1e-14);
        let d = lmo(&g, NormSpec::NUCLEAR).unwrap();
        assert!(d.max_abs_diff(&Matrix::from_diag(&[1.0, 0.0])) < 1e-14);
        assert!((g.dot(&d) - dual_norm(&g, NormSpec::NUCLEAR).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn coordinate_descent_tie_break() {
        let g = Matrix::from_rows(&[[1.0, -3.0], [3.0, 0.0]]).unwrap();
        let d = lmo(&g, NormSpec::SUM).unwrap();
        assert_eq!(d, Matrix::from_rows(&[[0.0, -1.0], [0.0, 0.0]]).unwrap());
    }

    #[test]
    fn zero_gradient_is_signalled() {
        assert!(matches!(
            lmo(&Matrix::zeros(2, 2), NormSpec::FROBENIUS),
            Err(Error::ZeroGradient)
        ));
    }

    #[test]
    fn duality_and_feasibility_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (r, c) = (rng.random_range(1..7), rng.random_range(1..7));
            let g = random(r, c, &mut rng);
            for spec in specs() {
                let d = lmo(&g, spec).unwrap();
                let dual = dual_norm(&g, spec).unwrap();
                assert!((g.dot(&d) - dual).abs() <= 1e-8 * dual, "{spec}");
                assert!(norm(&d, spec).unwrap() <= 1.0 + 1e-9, "{spec}");
            }
        }
    }

    #[test]
    fn sampled_unit_ball_never_beats_the_dual_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random(4, 5, &mut rng);
        for spec in specs() {
            let dual = dual_norm(&g, spec).unwrap();
            for _ in 0..200 {
                let x = random(4, 5, &mut rng);
                let x = x.scale(1.0 / norm(&x, spec).unwrap());
                assert!(g.dot(&x) <= dual * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn projection_examples() {
        let a = Matrix::from_rows(&[[3.0, -3.0]]).unwrap();
        assert_eq!(
            project_ball(&a, NormSpec::MAX, 1.0).unwrap(),
            Matrix::from_rows(&[[1.0, -1.0]]).unwrap()
        );
        let inside = Matrix::from_rows(&[[0.1, -0.2], [0.05, 0.0]]).unwrap();
        for spec in NormSpec::TRACKED {
            assert_eq!(project_ball(&inside, spec, 1.0).unwrap(), inside);
        }
        assert!(matches!(
            project_ball(&a, NormSpec::entrywise(3.0).unwrap(), 1.0),
            Err(Error::UnsupportedProjection(_))
        ));
    }

    #[test]
    fn spectral_projection_is_nearest_among_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(3, 4, &mut rng).scale(2.0);
        let p = project_ball(&a, NormSpec::SPECTRAL, 1.0).unwrap();
        assert!(norm(&p, NormSpec::SPECTRAL).unwrap() <= 1.0 + 1e-9);
        let best = (&p - &a).frobenius();
        for _ in 0..100 {
            let x = random(3, 4, &mut rng);
            let x = x.scale(rng.random_range(0.0..1.0) / norm(&x, NormSpec::SPECTRAL).unwrap());
            assert!(best <= (&x - &a).frobenius() + 1e-12);
        }
    }

    #[test]
    fn l1_projections_land_on_the_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = random(3, 3, &mut rng).scale(3.0);
            for spec in [NormSpec::SUM, NormSpec::NUCLEAR] {
                let p = project_ball(&a, spec, 1.0).unwrap();
                assert!((norm(&p, spec).unwrap() - 1.0).abs() < 1e-9, "{spec}");
            }
        }
    }

    proptest! {
        #[test]
        fn projections_are_non_expansive(
            a in prop::collection::vec(-4.0f64..4.0, 6),
            b in prop::collection::vec(-4.0f64..4.0, 6),
            which in 0usize..5,
        ) {
            let spec = NormSpec::TRACKED[which];
            let a = Matrix::from_vec(2, 3, a).unwrap();
            let b = Matrix::from_vec(2, 3, b).unwrap();
            let pa = project_ball(&a, spec, 1.0).unwrap();
            let pb = project_ball(&b, spec, 1.0).unwrap();
            prop_assert!((&pa - &pb).frobenius() <= (&a - &b).frobenius() + 1e-9);
        }

        #[test]
        fn lmo_is_deterministic_for_strictly_convex_norms(
            v in prop::collection::vec(-4.0f64..4.0, 12), p in 1.1f64..8.0, schatten in any::<bool>()
        ) {
            let g = Matrix::from_vec(3, 4, v).unwrap();
            prop_assume!(!g.is_zero());
            let spec = if schatten { NormSpec::schatten(p) } else { NormSpec::entrywise(p) }.unwrap();
            let a = lmo(&g, spec).unwrap();
            let b = lmo(&g, spec).unwrap();
            prop_assert_eq!(a.as_slice(), b.as_slice());
        }
    }
}
