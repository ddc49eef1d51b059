use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::harness::cache::{compute_margins, MarginTable};
use crate::losses::{evaluate, Dataset, LossEval, LossKind};
use crate::margins::{attained_margin, MarginSolverConfig};
use crate::norms::{dual_norm, norm, Matrix, NormSpec};
use crate::optimizers::{adam_moment_bound, AlgorithmKind, OptimizerState, Schedule};

/// A check fails once `lhs − rhs` exceeds this.
pub const VIOLATION_TOLERANCE: f64 = 1e-9;

/// Every inequality the suite samples, as `(name, lhs ≤ rhs)`.
pub const CHECKS: [(&str, &str); 14] = [
    ("norm_ordering", "max|A| <= norm(A) <= sum|A| for entry-wise and Schatten p in {1, 1.5, 2, 3, inf}"),
    ("schatten_monotonicity", "|||A|||_inf <= |||A|||_p <= |||A|||_1"),
    ("sampled_duality", "<A, D> <= dual_norm(A) for random D with norm(D) = 1"),
    ("simplex_quadratic", "sum_c' s_c'(1 - s_c') <= 2(1 - s_c) for s in the simplex"),
    ("hessian_bound", "v'(diag(s) - ss')v <= 4(1 - s_c) norm(vv')"),
    ("gradient_lower", "gamma * G(W) <= dual_norm(grad L(W))"),
    ("gradient_upper", "dual_norm(grad L(W)) <= 2B * G(W)"),
    ("proxy_loss_upper", "G(W) / L(W) <= 1"),
    ("proxy_loss_lower", "1 - n L(W) / 2 <= G(W) / L(W)"),
    ("small_loss_bound", "L(W) <= 2 G(W) when L(W) <= log(2)/n or G(W) <= 1/(2n)"),
    ("small_loss_separation", "every margin term >= 0 when L(W) <= log(2)/n"),
    ("proxy_ratio", "log G(W - psi eta D) - log G(W) <= 2B eta psi max|D|"),
    ("loss_lipschitz", "|L(W) - L(W0)| <= 2B norm(W - W0)"),
    ("pll_self_bound", "G_pll(W) <= L_pll(W)"),
];

/// Extra check on the Adam moments, listed after [`CHECKS`].
pub const ADAM_CHECK: (&str, &str) = ("adam_moment_ratio", "max|M/sqrt(V)| <= alpha(beta1, beta2) along Adam runs");

/// Outcome of one named inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub statement: &'static str,
    pub evaluations: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen; negative means every sample had room.
    pub worst_slack: f64,
}

impl CheckResult {
    fn new((name, statement): (&'static str, &'static str)) -> Self {
        CheckResult {
            name,
            statement,
            evaluations: 0,
            violations: 0,
            worst_slack: f64::NEG_INFINITY,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Multiplies the right-hand side of one check, to confirm the suite can
/// detect a violated bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub check: String,
    pub factor: f64,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Settings for the γ lower bounds used by `gradient_lower`.
    pub solver: MarginSolverConfig,
    pub threads: usize,
    pub perturbation: Option<Perturbation>,
    /// Adam steps per trial.
    pub adam_steps: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            solver: MarginSolverConfig {
                max_iters: 20_000,
                polish: false,
                ..MarginSolverConfig::default()
            },
            threads: 1,
            perturbation: None,
            adam_steps: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub trials: usize,
    pub seed: u64,
    /// Certified lower bounds on γ per tracked spec.
    pub gammas: Vec<(NormSpec, f64)>,
    pub checks: Vec<CheckResult>,
    pub perturbation: Option<Perturbation>,
}

impl VerificationReport {
    /// No trials were run, so nothing was tested.
    pub fn is_vacuous(&self) -> bool {
        self.trials == 0
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed_checks(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trials={} seed={}", self.trials, self.seed)?;
        if let Some(p) = &self.perturbation {
            writeln!(f, "self-test: bound of '{}' multiplied by {}", p.check, p.factor)?;
        }
        for (spec, g) in &self.gammas {
            writeln!(f, "gamma_lower[{spec}] = {g:.9}")?;
        }
        if self.is_vacuous() {
            return writeln!(f, "VACUOUS: no trials requested");
        }
        writeln!(f, "{:<24} {:>6} {:>10} {:>10} {:>14}", "check", "status", "evals", "violations", "worst_slack")?;
        for c in &self.checks {
            let status = if c.passed() { "PASS" } else { "FAIL" };
            let slack = if c.evaluations == 0 {
                "-".to_string()
            } else {
                format!("{:.3e}", c.worst_slack)
            };
            writeln!(
                f,
                "{:<24} {:>6} {:>10} {:>10} {:>14}",
                c.name, status, c.evaluations, c.violations, slack
            )?;
        }
        write!(f, "{}", if self.passed() { "ALL PASS" } else { "FAILED" })
    }
}

struct Recorder {
    results: Vec<CheckResult>,
    perturbation: Option<(usize, f64)>,
}

impl Recorder {
    fn record(&mut self, idx: usize, lhs: f64, rhs: f64) {
        let rhs = match self.perturbation {
            Some((i, factor)) if i == idx => rhs * factor,
            _ => rhs,
        };
        let r = &mut self.results[idx];
        r.evaluations += 1;
        let slack = if lhs.is_nan() || rhs.is_nan() {
            f64::INFINITY
        } else {
            lhs - rhs
        };
        r.worst_slack = r.worst_slack.max(slack);
        if slack > VIOLATION_TOLERANCE {
            r.violations += 1;
        }
    }
}

const NORM_ORDER_P: [f64; 5] = [1.0, 1.5, 2.0, 3.0, f64::INFINITY];

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random point of the simplex, from flat to sharply peaked.
fn simplex_point(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let sharpness = 10f64.powf(rng.random_range(-1.0..1.5));
    let w: Vec<f64> = (0..k).map(|_| Distribution::<f64>::sample(&Exp1, rng).powf(sharpness)).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    }
}

/// Random classifier: either Gaussian at a random scale or a noisy
/// multiple of a separator, which reaches the small-loss regime.
fn sample_classifier(rng: &mut ChaCha8Rng, data: &Dataset, separator: Option<(&Matrix, f64)>) -> Matrix {
    let (k, d) = (data.k(), data.d());
    match separator {
        Some((v, gamma)) if rng.random_bool(0.5) => {
            let target = 10f64.powf(rng.random_range(-1.0..2.5));
            let lambda = target / gamma;
            let noise = gaussian(rng, k, d).scale(0.02 * lambda / ((k * d) as f64).sqrt());
            &v.scale(lambda) + &noise
        }
        _ => gaussian(rng, k, d).scale(10f64.powf(rng.random_range(-2.0..1.0))),
    }
}

fn dual_over_proxy(eval: &LossEval, spec: NormSpec) -> Result<f64> {
    if eval.grad.is_zero() {
        return Ok(0.0);
    }
    Ok(dual_norm(eval.grad.mantissa(), spec)? * (eval.grad.log_scale() - eval.log_proxy).exp())
}

/// Samples random classifiers, directions, simplex points and Adam
/// hyperparameters and checks every inequality in [`CHECKS`] (plus
/// [`ADAM_CHECK`]) `trials` times. Deterministic in `seed`.
pub fn verify_inequalities(data: &Dataset, trials: usize, seed: u64) -> Result<VerificationReport> {
    verify_inequalities_with(data, trials, seed, &VerifyOptions::default())
}

pub fn verify_inequalities_with(
    data: &Dataset,
    trials: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let names: Vec<(&'static str, &'static str)> = CHECKS.iter().copied().chain([ADAM_CHECK]).collect();
    let perturbation = match &opts.perturbation {
        None => None,
        Some(p) => {
            let idx = names
                .iter()
                .position(|(n, _)| *n == p.check)
                .ok_or_else(|| Error::InvalidInput(format!("unknown check '{}'", p.check)))?;
            Some((idx, p.factor))
        }
    };
    let mut rec = Recorder {
        results: names.iter().map(|&n| CheckResult::new(n)).collect(),
        perturbation,
    };
    let specs = NormSpec::TRACKED;
    let mut report = VerificationReport {
        trials,
        seed,
        gammas: Vec::new(),
        checks: Vec::new(),
        perturbation: opts.perturbation.clone(),
    };
    if trials == 0 {
        report.checks = rec.results;
        return Ok(report);
    }

    let margins: MarginTable = compute_margins(data, &specs, &opts.solver, opts.threads)?;
    report.gammas = margins.entries().iter().map(|e| (e.spec, e.gamma)).collect();
    let separator = margins
        .get(NormSpec::FROBENIUS)
        .filter(|e| e.gamma > 0.0)
        .map(|e| (&e.v, e.gamma));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k, d) = (data.n(), data.k(), data.d());
    let nf = n as f64;
    let b = data.data_bound();
    let idx = |name: &str| names.iter().position(|(n, _)| *n == name).expect("known check");
    let [i_order, i_mono, i_dual, i_simplex, i_hess, i_glow, i_gup, i_plu, i_pll, i_small, i_sep, i_ratio, i_lip, i_self, i_adam] =
        [
            "norm_ordering",
            "schatten_monotonicity",
            "sampled_duality",
            "simplex_quadratic",
            "hessian_bound",
            "gradient_lower",
            "gradient_upper",
            "proxy_loss_upper",
            "proxy_loss_lower",
            "small_loss_bound",
            "small_loss_separation",
            "proxy_ratio",
            "loss_lipschitz",
            "pll_self_bound",
            ADAM_CHECK.0,
        ]
        .map(idx);

    for _ in 0..trials {
        // matrix norms on a random shape, scaled so max|A| = 1
        let (r, c) = (rng.random_range(1..=6), rng.random_range(1..=8));
        let a = gaussian(&mut rng, r, c);
        let a = a.scale(1.0 / a.max_abs());
        let (amax, asum) = (a.max_abs(), a.sum_abs());
        for p in NORM_ORDER_P {
            for spec in [NormSpec::entrywise(p)?, NormSpec::schatten(p)?] {
                let v = norm(&a, spec)?;
                rec.record(i_order, amax, v);
                rec.record(i_order, v, asum);
            }
            let sp = norm(&a, NormSpec::schatten(p)?)?;
            rec.record(i_mono, norm(&a, NormSpec::SPECTRAL)?, sp);
            rec.record(i_mono, sp, norm(&a, NormSpec::NUCLEAR)?);
        }
        for p in NORM_ORDER_P {
            for spec in [NormSpec::entrywise(p)?, NormSpec::schatten(p)?] {
                let delta = gaussian(&mut rng, r, c);
                let delta = delta.scale(1.0 / norm(&delta, spec)?);
                rec.record(i_dual, a.dot(&delta), dual_norm(&a, spec)?);
            }
        }

        // simplex and Hessian bounds in the class dimension
        let s = simplex_point(&mut rng, k);
        let spread: f64 = s.iter().map(|x| x * (1.0 - x)).sum();
        let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean: f64 = s.iter().zip(&v).map(|(a, b)| a * b).sum();
        let quad: f64 = s.iter().zip(&v).map(|(a, b)| a * b * b).sum::<f64>() - mean * mean;
        let vvt = Matrix::from_fn(k, k, |i, j| v[i] * v[j]);
        for (ci, &sc) in s.iter().enumerate() {
            rec.record(i_simplex, spread, 2.0 * (1.0 - sc));
            let spec = specs[ci % specs.len()];
            rec.record(i_hess, quad, 4.0 * (1.0 - sc) * norm(&vvt, spec)?);
        }

        // loss and proxy relations at a random classifier
        let w = sample_classifier(&mut rng, data, separator);
        let ce = evaluate(LossKind::CrossEntropy, &w, data)?;
        if ce.log_proxy.is_finite() {
            for (spec, gamma) in &report.gammas {
                let ratio = dual_over_proxy(&ce, *spec)?;
                rec.record(i_glow, *gamma, ratio);
                rec.record(i_gup, ratio, 2.0 * b);
            }
        }
        if ce.loss > 0.0 {
            let ratio = (ce.log_proxy - ce.loss.ln()).exp();
            rec.record(i_plu, ratio, 1.0);
            rec.record(i_pll, 1.0 - nf * ce.loss / 2.0, ratio);
            if ce.loss <= 2f64.ln() / nf || ce.proxy <= 1.0 / (2.0 * nf) {
                rec.record(i_small, 1.0 / ratio, 2.0);
            }
        }
        if ce.loss <= 2f64.ln() / nf {
            rec.record(i_sep, 0.0, attained_margin(&w, data)?);
        }

        let delta_spec = specs[rng.random_range(0..specs.len())];
        let delta = gaussian(&mut rng, k, d);
        let delta = delta.scale(rng.random_range(0.0..1.0) / norm(&delta, delta_spec)?);
        let (psi, eta) = (1.0 - rng.random::<f64>(), 1.0 - rng.random::<f64>());
        let moved = evaluate(LossKind::CrossEntropy, &(&w - &delta.scale(psi * eta)), data)?;
        if ce.log_proxy.is_finite() && moved.log_proxy.is_finite() {
            rec.record(i_ratio, moved.log_proxy - ce.log_proxy, 2.0 * b * eta * psi * delta.max_abs());
        }

        let w0 = sample_classifier(&mut rng, data, separator);
        let l0 = evaluate(LossKind::CrossEntropy, &w0, data)?.loss;
        let diff = &w - &w0;
        for spec in specs {
            let dist = norm(&diff, spec)?;
            if dist > 0.0 {
                rec.record(i_lip, (ce.loss - l0).abs() / dist, 2.0 * b);
            }
        }

        let pll = evaluate(LossKind::PairLogLoss, &w, data)?;
        if pll.loss > 0.0 {
            rec.record(i_self, (pll.log_proxy - pll.loss.ln()).exp(), 1.0);
        }

        adam_trial(&mut rng, data, opts.adam_steps, &mut rec, i_adam)?;
    }
    report.checks = rec.results;
    Ok(report)
}

fn adam_trial(rng: &mut ChaCha8Rng, data: &Dataset, steps: u64, rec: &mut Recorder, idx: usize) -> Result<()> {
    let beta2 = rng.random_range(0.05..0.999);
    let beta1 = rng.random_range(0.0..=beta2);
    let alpha = adam_moment_bound(beta1, beta2);
    let w0 = sample_classifier(rng, data, None);
    let schedule = Schedule::new(10f64.powf(rng.random_range(-3.0..0.0)), 0.5)?;
    let mut state = OptimizerState::new(w0, AlgorithmKind::adam(beta1, beta2, 0.0), schedule)?;
    for _ in 0..steps {
        let eval = evaluate(LossKind::CrossEntropy, state.w(), data)?;
        match state.step(&eval) {
            Ok(report) if report.converged => break,
            Ok(report) => {
                if let Some(ratio) = report.adam_ratio_max {
                    rec.record(idx, ratio, alpha);
                }
            }
            // an exactly vanishing gradient entry violates the Adam
            // initialization assumption; that trial is skipped
            Err(Error::DivisionGuard { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(())
}
