//! Normalized steepest descent, normalized momentum descent and Adam
//! without a stability constant, with polynomially decaying step sizes.
//!
//! Momentum is the plain EMA `M ← β₁M + (1−β₁)∇`; Adam has no bias
//! correction. Gradients, momenta and second moments are kept in
//! [`ScaledMatrix`] form so that runs remain meaningful after the loss has
//! dropped below the f64 range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::lmo;
use crate::losses::{evaluate, Dataset, LossEval, LossKind};
use crate::norms::{newton_schulz_orthogonalize, Matrix, NormSpec, ScaledMatrix, DEFAULT_NS_STEPS};

/// `η_t = η₀ / max(t, 1)^a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub eta0: f64,
    pub a: f64,
}

impl Schedule {
    pub fn new(eta0: f64, a: f64) -> Result<Self> {
        let s = Schedule { eta0, a };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::Config(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::Config(format!("schedule exponent a must lie in (0, 1], got {}", self.a)));
        }
        Ok(())
    }

    #[inline]
    pub fn eta(&self, t: u64) -> f64 {
        self.eta0 / (t.max(1) as f64).powf(self.a)
    }
}

/// Which update rule to apply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmKind {
    /// `W ← W − η_t · lmo(∇)`.
    Nsd { spec: NormSpec },
    /// `W ← W − η_t · lmo(M)`. With `use_newton_schulz` the spectral oracle
    /// is replaced by `ns_steps` Newton-Schulz iterations.
    Nmd {
        spec: NormSpec,
        beta1: f64,
        #[serde(default)]
        use_newton_schulz: bool,
        #[serde(default = "default_ns_steps")]
        ns_steps: usize,
    },
    /// `W ← W − η_t · M / (√V + ε)`, entry-wise.
    Adam {
        beta1: f64,
        beta2: f64,
        #[serde(default)]
        epsilon: f64,
    },
}

fn default_ns_steps() -> usize {
    DEFAULT_NS_STEPS
}

impl AlgorithmKind {
    pub fn sign_gd() -> Self {
        AlgorithmKind::Nsd { spec: NormSpec::MAX }
    }

    pub fn ngd() -> Self {
        AlgorithmKind::Nsd { spec: NormSpec::FROBENIUS }
    }

    pub fn spectral_gd() -> Self {
        AlgorithmKind::Nsd { spec: NormSpec::SPECTRAL }
    }

    /// Spectral NMD with an exact SVD oracle.
    pub fn muon(beta1: f64) -> Self {
        AlgorithmKind::Nmd {
            spec: NormSpec::SPECTRAL,
            beta1,
            use_newton_schulz: false,
            ns_steps: DEFAULT_NS_STEPS,
        }
    }

    pub fn nmd(spec: NormSpec, beta1: f64) -> Self {
        AlgorithmKind::Nmd {
            spec,
            beta1,
            use_newton_schulz: false,
            ns_steps: DEFAULT_NS_STEPS,
        }
    }

    pub fn adam(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AlgorithmKind::Adam { beta1, beta2, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        let beta = |name: &str, b: f64| {
            if (0.0..1.0).contains(&b) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")))
            }
        };
        match *self {
            AlgorithmKind::Nsd { spec } => spec.exponent().validate().map(|_| ()),
            AlgorithmKind::Nmd {
                spec,
                beta1,
                use_newton_schulz,
                ns_steps,
            } => {
                spec.exponent().validate()?;
                beta("beta1", beta1)?;
                if use_newton_schulz && spec != NormSpec::SPECTRAL {
                    return Err(Error::Config(format!(
                        "Newton-Schulz orthogonalization needs the sinf geometry, got {spec}"
                    )));
                }
                if use_newton_schulz && ns_steps == 0 {
                    return Err(Error::Config("ns_steps must be at least 1".into()));
                }
                Ok(())
            }
            AlgorithmKind::Adam { beta1, beta2, epsilon } => {
                beta("beta1", beta1)?;
                beta("beta2", beta2)?;
                if !(epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(Error::Config(format!("epsilon must be ≥ 0, got {epsilon}")));
                }
                Ok(())
            }
        }
    }

    pub fn has_momentum(&self) -> bool {
        !matches!(self, AlgorithmKind::Nsd { .. })
    }

    pub fn is_adam(&self) -> bool {
        matches!(self, AlgorithmKind::Adam { .. })
    }

    /// Short human-readable label, e.g. `nsd(ewinf)`.
    pub fn label(&self) -> String {
        match self {
            AlgorithmKind::Nsd { spec } => format!("nsd({spec})"),
            AlgorithmKind::Nmd { spec, beta1, use_newton_schulz, .. } => {
                let ns = if *use_newton_schulz { ",ns" } else { "" };
                format!("nmd({spec},{beta1}{ns})")
            }
            AlgorithmKind::Adam { beta1, beta2, epsilon } => format!("adam({beta1},{beta2},{epsilon})"),
        }
    }
}

/// `α = √(β₂(1−β₁)² / ((1−β₂)(β₂−β₁²)²))`, the bound on `|M/√V|` for Adam
/// with `β₁ ≤ β₂` started from `M = V = 0`. Infinite when `β₂ = β₁²`.
pub fn adam_moment_bound(beta1: f64, beta2: f64) -> f64 {
    let denom = (1.0 - beta2) * (beta2 - beta1 * beta1).powi(2);
    (beta2 * (1.0 - beta1).powi(2) / denom).sqrt()
}

/// Facts about one applied update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Step size that was applied.
    pub eta: f64,
    /// `‖M − ∇‖_sum` for the gradient just folded into the momentum.
    pub mom_gap_sum: Option<f64>,
    /// `max |M/√V|` after the update (Adam only).
    pub adam_ratio_max: Option<f64>,
    /// Set when the gradient vanished and nothing moved.
    pub converged: bool,
}

/// Iterate plus optimizer memory.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    w: Matrix,
    m: ScaledMatrix,
    v: ScaledMatrix,
    t: u64,
    kind: AlgorithmKind,
    schedule: Schedule,
    converged: bool,
}

impl OptimizerState {
    pub fn new(w0: Matrix, kind: AlgorithmKind, schedule: Schedule) -> Result<Self> {
        kind.validate()?;
        schedule.validate()?;
        if !w0.is_finite() {
            return Err(Error::InvalidInput("initial classifier has non-finite entries".into()));
        }
        let (r, c) = w0.shape();
        Ok(OptimizerState {
            w: w0,
            m: ScaledMatrix::zeros(r, c),
            v: ScaledMatrix::zeros(r, c),
            t: 0,
            kind,
            schedule,
            converged: false,
        })
    }

    #[inline]
    pub fn w(&self) -> &Matrix {
        &self.w
    }

    /// First moment, scaled.
    pub fn momentum(&self) -> &ScaledMatrix {
        &self.m
    }

    /// Second moment (Adam), scaled.
    pub fn second_moment(&self) -> &ScaledMatrix {
        &self.v
    }

    #[inline]
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn kind(&self) -> &AlgorithmKind {
        &self.kind
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    /// `max |M/√V|` over entries with `V > 0`; `None` if `V = 0`.
    pub fn adam_ratio_max(&self) -> Option<f64> {
        if self.v.is_zero() || self.m.is_zero() {
            return None;
        }
        let scale = (self.m.log_scale() - 0.5 * self.v.log_scale()).exp();
        let mut best = 0.0f64;
        for (m, v) in self.m.mantissa().as_slice().iter().zip(self.v.mantissa().as_slice()) {
            if *v > 0.0 {
                best = best.max(m.abs() / v.sqrt());
            }
        }
        Some(best * scale)
    }

    /// Applies one update using `eval`, the loss evaluated at the current
    /// iterate. A vanishing gradient leaves the state untouched and marks
    /// it converged.
    pub fn step(&mut self, eval: &LossEval) -> Result<StepReport> {
        if eval.grad.shape() != self.w.shape() {
            return Err(Error::DimensionMismatch(format!(
                "gradient is {:?}, classifier is {:?}",
                eval.grad.shape(),
                self.w.shape()
            )));
        }
        let eta = self.schedule.eta(self.t);
        if self.converged || eval.grad.is_zero() {
            self.converged = true;
            return Ok(StepReport {
                eta,
                mom_gap_sum: None,
                adam_ratio_max: None,
                converged: true,
            });
        }
        let grad = &eval.grad;
        let mut report = StepReport {
            eta,
            mom_gap_sum: None,
            adam_ratio_max: None,
            converged: false,
        };
        match self.kind {
            AlgorithmKind::Nsd { spec } => {
                let dir = lmo(grad.mantissa(), spec)?;
                self.w.axpy(-eta, &dir);
            }
            AlgorithmKind::Nmd {
                spec,
                beta1,
                use_newton_schulz,
                ns_steps,
            } => {
                self.m.ema_update(beta1, grad);
                report.mom_gap_sum = Some(self.m.difference(grad).log_sum_abs().exp());
                if self.m.is_zero() {
                    self.converged = true;
                    report.converged = true;
                    return Ok(report);
                }
                let dir = if use_newton_schulz {
                    newton_schulz_orthogonalize(self.m.mantissa(), ns_steps)?
                } else {
                    lmo(self.m.mantissa(), spec)?
                };
                self.w.axpy(-eta, &dir);
            }
            AlgorithmKind::Adam { beta1, beta2, epsilon } => {
                self.m.ema_update(beta1, grad);
                self.v.ema_update(beta2, &grad.squared());
                report.mom_gap_sum = Some(self.m.difference(grad).log_sum_abs().exp());
                let (rows, cols) = self.w.shape();
                let vm = self.v.mantissa();
                if epsilon == 0.0 {
                    if let Some(idx) = vm.as_slice().iter().position(|v| *v == 0.0) {
                        return Err(Error::DivisionGuard {
                            row: idx / cols,
                            col: idx % cols,
                        });
                    }
                }
                // M/(√V + ε) = e^{λ − κ/2} · m / (√v + ε e^{−κ/2})
                let lambda = self.m.log_scale();
                let kappa = self.v.log_scale();
                let outer = (lambda - 0.5 * kappa).exp();
                let eps = epsilon * (-0.5 * kappa).exp();
                let mm = self.m.mantissa();
                let mut update = Matrix::zeros(rows, cols);
                for ((u, m), v) in update
                    .as_mut_slice()
                    .iter_mut()
                    .zip(mm.as_slice())
                    .zip(vm.as_slice())
                {
                    *u = outer * (m / (v.sqrt() + eps));
                }
                if !update.is_finite() {
                    return Err(Error::NumericalFailure(format!(
                        "Adam update became non-finite at t={}",
                        self.t
                    )));
                }
                self.w.axpy(-eta, &update);
                report.adam_ratio_max = self.adam_ratio_max();
            }
        }
        if !self.w.is_finite() {
            return Err(Error::NumericalFailure(format!("iterate became non-finite at t={}", self.t)));
        }
        self.t += 1;
        Ok(report)
    }
}

/// Which steps get a metrics callback: every step up to `dense_until`,
/// then `per_decade` log-spaced steps per power of ten. The final step is
/// always included by [`run`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cadence {
    pub dense_until: u64,
    pub per_decade: u32,
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence {
            dense_until: 100,
            per_decade: 20,
        }
    }
}

impl Cadence {
    pub const EVERY: Cadence = Cadence {
        dense_until: u64::MAX,
        per_decade: 1,
    };

    pub fn hits(&self, t: u64) -> bool {
        if t <= self.dense_until {
            return true;
        }
        if self.per_decade == 0 {
            return false;
        }
        let pd = self.per_decade as f64;
        let j0 = (pd * (t as f64).log10()).floor() as i64;
        (j0 - 1..=j0 + 1).any(|j| 10f64.powf(j as f64 / pd).round() as u64 == t)
    }
}

/// What a metrics callback sees after step `state.t()`.
pub struct Observation<'a> {
    pub state: &'a OptimizerState,
    /// Loss evaluated at the new iterate.
    pub eval: &'a LossEval,
    pub report: &'a StepReport,
}

/// Runs `steps` updates from `state`, calling `hook` at the cadence and at
/// the last step. Stops early once the gradient vanishes.
pub fn run<F>(
    mut state: OptimizerState,
    data: &Dataset,
    loss: LossKind,
    steps: u64,
    cadence: Cadence,
    mut hook: F,
) -> Result<OptimizerState>
where
    F: FnMut(&Observation<'_>) -> Result<()>,
{
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    data.check_classifier(state.w())?;
    let mut eval = evaluate(loss, state.w(), data)?;
    let target = state.t() + steps;
    while state.t() < target {
        let report = state.step(&eval)?;
        if report.converged {
            break;
        }
        eval = evaluate(loss, state.w(), data)?;
        let t = state.t();
        let zero_next = eval.grad.is_zero();
        if t == target || zero_next || cadence.hits(t) {
            hook(&Observation {
                state: &state,
                eval: &eval,
                report: &report,
            })?;
        }
        if zero_next {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}
