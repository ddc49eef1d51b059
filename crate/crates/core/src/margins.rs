//! Attained and normalized margins, the max-margin problem per norm and an
//! exhaustive oracle for tiny instances.
//!
//! The data margin is
//! `γ = max_{norm(W) ≤ 1} min_{i, c ≠ y_i} (e_{y_i} − e_c)ᵀ W h_i`.
//! By minimax duality it also equals `min_r dual_norm(Σ_j r_j A_j)` over
//! the probability simplex, with `A_j = (e_{y_i} − e_c) h_iᵀ`. Any weights
//! `r` therefore certify an upper bound, while any feasible `W` certifies a
//! lower bound; the solver reports both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::project_ball;
use crate::losses::Dataset;
use crate::norms::{dot_slices, dual_norm, norm, vector_norm, Exponent, Matrix, NormFamily, NormSpec};

/// `min_{i, c ≠ y_i} (e_{y_i} − e_c)ᵀ W h_i`; negative while `W` still
/// misclassifies something.
pub fn attained_margin(w: &Matrix, data: &Dataset) -> Result<f64> {
    let logits = data.logits(w)?;
    let mut best = f64::INFINITY;
    for (i, &y) in data.labels().iter().enumerate() {
        let row = logits.row(i);
        for (c, &l) in row.iter().enumerate() {
            if c != y {
                best = best.min(row[y] - l);
            }
        }
    }
    Ok(best)
}

/// `attained_margin(W) / norm(W, spec)`.
pub fn normalized_margin(w: &Matrix, data: &Dataset, spec: NormSpec) -> Result<f64> {
    if w.is_zero() {
        return Err(Error::DegenerateInput("normalized margin of the zero classifier".into()));
    }
    Ok(attained_margin(w, data)? / norm(w, spec)?)
}

/// `γ − attained_margin(W) / norm(W, spec)`.
pub fn margin_gap(w: &Matrix, data: &Dataset, spec: NormSpec, gamma: f64) -> Result<f64> {
    if w.is_zero() {
        return Err(Error::DegenerateInput("margin gap is undefined at W = 0".into()));
    }
    Ok(gamma - normalized_margin(w, data, spec)?)
}

/// Cosine similarity under the trace inner product.
pub fn correlation(w: &Matrix, v: &Matrix) -> Result<f64> {
    w.check_same_shape(v, "correlation")?;
    if w.is_zero() || v.is_zero() {
        return Err(Error::DegenerateInput("correlation with a zero matrix".into()));
    }
    let (sw, sv) = (w.max_abs(), v.max_abs());
    let (w, v) = (w.scale(1.0 / sw), v.scale(1.0 / sv));
    Ok((w.dot(&v) / (w.frobenius() * v.frobenius())).clamp(-1.0, 1.0))
}

/// Settings for [`data_margin`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginSolverConfig {
    /// Subgradient iterations.
    pub max_iters: usize,
    /// Initial step; `None` uses `0.5 / (√2 · max_i ‖h_i‖₂)`.
    pub rho0: Option<f64>,
    /// Subgradient ascent stops once the best value improved by less than
    /// `stall_tol` over `stall_window` iterations.
    pub stall_window: usize,
    pub stall_tol: f64,
    /// Refine with restarted primal-dual iterations.
    pub polish: bool,
    /// Subgradient iterations when refinement follows (it only needs a
    /// warm start).
    pub warm_start_iters: usize,
    pub polish_max_iters: usize,
    /// Polishing stops once the certified gap falls below
    /// `tolerance · max(γ, scale)`.
    pub tolerance: f64,
}

impl Default for MarginSolverConfig {
    fn default() -> Self {
        MarginSolverConfig {
            max_iters: 200_000,
            rho0: None,
            stall_window: 10_000,
            stall_tol: 1e-6,
            polish: true,
            warm_start_iters: 2_000,
            polish_max_iters: 300_000,
            tolerance: 1e-8,
        }
    }
}

impl MarginSolverConfig {
    /// Cheap pass used to screen generated data for separability.
    pub fn quick() -> Self {
        MarginSolverConfig {
            max_iters: 10_000,
            polish: false,
            ..Self::default()
        }
    }
}

/// Result of [`data_margin`].
#[derive(Clone, Debug, PartialEq)]
pub struct MarginSolution {
    /// Best certified lower bound on γ, attained by `v`.
    pub gamma: f64,
    /// Maximizer, `norm(v, spec) ≤ 1`.
    pub v: Matrix,
    pub spec: NormSpec,
    pub iterations: usize,
    /// Smallest dual bound found; `γ ≤ upper_bound`.
    pub upper_bound: f64,
    /// `upper_bound − gamma`.
    pub duality_gap_estimate: f64,
    pub separable: bool,
    /// Best-so-far value, sampled along the run.
    pub history: Vec<f64>,
}

/// The (datapoint, competing class) pairs of a dataset, flattened.
struct PairSystem<'a> {
    data: &'a Dataset,
    pairs: usize,
}

impl<'a> PairSystem<'a> {
    fn new(data: &'a Dataset) -> Self {
        PairSystem {
            data,
            pairs: data.n() * (data.k() - 1),
        }
    }

    /// Margins of every pair, ordered by datapoint then class.
    fn margins(&self, w: &Matrix, out: &mut Vec<f64>) {
        out.clear();
        let k = self.data.k();
        for (i, &y) in self.data.labels().iter().enumerate() {
            let h = self.data.point(i);
            let ly = dot_slices(w.row(y), h);
            for c in 0..k {
                if c != y {
                    out.push(ly - dot_slices(w.row(c), h));
                }
            }
        }
    }

    /// `Σ_j r_j A_j`.
    fn combine(&self, r: &[f64]) -> Matrix {
        let (k, d) = (self.data.k(), self.data.d());
        let mut g = Matrix::zeros(k, d);
        let mut j = 0;
        let mut coef = vec![0.0; k];
        for (i, &y) in self.data.labels().iter().enumerate() {
            coef.iter_mut().for_each(|c| *c = 0.0);
            for c in 0..k {
                if c != y {
                    coef[y] += r[j];
                    coef[c] -= r[j];
                    j += 1;
                }
            }
            let h = self.data.point(i);
            for (c, &a) in coef.iter().enumerate() {
                if a != 0.0 {
                    for (g, &hv) in g.row_mut(c).iter_mut().zip(h) {
                        *g += a * hv;
                    }
                }
            }
        }
        g
    }
}

/// Lower bound certified by a feasible point: its margin divided by
/// `max(1, norm)` so rounding in the projection never inflates it.
fn certified_value(sys: &PairSystem<'_>, w: &Matrix, spec: NormSpec, buf: &mut Vec<f64>) -> Result<f64> {
    sys.margins(w, buf);
    let m = buf.iter().copied().fold(f64::INFINITY, f64::min);
    let nrm = norm(w, spec)?;
    Ok(if nrm > 1.0 { m / nrm } else { m })
}

/// Max-margin classifier under `spec`.
///
/// Projected subgradient ascent with steps `ρ₀/√s`, averaging the
/// subgradients of all pairs within 1e-12 of the minimum. Unless disabled,
/// a restarted primal-dual refinement then drives the certified duality
/// gap below the configured tolerance.
pub fn data_margin(data: &Dataset, spec: NormSpec, cfg: &MarginSolverConfig) -> Result<MarginSolution> {
    let p = spec.exponent().validate()?;
    if !(p.is_one() || p.is_two() || p.is_infinite()) {
        return Err(Error::UnsupportedProjection(spec.tag()));
    }
    let sys = PairSystem::new(data);
    let (k, d) = (data.k(), data.d());
    let scale = std::f64::consts::SQRT_2 * data.max_l2_row_norm();
    let rho0 = cfg.rho0.unwrap_or(0.5 / scale);
    if !(rho0 > 0.0) {
        return Err(Error::Config(format!("rho0 must be positive, got {rho0}")));
    }

    let mut buf = Vec::with_capacity(sys.pairs);
    let mut w = Matrix::zeros(k, d);
    let mut best_w = w.clone();
    let mut best = certified_value(&sys, &w, spec, &mut buf)?;
    let mut history = vec![best];
    let mut weights = vec![0.0; sys.pairs];
    let mut dual_avg = Matrix::zeros(k, d);
    let mut dual_mass = 0.0;
    let mut window_start = best;
    let mut iterations = 0;

    let subgradient_iters = if cfg.polish {
        cfg.max_iters.min(cfg.warm_start_iters)
    } else {
        cfg.max_iters
    };
    for s in 1..=subgradient_iters {
        iterations = s;
        sys.margins(&w, &mut buf);
        let m = buf.iter().copied().fold(f64::INFINITY, f64::min);
        let active = buf.iter().filter(|v| **v <= m + 1e-12).count() as f64;
        for (r, v) in weights.iter_mut().zip(&buf) {
            *r = if *v <= m + 1e-12 { 1.0 / active } else { 0.0 };
        }
        let g = sys.combine(&weights);
        let rho = rho0 / (s as f64).sqrt();
        dual_avg.axpy(rho, &g);
        dual_mass += rho;
        w.axpy(rho, &g);
        w = project_ball(&w, spec, 1.0)?;
        let value = certified_value(&sys, &w, spec, &mut buf)?;
        if value > best {
            best = value;
            best_w.clone_from(&w);
        }
        if s % 100 == 0 {
            history.push(best);
        }
        if cfg.stall_window > 0 && s % cfg.stall_window == 0 {
            if best - window_start < cfg.stall_tol {
                break;
            }
            window_start = best;
        }
    }
    let mut upper = if dual_mass > 0.0 {
        dual_norm(&dual_avg.scale(1.0 / dual_mass), spec)?
    } else {
        f64::INFINITY
    };

    if cfg.polish && cfg.polish_max_iters > 0 {
        let out = polish(&sys, spec, &best_w, best, upper, scale, cfg)?;
        iterations += out.iterations;
        if out.value > best {
            best = out.value;
            best_w = out.w;
        }
        upper = upper.min(out.upper);
        history.extend(out.history);
        history.push(best);
    } else {
        history.push(best);
    }
    for i in 1..history.len() {
        history[i] = history[i].max(history[i - 1]);
    }

    Ok(MarginSolution {
        gamma: best,
        v: best_w,
        spec,
        iterations,
        upper_bound: upper,
        duality_gap_estimate: upper - best,
        separable: best > 0.0,
        history,
    })
}

struct Polished {
    w: Matrix,
    value: f64,
    upper: f64,
    iterations: usize,
    history: Vec<f64>,
}

/// Euclidean projection onto the probability simplex (Michelot's
/// algorithm: the threshold only grows, so discarded entries stay out).
fn project_simplex(v: &mut [f64], candidates: &mut Vec<f64>) {
    candidates.clear();
    candidates.extend_from_slice(v);
    let mut theta = (candidates.iter().sum::<f64>() - 1.0) / candidates.len() as f64;
    loop {
        let before = candidates.len();
        candidates.retain(|x| *x > theta);
        if candidates.len() == before {
            break;
        }
        theta = (candidates.iter().sum::<f64>() - 1.0) / candidates.len() as f64;
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Largest singular value of `W ↦ (m_j(W))_j`, by power iteration.
fn operator_norm(sys: &PairSystem<'_>) -> f64 {
    let (k, d) = (sys.data.k(), sys.data.d());
    let mut w = Matrix::from_fn(k, d, |i, j| 1.0 + ((i * d + j) as f64 * 0.618).fract());
    let mut buf = Vec::with_capacity(sys.pairs);
    let mut estimate = 0.0;
    for _ in 0..100 {
        let f = w.frobenius();
        if f == 0.0 {
            break;
        }
        w = w.scale(1.0 / f);
        sys.margins(&w, &mut buf);
        w = sys.combine(&buf);
        let next = w.frobenius().sqrt();
        if (next - estimate).abs() <= 1e-6 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate
}

/// Primal lower bound and dual upper bound certified by `(w, r)`.
fn bounds(sys: &PairSystem<'_>, spec: NormSpec, w: &Matrix, r: &[f64], buf: &mut Vec<f64>) -> Result<(f64, f64)> {
    let lower = certified_value(sys, w, spec, buf)?;
    let mass: f64 = r.iter().sum();
    let upper = dual_norm(&sys.combine(r), spec)? / mass;
    Ok((lower, upper))
}

/// Restarted primal-dual hybrid gradient on the saddle problem
/// `max_{norm(W) ≤ 1} min_{r ∈ Δ} Σ_j r_j m_j(W)`.
///
/// Both feasible sets are compact, so the exact primal-dual gap is
/// available and drives the restarts: the iterate or the running average,
/// whichever has the smaller gap, becomes the new anchor once that gap has
/// shrunk enough since the previous restart. The primal weight is
/// rebalanced at each restart from the distances travelled.
fn polish(
    sys: &PairSystem<'_>,
    spec: NormSpec,
    start: &Matrix,
    mut best: f64,
    mut upper: f64,
    scale: f64,
    cfg: &MarginSolverConfig,
) -> Result<Polished> {
    const CHECK_EVERY: usize = 64;
    let target = |lo: f64| cfg.tolerance * lo.abs().max(scale);
    let op = operator_norm(sys);
    if !(op > 0.0) {
        return Err(Error::DegenerateInput("all margin functionals vanish".into()));
    }
    let mut buf = Vec::with_capacity(sys.pairs);
    let mut sorted = Vec::with_capacity(sys.pairs);

    let mut w = start.clone();
    sys.margins(&w, &mut buf);
    let lo = buf.iter().copied().fold(f64::INFINITY, f64::min);
    let width = 0.01 * scale;
    let mut r: Vec<f64> = buf.iter().map(|m| (-(m - lo) / width).exp()).collect();
    let mass: f64 = r.iter().sum();
    r.iter_mut().for_each(|x| *x /= mass);

    let mut best_w = start.clone();
    let mut history = Vec::new();
    let (l0, u0) = bounds(sys, spec, &w, &r, &mut buf)?;
    upper = upper.min(u0);
    if l0 > best {
        best = l0;
        best_w.clone_from(&w);
    }

    let mut omega = 1.0f64;
    let mut anchor_w = w.clone();
    let mut anchor_r = r.clone();
    let mut anchor_gap = (u0 - l0).max(0.0);
    let mut last_candidate_gap = f64::INFINITY;
    let mut avg_w = Matrix::zeros(w.rows(), w.cols());
    let mut avg_r = vec![0.0; r.len()];
    let mut since_restart = 0usize;
    let mut total = 0usize;
    let mut r_next = vec![0.0; r.len()];

    while total < cfg.polish_max_iters && upper - best > target(best) {
        let step = 0.95 / op;
        let (tau, sigma) = (step / omega, step * omega);
        // primal ascent
        let mut w_next = w.clone();
        w_next.axpy(tau, &sys.combine(&r));
        let w_next = project_ball(&w_next, spec, 1.0)?;
        // dual descent at the extrapolated point
        let mut extrapolated = w_next.scale(2.0);
        extrapolated -= &w;
        sys.margins(&extrapolated, &mut buf);
        for ((dst, ri), m) in r_next.iter_mut().zip(&r).zip(&buf) {
            *dst = ri - sigma * m;
        }
        project_simplex(&mut r_next, &mut sorted);
        w = w_next;
        std::mem::swap(&mut r, &mut r_next);
        since_restart += 1;
        total += 1;
        let weight = 1.0 / since_restart as f64;
        avg_w = avg_w.scale(1.0 - weight);
        avg_w.axpy(weight, &w);
        for (a, x) in avg_r.iter_mut().zip(&r) {
            *a += weight * (x - *a);
        }

        if !since_restart.is_multiple_of(CHECK_EVERY) {
            continue;
        }
        let (lc, uc) = bounds(sys, spec, &w, &r, &mut buf)?;
        let (la, ua) = bounds(sys, spec, &avg_w, &avg_r, &mut buf)?;
        for (l, u, cand) in [(lc, uc, &w), (la, ua, &avg_w)] {
            upper = upper.min(u);
            if l > best {
                best = l;
                best_w.clone_from(cand);
            }
        }
        history.push(best);
        let (gap_c, gap_a) = ((uc - lc).max(0.0), (ua - la).max(0.0));
        let use_avg = gap_a < gap_c;
        let candidate_gap = gap_c.min(gap_a);
        let restart = candidate_gap <= 0.2 * anchor_gap
            || (candidate_gap <= 0.8 * anchor_gap && candidate_gap > last_candidate_gap)
            || since_restart as f64 >= 0.36 * total as f64;
        last_candidate_gap = candidate_gap;
        if !restart {
            continue;
        }
        if use_avg {
            w.clone_from(&avg_w);
            r.clone_from(&avg_r);
        }
        let dw = (&w - &anchor_w).frobenius();
        let dr = r
            .iter()
            .zip(&anchor_r)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dw > 1e-12 && dr > 1e-12 {
            omega = (0.5 * (dr / dw).ln() + 0.5 * omega.ln()).exp();
        }
        anchor_w.clone_from(&w);
        anchor_r.clone_from(&r);
        anchor_gap = candidate_gap;
        last_candidate_gap = f64::INFINITY;
        since_restart = 0;
        avg_w = Matrix::zeros(w.rows(), w.cols());
        avg_r.iter_mut().for_each(|a| *a = 0.0);
    }
    history.push(best);
    Ok(Polished {
        w: best_w,
        value: best,
        upper,
        iterations: total,
        history,
    })
}

/// Largest instance size `k·d` the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_ENTRIES: usize = 6;

/// Maximizes the normalized margin over a uniform grid on the surface of
/// the cube `[−1, 1]^{kd}`, each point rescaled onto the unit sphere of
/// `spec`. Every direction is reachable, so the result converges to `γ`
/// from below as `grid` grows.
pub fn brute_force_margin(data: &Dataset, spec: NormSpec, grid: usize) -> Result<f64> {
    let (k, d) = (data.k(), data.d());
    let dim = k * d;
    if dim > BRUTE_FORCE_MAX_ENTRIES {
        return Err(Error::InstanceTooLarge(dim));
    }
    if grid < 2 {
        return Err(Error::InvalidInput(format!("grid must have at least 2 points, got {grid}")));
    }
    let p = spec.exponent().validate()?;
    let axis: Vec<f64> = (0..grid)
        .map(|i| -1.0 + 2.0 * i as f64 / (grid - 1) as f64)
        .collect();
    let mut x = vec![0.0; dim];
    let mut idx = vec![0usize; dim - 1];
    let mut best = f64::NEG_INFINITY;
    let mut scratch = Matrix::zeros(k, d);
    for face in 0..dim {
        for fixed in [-1.0, 1.0] {
            idx.iter_mut().for_each(|v| *v = 0);
            loop {
                let mut free = idx.iter();
                for (j, slot) in x.iter_mut().enumerate() {
                    *slot = if j == face { fixed } else { axis[*free.next().unwrap()] };
                }
                let margin = margin_of_flat(data, &x);
                // max-entry (= 1 here) ≤ norm ≤ sum of entries bounds the ratio
                let ceiling = if margin >= 0.0 { margin } else { margin / x.iter().map(|v| v.abs()).sum::<f64>() };
                if ceiling > best {
                    let nrm = small_norm(&x, k, d, spec.family(), p, &mut scratch)?;
                    best = best.max(margin / nrm);
                }
                // odometer over the free coordinates
                let mut carry = true;
                for v in idx.iter_mut() {
                    *v += 1;
                    if *v < grid {
                        carry = false;
                        break;
                    }
                    *v = 0;
                }
                if carry {
                    break;
                }
            }
        }
    }
    Ok(best)
}

fn margin_of_flat(data: &Dataset, x: &[f64]) -> f64 {
    let (k, d) = (data.k(), data.d());
    let mut best = f64::INFINITY;
    for (i, &y) in data.labels().iter().enumerate() {
        let h = data.point(i);
        let ly = dot_slices(&x[y * d..(y + 1) * d], h);
        for c in 0..k {
            if c != y {
                best = best.min(ly - dot_slices(&x[c * d..(c + 1) * d], h));
            }
        }
    }
    best
}

fn small_norm(x: &[f64], k: usize, d: usize, family: NormFamily, p: Exponent, scratch: &mut Matrix) -> Result<f64> {
    match family {
        NormFamily::Entrywise => vector_norm(x, p),
        NormFamily::Schatten if k == 1 || d == 1 => vector_norm(x, Exponent::Finite(2.0)),
        NormFamily::Schatten if k == 2 && d == 2 => {
            let (a, b, c, e) = (x[0], x[1], x[2], x[3]);
            let s = ((a + e).powi(2) + (b - c).powi(2)).sqrt();
            let t = ((a - e).powi(2) + (b + c).powi(2)).sqrt();
            vector_norm(&[(s + t) / 2.0, ((s - t) / 2.0).abs()], p)
        }
        NormFamily::Schatten => {
            scratch.as_mut_slice().copy_from_slice(x);
            norm(scratch, NormSpec::schatten(p_value(p))?)
        }
    }
}

fn p_value(p: Exponent) -> f64 {
    match p {
        Exponent::Finite(v) => v,
        Exponent::Infinity => f64::INFINITY,
    }
}
