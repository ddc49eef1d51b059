//! Experiment orchestration: configured runs with margin metrics, the
//! γ cache, the inequality suite and rate fitting.
//!
//! A run starts from `W = 0`, logs one [`MetricsRecord`] per cadence point
//! and streams the records to CSV when an output path is set. Gap and
//! correlation columns need the max-margin solution for every tracked
//! norm; those come from a [`MarginCache`] or are supplied by the caller.

mod cache;
mod metrics;
mod verify;

pub use cache::{compute_margins, MarginCache, MarginEntry, MarginTable};
pub use metrics::{fit_rate, metrics_header, MetricsLog, MetricsRecord, MetricsWriter, RateFit, MIN_FIT_POINTS};
pub use verify::{
    verify_inequalities, verify_inequalities_with, CheckResult, Perturbation, VerificationReport, VerifyOptions,
    ADAM_CHECK, CHECKS, VIOLATION_TOLERANCE,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{gen_gaussian, load_dataset};
use crate::error::{Error, Result};
use crate::losses::{Dataset, LossKind};
use crate::margins::{attained_margin, correlation, normalized_margin, MarginSolverConfig};
use crate::norms::{dual_norm, Matrix, NormSpec};
use crate::optimizers::{run, AlgorithmKind, Cadence, Observation, OptimizerState, Schedule};

/// Default location of the γ cache, relative to the working directory.
pub const DEFAULT_CACHE_DIR: &str = ".marginlab-cache";

/// Where a run's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// [`gen_gaussian`] with these arguments.
    Generate {
        k: usize,
        d: usize,
        per_class: usize,
        sigma: f64,
        seed: u64,
    },
    /// A dataset CSV or `fixtures/<name>`.
    Path(PathBuf),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Generate {
                k,
                d,
                per_class,
                sigma,
                seed,
            } => gen_gaussian(*k, *d, *per_class, *sigma, *seed),
            DatasetSource::Path(p) => load_dataset(&p.to_string_lossy()),
        }
    }
}

fn default_loss() -> LossKind {
    LossKind::CrossEntropy
}

/// One experiment, as read from a JSON file. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetSource,
    pub algorithm: AlgorithmKind,
    pub schedule: Schedule,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    pub steps: u64,
    #[serde(default)]
    pub cadence: Cadence,
    /// Norms whose margins are logged; a subset of ew1, ew2, ewinf, s1, sinf.
    pub track: Vec<NormSpec>,
    /// Metrics CSV; nothing is written when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub solver: MarginSolverConfig,
    /// Directory of the γ cache; defaults to [`DEFAULT_CACHE_DIR`].
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative dataset, output and cache paths are
    /// resolved against the file's directory; `fixtures/` names are kept.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::Path(p) = &mut cfg.dataset {
            let is_fixture = p.to_string_lossy().starts_with(crate::datagen::FIXTURE_PREFIX) && !base.join(&*p).exists();
            if !is_fixture {
                resolve(p);
            }
        }
        if let Some(p) = &mut cfg.output {
            resolve(p);
        }
        if let Some(p) = &mut cfg.cache_dir {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.track.is_empty() {
            return Err(Error::Config("track must list at least one norm".into()));
        }
        for (i, s) in self.track.iter().enumerate() {
            if !NormSpec::TRACKED.contains(s) {
                return Err(Error::Config(format!(
                    "cannot track {s}: margins are available for ew1, ew2, ewinf, s1, sinf"
                )));
            }
            if self.track[..i].contains(s) {
                return Err(Error::Config(format!("{s} is tracked twice")));
            }
        }
        self.algorithm.validate()?;
        self.schedule.validate()
    }

    pub fn cache(&self) -> MarginCache {
        MarginCache::new(self.cache_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)))
    }
}

/// What a finished run returns.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<MetricsRecord>,
    pub state: OptimizerState,
}

impl ExperimentOutcome {
    pub fn final_record(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }
}

/// Loads the data, fetches γ from the cache (solving if needed) and runs.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    let margins = cfg.cache().get_or_compute(&data, &cfg.track, &cfg.solver, threads)?;
    run_with_margins(cfg, &data, &margins)
}

/// Runs `cfg` on `data` with precomputed margins for every tracked norm.
pub fn run_with_margins(cfg: &ExperimentConfig, data: &Dataset, margins: &MarginTable) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let margins = margins.select(&cfg.track)?;
    if let Some(e) = margins.entries().iter().find(|e| e.gamma <= 0.0) {
        return Err(Error::NonSeparable { gamma: e.gamma });
    }
    let mut writer = cfg
        .output
        .as_ref()
        .map(|p| MetricsWriter::create(p, &cfg.track))
        .transpose()?;
    let (k, d) = (data.k(), data.d());
    let state = OptimizerState::new(Matrix::zeros(k, d), cfg.algorithm, cfg.schedule)?;
    let mut records = Vec::new();
    let mut last_t = 0;
    let result = run(state, data, cfg.loss, cfg.steps, cfg.cadence, |obs| {
        last_t = obs.state.t();
        let rec = record(obs, data, &margins)?;
        if let Some(w) = writer.as_mut() {
            w.write(&rec)?;
        }
        records.push(rec);
        Ok(())
    });
    match result {
        Ok(state) => Ok(ExperimentOutcome { records, state }),
        Err(e) => {
            if let Some(w) = writer.as_mut() {
                w.write_failure(last_t, &e)?;
            }
            Err(e)
        }
    }
}

fn record(obs: &Observation<'_>, data: &Dataset, margins: &MarginTable) -> Result<MetricsRecord> {
    let w = obs.state.w();
    let eval = obs.eval;
    let grad = &eval.grad;
    let mut dual_norms = Vec::with_capacity(margins.entries().len());
    let mut normalized_margins = Vec::new();
    let mut gaps = Vec::new();
    let mut correlations = Vec::new();
    for e in margins.entries() {
        dual_norms.push(if grad.is_zero() {
            0.0
        } else {
            dual_norm(grad.mantissa(), e.spec)? * grad.log_scale().exp()
        });
        let nm = normalized_margin(w, data, e.spec).ok();
        normalized_margins.push(nm);
        gaps.push(nm.map(|nm| (e.gamma - nm) / e.gamma));
        correlations.push(correlation(w, &e.v).ok());
    }
    let proxy_loss_ratio = (eval.loss > 0.0).then(|| (eval.log_proxy - eval.loss.ln()).exp());
    Ok(MetricsRecord {
        t: obs.state.t(),
        eta: obs.report.eta,
        loss: eval.loss,
        proxy: eval.proxy,
        proxy_loss_ratio,
        dual_norms,
        margin: attained_margin(w, data)?,
        normalized_margins,
        gaps,
        correlations,
        mom_gap_sum: obs.report.mom_gap_sum,
        adam_ratio_max: obs.report.adam_ratio_max,
    })
}
