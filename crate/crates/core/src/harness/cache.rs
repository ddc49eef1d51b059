use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::dataset_to_csv;
use crate::error::{Error, Result};
use crate::losses::Dataset;
use crate::margins::{data_margin, MarginSolverConfig};
use crate::norms::{Matrix, NormSpec};

/// Solved max-margin problem for one spec.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginEntry {
    pub spec: NormSpec,
    pub gamma: f64,
    pub upper_bound: f64,
    /// Maximizer with `norm(v, spec) ≤ 1`.
    pub v: Matrix,
}

/// γ and separators per spec for one dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MarginTable {
    entries: Vec<MarginEntry>,
}

impl MarginTable {
    pub fn get(&self, spec: NormSpec) -> Option<&MarginEntry> {
        self.entries.iter().find(|e| e.spec == spec)
    }

    pub fn entries(&self) -> &[MarginEntry] {
        &self.entries
    }

    pub fn insert(&mut self, entry: MarginEntry) {
        self.entries.retain(|e| e.spec != entry.spec);
        self.entries.push(entry);
    }

    /// Restricted to `specs`, in that order; errors if one is missing.
    pub fn select(&self, specs: &[NormSpec]) -> Result<MarginTable> {
        let entries = specs
            .iter()
            .map(|&s| {
                self.get(s)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("no margin computed for {s}")))
            })
            .collect::<Result<_>>()?;
        Ok(MarginTable { entries })
    }
}

/// Solves `data_margin` for each spec, on up to `threads` threads.
pub fn compute_margins(
    data: &Dataset,
    specs: &[NormSpec],
    solver: &MarginSolverConfig,
    threads: usize,
) -> Result<MarginTable> {
    let threads = threads.max(1);
    let mut table = MarginTable::default();
    for chunk in specs.chunks(threads) {
        let solved: Vec<Result<MarginEntry>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&spec| {
                    scope.spawn(move || {
                        let sol = data_margin(data, spec, solver)?;
                        Ok(MarginEntry {
                            spec,
                            gamma: sol.gamma,
                            upper_bound: sol.upper_bound,
                            v: sol.v,
                        })
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::NumericalFailure("margin solver panicked".into()))))
                .collect()
        });
        for entry in solved {
            table.insert(entry?);
        }
    }
    Ok(table)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredEntry {
    gamma: f64,
    upper_bound: f64,
    v: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheFile {
    key: String,
    solver: MarginSolverConfig,
    margins: BTreeMap<String, StoredEntry>,
}

/// Sidecar store of solved margins: one JSON file per (dataset, solver
/// settings) pair, named by the SHA-256 of both.
#[derive(Clone, Debug)]
pub struct MarginCache {
    dir: PathBuf,
}

impl MarginCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        MarginCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(data: &Dataset, solver: &MarginSolverConfig) -> String {
        let mut h = Sha256::new();
        h.update(dataset_to_csv(data, None).as_bytes());
        h.update(serde_json::to_string(solver).unwrap_or_default().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn load(&self, key: &str) -> Result<Option<CacheFile>> {
        let path = self.path_for(key);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: CacheFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        Ok((file.key == key).then_some(file))
    }

    /// Returns margins for `specs`, solving and storing whichever are not
    /// cached yet.
    pub fn get_or_compute(
        &self,
        data: &Dataset,
        specs: &[NormSpec],
        solver: &MarginSolverConfig,
        threads: usize,
    ) -> Result<MarginTable> {
        let key = Self::key(data, solver);
        let mut file = self.load(&key)?.unwrap_or_else(|| CacheFile {
            key: key.clone(),
            solver: solver.clone(),
            margins: BTreeMap::new(),
        });
        let mut table = MarginTable::default();
        let mut missing = Vec::new();
        for &spec in specs {
            match file.margins.get(&spec.tag()) {
                Some(e) => table.insert(MarginEntry {
                    spec,
                    gamma: e.gamma,
                    upper_bound: e.upper_bound,
                    v: Matrix::from_rows(&e.v)?,
                }),
                None => missing.push(spec),
            }
        }
        if missing.is_empty() {
            return Ok(table);
        }
        let fresh = compute_margins(data, &missing, solver, threads)?;
        for e in fresh.entries() {
            file.margins.insert(
                e.spec.tag(),
                StoredEntry {
                    gamma: e.gamma,
                    upper_bound: e.upper_bound,
                    v: (0..e.v.rows()).map(|i| e.v.row(i).to_vec()).collect(),
                },
            );
            table.insert(e.clone());
        }
        self.store(&key, &file)?;
        table.select(specs)
    }

    fn store(&self, key: &str, file: &CacheFile) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path_for(key);
        let tmp = self.dir.join(format!("{key}.{}.tmp", std::process::id()));
        let text = serde_json::to_string_pretty(file).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}
