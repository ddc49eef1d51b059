//! Synthetic Gaussian-cluster data, hand-built fixtures and the dataset
//! CSV format.
//!
//! Files look like
//!
//! ```text
//! # k=2 d=2 n=2 seed=none
//! f0,f1,label
//! 1,0,1
//! 0,1,2
//! ```
//!
//! Labels are 1-based on disk and 0-based in memory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::losses::Dataset;
use crate::margins::{data_margin, MarginSolverConfig};
use crate::norms::{Matrix, NormSpec};

/// How many fresh draws [`gen_gaussian`] makes before giving up.
pub const MAX_GENERATION_ATTEMPTS: usize = 20;

/// Prefix that selects a built-in fixture wherever a dataset path is
/// accepted.
pub const FIXTURE_PREFIX: &str = "fixtures/";

pub const FIXTURE_NAMES: [&str; 4] = ["orthogonal-2", "orthogonal-3", "colinear-nonsep", "single-point"];

/// `k` class centers drawn from `N(0, I_d)`, then `n_per_class` points per
/// class at `center + sigma · N(0, I_d)`, stored class by class.
///
/// Draws come from ChaCha8 seeded with `seed`; attempt `r` uses stream `r`
/// of that generator. An attempt is kept once a quick solver pass finds a
/// positive Frobenius-norm margin.
pub fn gen_gaussian(k: usize, d: usize, n_per_class: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if k < 2 || d < 1 || n_per_class < 1 {
        return Err(Error::InvalidInput(format!(
            "need k >= 2, d >= 1 and at least one point per class (got k={k}, d={d}, per-class={n_per_class})"
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be a non-negative number, got {sigma}")));
    }
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let centers = Matrix::from_fn(k, d, |_, _| StandardNormal.sample(&mut rng));
        let n = k * n_per_class;
        let mut features = Matrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for c in 0..k {
            for p in 0..n_per_class {
                let row = features.row_mut(c * n_per_class + p);
                for (j, slot) in row.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *slot = centers[(c, j)] + sigma * z;
                }
                labels.push(c);
            }
        }
        let Ok(data) = Dataset::new(features, labels, k) else {
            continue;
        };
        if data_margin(&data, NormSpec::FROBENIUS, &MarginSolverConfig::quick())?.separable {
            return Ok(data);
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}

/// Built-in datasets:
///
/// - `orthogonal-2`: `e₁` in class 1, `e₂` in class 2;
/// - `orthogonal-3`: the three standard basis vectors of R³, one per class;
/// - `colinear-nonsep`: the point `(1, 0)` under both labels;
/// - `single-point`: `k = 2`, `d = 1`, one point `h = (1)` in class 1.
pub fn fixture(name: &str) -> Result<Dataset> {
    match name {
        "orthogonal-2" => Dataset::new(Matrix::identity(2), vec![0, 1], 2),
        "orthogonal-3" => Dataset::new(Matrix::identity(3), vec![0, 1, 2], 3),
        "colinear-nonsep" => Dataset::new(Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]])?, vec![0, 1], 2),
        "single-point" => Dataset::with_empty_classes(Matrix::from_rows(&[[1.0]])?, vec![0], 2),
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}

/// `fixtures/<name>` or a CSV path.
pub fn load_dataset(source: &str) -> Result<Dataset> {
    match source.strip_prefix(FIXTURE_PREFIX) {
        Some(name) if !Path::new(source).exists() => fixture(name),
        _ => read_dataset(source),
    }
}

pub fn dataset_to_csv(data: &Dataset, seed: Option<u64>) -> String {
    let mut out = String::new();
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    let _ = writeln!(out, "# k={} d={} n={} seed={seed}", data.k(), data.d(), data.n());
    for j in 0..data.d() {
        let _ = write!(out, "f{j},");
    }
    out.push_str("label\n");
    for (i, &y) in data.labels().iter().enumerate() {
        for v in data.point(i) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", y + 1);
    }
    out
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset, seed: Option<u64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_csv(data, seed)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

/// Parses the CSV format; errors are human-readable messages.
pub fn parse_dataset(text: &str) -> std::result::Result<Dataset, String> {
    let mut declared_k = None;
    let mut header: Option<usize> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at = |msg: String| format!("line {}: {msg}", lineno + 1);
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            for field in comment.split_whitespace() {
                if let Some(k) = field.strip_prefix("k=") {
                    declared_k = Some(k.parse::<usize>().map_err(|e| at(format!("bad k: {e}")))?);
                }
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(d) = header else {
            if cells.last() != Some(&"label") {
                return Err(at("header must end with 'label'".into()));
            }
            for (j, c) in cells[..cells.len() - 1].iter().enumerate() {
                if *c != format!("f{j}") {
                    return Err(at(format!("expected column f{j}, found '{c}'")));
                }
            }
            header = Some(cells.len() - 1);
            continue;
        };
        if cells.len() != d + 1 {
            return Err(at(format!("expected {} fields, found {}", d + 1, cells.len())));
        }
        for c in &cells[..d] {
            let v: f64 = c.parse().map_err(|_| at(format!("bad number '{c}'")))?;
            if !v.is_finite() {
                return Err(at(format!("non-finite feature '{c}'")));
            }
            values.push(v);
        }
        let label: usize = cells[d]
            .parse()
            .map_err(|_| at(format!("bad label '{}'", cells[d])))?;
        if label == 0 {
            return Err(at("labels are 1-based".into()));
        }
        labels.push(label - 1);
    }
    let d = header.ok_or("missing header line")?;
    if labels.is_empty() {
        return Err("no datapoints".into());
    }
    if d == 0 {
        return Err("no feature columns".into());
    }
    let k = declared_k.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let features = Matrix::from_vec(labels.len(), d, values).map_err(|e| e.to_string())?;
    Dataset::new(features, labels, k).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::data_margin;

    #[test]
    fn paper_sized_generation() {
        let data = gen_gaussian(10, 25, 50, 0.1, 7).unwrap();
        assert_eq!((data.n(), data.k(), data.d()), (500, 10, 25));
        let mut seen = [false; 10];
        data.labels().iter().for_each(|&y| seen[y] = true);
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_gaussian(3, 4, 5, 0.3, 42).unwrap();
        let b = gen_gaussian(3, 4, 5, 0.3, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_gaussian(3, 4, 5, 0.3, 43).unwrap());
    }

    #[test]
    fn zero_noise_collapses_classes_onto_centers() {
        let data = gen_gaussian(3, 2, 4, 0.0, 1).unwrap();
        for c in 0..3 {
            let first = data.point(c * 4).to_vec();
            for p in 1..4 {
                assert_eq!(data.point(c * 4 + p), first.as_slice());
            }
        }
    }

    #[test]
    fn impossible_data_is_reported() {
        // without a bias, a 1-d linear classifier predicts at most two classes
        let err = gen_gaussian(6, 1, 30, 5.0, 3).unwrap_err();
        assert!(matches!(err, Error::GenerationFailed { attempts: 20 }));
        assert!(gen_gaussian(1, 2, 3, 0.1, 0).is_err());
        assert!(gen_gaussian(2, 2, 3, -0.1, 0).is_err());
    }

    #[test]
    fn fixtures() {
        let o = fixture("orthogonal-2").unwrap();
        assert_eq!((o.n(), o.data_bound()), (2, 1.0));
        assert_eq!(fixture("orthogonal-3").unwrap().k(), 3);
        let bad = fixture("colinear-nonsep").unwrap();
        assert!(!data_margin(&bad, NormSpec::MAX, &MarginSolverConfig::quick()).unwrap().separable);
        assert_eq!(fixture("single-point").unwrap().n(), 1);
        assert!(matches!(fixture("nope"), Err(Error::UnknownFixture(_))));
        assert_eq!(load_dataset("fixtures/orthogonal-2").unwrap(), o);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let data = gen_gaussian(3, 4, 5, 0.3, 9).unwrap();
        let text = dataset_to_csv(&data, Some(9));
        assert!(text.starts_with("# k=3 d=4 n=15 seed=9\nf0,f1,f2,f3,label\n"));
        assert_eq!(parse_dataset(&text).unwrap(), data);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&path, &data, None).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
        assert_eq!(load_dataset(path.to_str().unwrap()).unwrap(), data);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_dataset("f0,label\n1,0\n").unwrap_err();
        assert!(err.contains("line 2") && err.contains("1-based"), "{err}");
        assert!(parse_dataset("f0,f2,label\n").unwrap_err().contains("f1"));
        assert!(parse_dataset("f0,label\nx,1\n").unwrap_err().contains("bad number"));
        assert!(parse_dataset("# k=3\nf0,label\n1,1\n2,2\n").unwrap_err().contains("class 3"));
        assert!(read_dataset("/nonexistent/file.csv").is_err());
    }
}
