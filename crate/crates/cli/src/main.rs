//! `marginlab`: generate data, solve max-margin problems, run experiments,
//! verify the proxy inequalities and fit convergence rates.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure or
//! non-separable data, 3 failed verification report.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use marginlab_core::datagen::{gen_gaussian, load_dataset, write_dataset};
use marginlab_core::harness::{
    fit_rate, run_with_margins, verify_inequalities_with, ExperimentConfig, MarginCache, MetricsLog, Perturbation,
    VerifyOptions,
};
use marginlab_core::margins::{brute_force_margin, data_margin, MarginSolverConfig};
use marginlab_core::{Error, Matrix, NormSpec};
use rayon::prelude::*;

const THREADS_ENV: &str = "MARGINLAB_THREADS";

#[derive(Parser)]
#[command(name = "marginlab", version, about = "Implicit-bias experiments for normalized steepest descent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Gaussian-cluster dataset as CSV.
    GenData {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the max-margin problem under one norm and write the separator.
    Margin {
        /// Dataset CSV or fixtures/<name>.
        #[arg(long)]
        data: String,
        /// ew1, ew2, ewinf, s1 or sinf.
        #[arg(long)]
        norm: NormSpec,
        /// Also evaluate the exhaustive oracle (k·d ≤ 6 only).
        #[arg(long)]
        brute_force: bool,
        /// Grid resolution of the exhaustive oracle.
        #[arg(long, default_value_t = 201)]
        grid: usize,
        /// Separator CSV; defaults to separator_<norm>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment config, or every *.json in a directory.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample the proxy-function inequalities on a dataset.
    Verify {
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Self-test: scale one check's bound, e.g. gradient_upper=0.5.
        #[arg(long, value_parser = parse_perturbation)]
        perturb: Option<Perturbation>,
    },
    /// Fit log(column) against log(t) over [from, to].
    Rates {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        column: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
    },
}

fn parse_perturbation(s: &str) -> Result<Perturbation, String> {
    let (check, factor) = s.split_once('=').ok_or("expected <check>=<factor>")?;
    let factor: f64 = factor.parse().map_err(|_| format!("bad factor '{factor}'"))?;
    Ok(Perturbation {
        check: check.to_string(),
        factor,
    })
}

/// Failure of a subcommand, carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn threads() -> Result<usize, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Failure {
                code: 1,
                message: format!("{THREADS_ENV} must be a positive integer, got '{v}'"),
            }),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn separator_csv(v: &Matrix, spec: NormSpec, gamma: f64) -> String {
    let mut out = format!("# norm={spec} gamma={gamma:e} k={} d={}\n", v.rows(), v.cols());
    for i in 0..v.rows() {
        let row: Vec<String> = v.row(i).iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn cmd_margin(data: &str, spec: NormSpec, brute: bool, grid: usize, out: Option<PathBuf>) -> Result<(), Failure> {
    let data = load_dataset(data)?;
    let sol = data_margin(&data, spec, &MarginSolverConfig::default())?;
    if !sol.separable {
        return Err(Failure {
            code: 2,
            message: format!(
                "data is not separable under {spec}: best margin {:.6e} <= 0 (dual bound {:.6e})",
                sol.gamma, sol.upper_bound
            ),
        });
    }
    println!("norm = {spec}");
    println!("gamma = {:.12}", sol.gamma);
    println!("upper_bound = {:.12}", sol.upper_bound);
    println!("duality_gap = {:.3e}", sol.duality_gap_estimate);
    if brute {
        let b = brute_force_margin(&data, spec, grid)?;
        println!("brute_force[grid={grid}] = {b:.12}");
        println!("difference = {:.3e}", (sol.gamma - b).abs());
    }
    let path = out.unwrap_or_else(|| PathBuf::from(format!("separator_{spec}.csv")));
    fs::write(&path, separator_csv(&sol.v, spec, sol.gamma)).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    })?;
    println!("separator written to {}", path.display());
    Ok(())
}

fn config_paths(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure {
            code: 1,
            message: format!("no *.json configs in {}", path.display()),
        });
    }
    Ok(paths)
}

fn cmd_run(config: &Path) -> Result<(), Failure> {
    let threads = threads()?;
    let cfgs = config_paths(config)?
        .iter()
        .map(|p| ExperimentConfig::from_file(p).map(|c| (p.clone(), c)))
        .collect::<Result<Vec<_>, Error>>()?;

    // γ per dataset is solved once, before any run starts
    let mut prepared = Vec::with_capacity(cfgs.len());
    let mut datasets: HashMap<String, usize> = HashMap::new();
    let mut loaded = Vec::new();
    for (path, cfg) in &cfgs {
        let data = cfg.dataset.load()?;
        let cache = cfg.cache();
        let key = format!("{}|{}", cache.dir().display(), MarginCache::key(&data, &cfg.solver));
        let idx = *datasets.entry(key).or_insert_with(|| {
            loaded.push((data, cache, cfg.solver.clone(), Vec::<NormSpec>::new()));
            loaded.len() - 1
        });
        for s in &cfg.track {
            if !loaded[idx].3.contains(s) {
                loaded[idx].3.push(*s);
            }
        }
        prepared.push((path, cfg, idx));
    }
    let mut tables = Vec::with_capacity(loaded.len());
    for (data, cache, solver, specs) in &loaded {
        tables.push(cache.get_or_compute(data, specs, solver, threads)?);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure {
            code: 1,
            message: e.to_string(),
        })?;
    let results: Vec<(String, Result<String, Error>)> = pool.install(|| {
        prepared
            .par_iter()
            .map(|(path, cfg, idx)| {
                let name = cfg.name.clone().unwrap_or_else(|| path.display().to_string());
                let res = run_with_margins(cfg, &loaded[*idx].0, &tables[*idx]).map(|out| {
                    let mut line = format!("t={}", out.state.t());
                    if let Some(r) = out.final_record() {
                        let _ = write!(line, " loss={:.3e}", r.loss);
                        for (s, g) in cfg.track.iter().zip(&r.gaps) {
                            let _ = write!(line, " gap_{s}={}", g.map_or("-".into(), |g| format!("{g:.4e}")));
                        }
                    }
                    if let Some(o) = &cfg.output {
                        let _ = write!(line, " -> {}", o.display());
                    }
                    line
                });
                (name, res)
            })
            .collect()
    });

    let mut worst: Option<Failure> = None;
    for (name, res) in results {
        match res {
            Ok(line) => println!("{name}: {line}"),
            Err(e) => {
                eprintln!("{name}: FAILED: {e}");
                let f = Failure::from(e);
                if worst.as_ref().is_none_or(|w| f.code > w.code) {
                    worst = Some(f);
                }
            }
        }
    }
    match worst {
        None => Ok(()),
        Some(f) => Err(Failure {
            code: f.code,
            message: "one or more runs failed".into(),
        }),
    }
}

fn cmd_verify(data: &str, trials: usize, seed: u64, perturb: Option<Perturbation>) -> Result<(), Failure> {
    let data = load_dataset(data)?;
    let opts = VerifyOptions {
        threads: threads()?,
        perturbation: perturb,
        ..VerifyOptions::default()
    };
    let report = verify_inequalities_with(&data, trials, seed, &opts)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failed_checks().iter().map(|c| c.name).collect();
        Err(Failure {
            code: 3,
            message: format!("verification failed: {}", names.join(", ")),
        })
    }
}

fn cmd_rates(log: &Path, column: &str, from: f64, to: f64) -> Result<(), Failure> {
    let log = MetricsLog::read(log)?;
    let fit = fit_rate(&log, column, from, to)?;
    println!("column = {column}");
    println!("range = [{from}, {to}]");
    println!("slope = {:.6}", fit.slope);
    println!("intercept = {:.6}", fit.intercept);
    println!("residual = {:.3e}", fit.residual);
    println!("points = {}", fit.points);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData {
            k,
            d,
            per_class,
            sigma,
            seed,
            out,
        } => {
            let data = gen_gaussian(k, d, per_class, sigma, seed)?;
            write_dataset(&out, &data, Some(seed))?;
            println!("wrote {} points (k={k}, d={d}) to {}", data.n(), out.display());
            Ok(())
        }
        Command::Margin {
            data,
            norm,
            brute_force,
            grid,
            out,
        } => cmd_margin(&data, norm, brute_force, grid, out),
        Command::Run { config } => cmd_run(&config),
        Command::Verify {
            data,
            trials,
            seed,
            perturb,
        } => cmd_verify(&data, trials, seed, perturb),
        Command::Rates { log, column, from, to } => cmd_rates(&log, &column, from, to),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
