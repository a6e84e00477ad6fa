use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use tt_bermudan::dual::{optimize_dual, resimulate_upper, ChaosSamples, DualOptions, DualResult};
use tt_bermudan::manifold::CgOptions;
use tt_bermudan::market::{equidistant_dates, simulate, BlackScholesModel, PathEnsemble, Payoff};
use tt_bermudan::primal::{longstaff_schwartz, resimulate_lower, ExerciseRule, LsOptions, LsResult};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// One priced cell of a table.
#[derive(Clone, Debug, Serialize)]
pub struct ResultRow {
    pub method: &'static str,
    pub dim: usize,
    pub degree: usize,
    pub steps: usize,
    pub s0: f64,
    pub strike: f64,
    pub sorted: bool,
    pub paths: usize,
    pub resim_paths: usize,
    pub price: f64,
    pub stderr: f64,
    pub wall_seconds: f64,
    pub max_rank: Option<usize>,
    pub avg_rank: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankRow {
    pub method: &'static str,
    pub dim: usize,
    pub degree: usize,
    pub date: usize,
    pub max_rank: usize,
    pub avg_rank: f64,
}

#[derive(Clone, Debug, Serialize)]
struct TraceRow {
    dim: usize,
    degree: usize,
    stage_degree: usize,
    iteration: usize,
    objective: f64,
    validation: Option<f64>,
    grad_norm: f64,
    step: f64,
}

#[derive(Debug, Serialize)]
struct CellTiming {
    method: &'static str,
    dim: usize,
    degree: usize,
    seconds: f64,
    status: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    library_version: &'static str,
    workers: usize,
    config: &'a ExperimentConfig,
    train_seed: u64,
    resim_seed: u64,
    dual_train_seed: u64,
    dual_resim_seed: u64,
    /// One training ensemble per dimension is shared by all degrees.
    ensemble_shared_across_degrees: bool,
    cells: &'a [CellTiming],
    total_seconds: f64,
}

#[derive(Debug, Serialize)]
struct DualSummary {
    degree: usize,
    rank: usize,
    eta: f64,
    paths: usize,
    train_seed: u64,
    resim_seed: u64,
    price: f64,
    stderr: f64,
    iterations: usize,
    training_objective: f64,
    validation_objective: Option<f64>,
}

/// Seeds of the dual ensembles, derived so they never collide with the
/// primal ones.
fn dual_seeds(cfg: &ExperimentConfig) -> (u64, u64) {
    (
        cfg.samples.train_seed.wrapping_add(1_000_003),
        cfg.samples.resim_seed.wrapping_add(1_000_003),
    )
}

#[derive(Default)]
struct Outputs {
    rows: Vec<ResultRow>,
    ranks: Vec<RankRow>,
    traces: Vec<TraceRow>,
    timings: Vec<CellTiming>,
}

struct Cell<'a> {
    cfg: &'a ExperimentConfig,
    model: BlackScholesModel,
    payoff: Payoff,
    dates: Vec<f64>,
    dim: usize,
    checkpoints: PathBuf,
}

impl Cell<'_> {
    fn row(&self, method: &'static str, degree: usize, paths: usize) -> ResultRow {
        ResultRow {
            method,
            dim: self.dim,
            degree,
            steps: self.cfg.dates.steps,
            s0: self.cfg.model.s0,
            strike: self.cfg.payoff.strike,
            sorted: method == "primal" && self.cfg.method.sorted,
            paths,
            resim_paths: self.cfg.samples.resim_paths,
            price: f64::NAN,
            stderr: f64::NAN,
            wall_seconds: 0.0,
            max_rank: None,
            avg_rank: None,
            status: String::new(),
        }
    }

    fn primal(&self, ensemble: &PathEnsemble, degree: usize, out: &mut Outputs) -> Result<ResultRow> {
        let cfg = self.cfg;
        let mut opts = LsOptions {
            degree,
            sorted: cfg.method.sorted,
            ..LsOptions::default()
        };
        opts.als.max_rank = cfg.method.max_rank;
        let fit = longstaff_schwartz(ensemble, &self.payoff, &opts)?;
        self.save_primal(&fit, degree)?;
        let est = resimulate_lower(
            &self.model,
            &self.payoff,
            &self.dates,
            &fit,
            cfg.samples.resim_paths,
            cfg.samples.resim_seed,
        )?;
        let mut row = self.row("primal", degree, cfg.samples.paths);
        row.price = est.mean;
        row.stderr = est.stderr;
        let per_date: Vec<(usize, Vec<usize>)> = fit
            .reports
            .iter()
            .filter_map(|r| r.fit.as_ref().map(|f| (r.date, f.ranks.clone())))
            .collect();
        self.rank_stats(&mut row, "primal", degree, &per_date, out);
        Ok(row)
    }

    fn save_primal(&self, fit: &LsResult, degree: usize) -> Result<()> {
        let dir = self.checkpoints.join(format!("primal_d{}_p{degree}", self.dim));
        fs::create_dir_all(&dir)?;
        for (n, rule) in fit.rules.iter().enumerate() {
            if let ExerciseRule::Fitted(vf) = rule {
                vf.write_to(BufWriter::new(File::create(dir.join(format!("date_{n}.tt")))?))?;
            }
        }
        Ok(())
    }

    fn dual(&self, samples: &ChaosSamples, degree: usize, out: &mut Outputs) -> Result<ResultRow> {
        let cfg = self.cfg;
        let (train_seed, resim_seed) = dual_seeds(cfg);
        let opts = DualOptions {
            degree,
            rank: cfg.method.dual_rank,
            eta: cfg.method.eta,
            cg: CgOptions {
                max_iterations: cfg.method.cg_max_iterations,
                ..CgOptions::default()
            },
            ..DualOptions::default()
        };
        let result = optimize_dual(samples, train_seed, &opts)?;
        for stage in &result.stages {
            out.traces.extend(stage.trace.iter().map(|r| TraceRow {
                dim: self.dim,
                degree,
                stage_degree: stage.degree,
                iteration: r.iteration,
                objective: r.objective,
                validation: r.validation,
                grad_norm: r.grad_norm,
                step: r.step,
            }));
        }
        let est = resimulate_upper(
            &self.model,
            &self.payoff,
            &self.dates,
            &result.coefficients,
            cfg.samples.resim_paths,
            resim_seed,
            train_seed,
        )?;
        self.save_dual(&result, degree, est.mean, est.stderr)?;
        let mut row = self.row("dual", degree, cfg.samples.dual_paths);
        row.price = est.mean;
        row.stderr = est.stderr;
        let ranks = result
            .stages
            .last()
            .map_or_else(|| result.coefficients.tt().ranks(), |s| s.ranks.clone());
        self.rank_stats(&mut row, "dual", degree, &[(0, ranks)], out);
        Ok(row)
    }

    fn save_dual(&self, result: &DualResult, degree: usize, price: f64, stderr: f64) -> Result<()> {
        let cfg = self.cfg;
        let (train_seed, resim_seed) = dual_seeds(cfg);
        let dir = self.checkpoints.join(format!("dual_d{}_p{degree}", self.dim));
        fs::create_dir_all(&dir)?;
        result
            .coefficients
            .tt()
            .write_to(BufWriter::new(File::create(dir.join("coefficients.tt"))?))?;
        let summary = DualSummary {
            degree,
            rank: cfg.method.dual_rank,
            eta: cfg.method.eta,
            paths: cfg.samples.dual_paths,
            train_seed,
            resim_seed,
            price,
            stderr,
            iterations: result.stages.iter().map(|s| s.trace.len().saturating_sub(1)).sum(),
            training_objective: result.training_objective,
            validation_objective: result.validation_objective,
        };
        serde_json::to_writer_pretty(File::create(dir.join("summary.json"))?, &summary)?;
        Ok(())
    }

    fn rank_stats(
        &self,
        row: &mut ResultRow,
        method: &'static str,
        degree: usize,
        per_date: &[(usize, Vec<usize>)],
        out: &mut Outputs,
    ) {
        if per_date.is_empty() {
            return;
        }
        let mut maxima = Vec::new();
        for (date, ranks) in per_date {
            let inner = &ranks[1..ranks.len() - 1];
            let max = inner.iter().copied().max().unwrap_or(1);
            let avg = if inner.is_empty() {
                1.0
            } else {
                inner.iter().sum::<usize>() as f64 / inner.len() as f64
            };
            maxima.push(max);
            out.ranks.push(RankRow {
                method,
                dim: self.dim,
                degree,
                date: *date,
                max_rank: max,
                avg_rank: avg,
            });
        }
        row.max_rank = maxima.iter().copied().max();
        row.avg_rank = Some(maxima.iter().sum::<usize>() as f64 / maxima.len() as f64);
    }
}

/// Runs every `(d, p)` cell. With `isolate` a failing cell becomes a
/// `NaN` row; otherwise the first failure aborts after writing outputs.
fn run_cells(cfg: &ExperimentConfig, degrees: &[usize], out_dir: &Path, command: &str, isolate: bool) -> Result<Vec<ResultRow>> {
    let start = Instant::now();
    fs::create_dir_all(out_dir)?;
    let mut out = Outputs::default();
    let mut failure: Option<CliError> = None;
    let dates = equidistant_dates(cfg.model.maturity, cfg.dates.steps)?;

    'dims: for d in if degrees.is_empty() { Vec::new() } else { cfg.dims() } {
        let cell = Cell {
            cfg,
            model: cfg.model_for(d)?,
            payoff: cfg.payoff_for(d)?,
            dates: dates.clone(),
            dim: d,
            checkpoints: out_dir.join("checkpoints"),
        };
        let methods: Vec<(&'static str, bool)> = vec![("primal", cfg.method.kind.primal()), ("dual", cfg.method.kind.dual())];
        for (method, enabled) in methods {
            if !enabled {
                continue;
            }
            // shared ensemble of this dimension
            let shared: Result<Shared> = match method {
                "primal" => simulate(&cell.model, &cell.payoff, &dates, cfg.samples.paths, cfg.samples.train_seed, false)
                    .map(|e| Shared::Paths(if cfg.method.sorted { e.sort_paths() } else { e }))
                    .map_err(CliError::from),
                _ => {
                    let top = degrees.iter().copied().max().unwrap_or(0);
                    simulate(&cell.model, &cell.payoff, &dates, cfg.samples.dual_paths, dual_seeds(cfg).0, true)
                        .and_then(|e| ChaosSamples::from_ensemble(&e, top))
                        .map(Shared::Chaos)
                        .map_err(CliError::from)
                }
            };
            for &p in degrees {
                let t = Instant::now();
                let result = match &shared {
                    Ok(Shared::Paths(e)) => cell.primal(e, p, &mut out),
                    Ok(Shared::Chaos(s)) => cell.dual(s, p, &mut out),
                    Err(e) => Err(CliError::Invalid(format!("simulation failed: {e}"))),
                };
                let seconds = t.elapsed().as_secs_f64();
                let paths = if method == "primal" { cfg.samples.paths } else { cfg.samples.dual_paths };
                let row = match result {
                    Ok(mut row) => {
                        row.wall_seconds = seconds;
                        row.status = "ok".into();
                        row
                    }
                    Err(e) => {
                        let mut row = cell.row(method, p, paths);
                        row.wall_seconds = seconds;
                        row.status = e.to_string();
                        if !isolate {
                            failure = Some(e);
                        }
                        row
                    }
                };
                out.timings.push(CellTiming {
                    method,
                    dim: d,
                    degree: p,
                    seconds,
                    status: row.status.clone(),
                });
                out.rows.push(row);
                if failure.is_some() {
                    break 'dims;
                }
            }
        }
    }

    write_outputs(cfg, out_dir, command, &out, start.elapsed().as_secs_f64())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(out.rows),
    }
}

enum Shared {
    Paths(PathEnsemble),
    Chaos(ChaosSamples),
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(cfg: &ExperimentConfig, dir: &Path, command: &str, out: &Outputs, total: f64) -> Result<()> {
    write_csv(
        &dir.join("results.csv"),
        &out.rows,
        &[
            "method", "dim", "degree", "steps", "s0", "strike", "sorted", "paths", "resim_paths", "price", "stderr",
            "wall_seconds", "max_rank", "avg_rank", "status",
        ],
    )?;
    write_csv(
        &dir.join("ranks.csv"),
        &out.ranks,
        &["method", "dim", "degree", "date", "max_rank", "avg_rank"],
    )?;
    write_csv(
        &dir.join("cg_trace.csv"),
        &out.traces,
        &["dim", "degree", "stage_degree", "iteration", "objective", "validation", "grad_norm", "step"],
    )?;
    let (dual_train_seed, dual_resim_seed) = dual_seeds(cfg);
    let manifest = Manifest {
        command,
        library_version: env!("CARGO_PKG_VERSION"),
        workers: rayon::current_num_threads(),
        config: cfg,
        train_seed: cfg.samples.train_seed,
        resim_seed: cfg.samples.resim_seed,
        dual_train_seed,
        dual_resim_seed,
        ensemble_shared_across_degrees: true,
        cells: &out.timings,
        total_seconds: total,
    };
    serde_json::to_writer_pretty(File::create(dir.join("manifest.json"))?, &manifest)?;
    Ok(())
}

/// Prices the single configured cell.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<ResultRow>> {
    run_cells(cfg, &[cfg.method.degree], out_dir, "run", false)
}

/// Prices every `(d, p)` cell of the sweep; failures become `NaN` rows.
pub fn sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<ResultRow>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Invalid("a sweep needs a [sweep] section".into()))?;
    run_cells(cfg, &sweep.degrees, out_dir, "sweep", true)
}

/// Text table with prices to two decimals.
pub fn format_table(rows: &[ResultRow]) -> String {
    let mut s = format!(
        "{:<7} {:>4} {:>3} {:>10} {:>8} {:>9} {:>6}  {}\n",
        "method", "d", "p", "price", "stderr", "seconds", "rank", "status"
    );
    for r in rows {
        let rank = r.max_rank.map_or("-".to_string(), |v| v.to_string());
        s.push_str(&format!(
            "{:<7} {:>4} {:>3} {:>10.2} {:>8.4} {:>9.1} {:>6}  {}\n",
            r.method, r.dim, r.degree, r.price, r.stderr, r.wall_seconds, rank, r.status
        ));
    }
    s
}
