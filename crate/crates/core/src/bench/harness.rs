//! Runs every cell and trial of a config and writes the trace and summary
//! CSVs.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use super::config::BenchmarkConfig;
use super::BenchError;
use crate::probo::{probo_run, RunError, RunOutput, System};
use crate::stats::mean_var;
use crate::zoo::build_model;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
/// Rows of finished trials in completion order; removed after a clean run.
pub const PARTIAL_FILE: &str = "trace.partial.csv";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Run trials one after another on the calling thread.
    pub serial: bool,
    /// Caps the worker count; `None` reads `VERSABO_THREADS`.
    pub threads: Option<usize>,
}

/// Result of one (cell, trial) run.
#[derive(Debug)]
pub struct TrialOutcome {
    pub cell: usize,
    pub trial: usize,
    pub result: Result<RunOutput, Box<RunError>>,
}

impl TrialOutcome {
    /// The finished run, or what was recorded before it failed.
    pub fn output(&self) -> &RunOutput {
        match &self.result {
            Ok(out) => out,
            Err(e) => &e.partial,
        }
    }
}

fn thread_cap(opts: &RunOptions) -> Result<Option<usize>, BenchError> {
    if opts.threads.is_some() {
        return Ok(opts.threads);
    }
    match std::env::var("VERSABO_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(BenchError::Config(format!("VERSABO_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn run_one(config: &BenchmarkConfig, systems: &[Box<dyn System>], cell: usize, trial: usize) -> TrialOutcome {
    let system = systems[cell].as_ref();
    let model = config
        .model_context(cell, system)
        .and_then(|ctx| build_model(&config.cells[cell].model, &ctx));
    let result = match model {
        Ok(model) => probo_run(&config.run_config(cell, trial), system, model.as_ref()),
        Err(error) => Err(Box::new(RunError {
            error,
            partial: RunOutput { dataset: Default::default(), trace: Default::default() },
        })),
    };
    TrialOutcome { cell, trial, result }
}

/// Runs every (cell, trial) pair in memory, calling `on_done` as each
/// finishes. Outcomes come back sorted by (cell, trial).
pub fn run_trials(
    config: &BenchmarkConfig,
    opts: &RunOptions,
    on_done: &(dyn Fn(&TrialOutcome) + Sync),
) -> Result<Vec<TrialOutcome>, BenchError> {
    config.validate()?;
    let systems = config
        .cells
        .iter()
        .map(|c| c.system.build())
        .collect::<crate::error::Result<Vec<_>>>()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let jobs: Vec<(usize, usize)> =
        (0..config.cells.len()).flat_map(|c| (0..config.trials).map(move |t| (c, t))).collect();
    let work = |&(c, t): &(usize, usize)| {
        let out = run_one(config, &systems, c, t);
        on_done(&out);
        out
    };
    let mut outcomes: Vec<TrialOutcome> = if opts.serial {
        jobs.iter().map(work).collect()
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = thread_cap(opts)? {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(work).collect())
    };
    outcomes.sort_by_key(|o| (o.cell, o.trial));
    Ok(outcomes)
}

/// Number of `x` columns: the widest box among the cells.
fn x_columns(config: &BenchmarkConfig) -> Result<usize, BenchError> {
    config
        .cells
        .iter()
        .map(|c| c.system.build().map(|s| s.search_box().dim()))
        .try_fold(0, |acc, d| d.map(|d| acc.max(d)))
        .map_err(|e| BenchError::Config(e.to_string()))
}

pub fn trace_header(x_cols: usize) -> String {
    let mut h = String::from("cell_id,system,model,acq,fidelity_mode,trial,iter,best_f,observed_f");
    for j in 0..x_cols {
        write!(h, ",x{j}").unwrap();
    }
    h.push_str(",post_calls,gen_calls,inf_calls,wall_ms\n");
    h
}

/// Trace rows of one outcome, each ending in a newline.
pub fn trace_rows(config: &BenchmarkConfig, outcome: &TrialOutcome, x_cols: usize) -> String {
    let cell = &config.cells[outcome.cell];
    let prefix = format!(
        "{},{},{},{},{},{}",
        config.cell_id(outcome.cell),
        cell.system.id(),
        cell.model,
        cell.acq.name(),
        cell.fidelity,
        outcome.trial
    );
    let mut out = String::new();
    for r in &outcome.output().trace.records {
        write!(out, "{prefix},{},{},{}", r.iteration, r.best_f, r.observed_f).unwrap();
        for j in 0..x_cols {
            match r.x.coords().get(j) {
                Some(v) => write!(out, ",{v}").unwrap(),
                None => out.push(','),
            }
        }
        let wall = if config.record_wall_time { r.wall_ms } else { 0 };
        writeln!(out, ",{},{},{},{wall}", r.post_calls, r.gen_calls, r.inf_calls).unwrap();
    }
    out
}

/// Per-cell, per-iteration mean and standard error of `best_f` across trials.
pub fn summary_csv(config: &BenchmarkConfig, outcomes: &[TrialOutcome]) -> String {
    let mut out = String::from("cell_id,system,model,acq,fidelity_mode,iter,trials,mean_best_f,se_best_f\n");
    for (k, cell) in config.cells.iter().enumerate() {
        let traces: Vec<_> = outcomes.iter().filter(|o| o.cell == k).map(|o| &o.output().trace).collect();
        let longest = traces.iter().map(|t| t.len()).max().unwrap_or(0);
        for n in 1..=longest {
            let vals: Vec<f64> = traces.iter().filter_map(|t| t.records.get(n - 1)).map(|r| r.best_f).collect();
            let (mean, var) = mean_var(&vals);
            let se = if vals.len() > 1 { (var / vals.len() as f64).sqrt() } else { 0.0 };
            writeln!(
                out,
                "{},{},{},{},{},{n},{},{mean},{se}",
                config.cell_id(k),
                cell.system.id(),
                cell.model,
                cell.acq.name(),
                cell.fidelity,
                vals.len()
            )
            .unwrap();
        }
    }
    out
}

/// Where a benchmark run put its files.
#[derive(Clone, Debug)]
pub struct BenchReport {
    pub trace: PathBuf,
    pub summary: PathBuf,
    /// Trace rows written, header excluded.
    pub rows: usize,
    pub elapsed_ms: u128,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

/// Runs the whole config and writes `trace.csv` and `summary.csv` under
/// `out_dir`. Rows of each finished trial are appended to
/// `trace.partial.csv` as they arrive; if a trial fails that file is kept
/// and the first failure (in cell, trial order) is returned.
pub fn run_benchmark(config: &BenchmarkConfig, out_dir: &Path, opts: &RunOptions) -> Result<BenchReport, BenchError> {
    let start = Instant::now();
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let x_cols = x_columns(config)?;
    let partial_path = out_dir.join(PARTIAL_FILE);
    let file = File::create(&partial_path).map_err(io_err(&partial_path))?;
    let partial = Mutex::new((BufWriter::new(file), Ok::<(), std::io::Error>(())));
    {
        let mut guard = partial.lock().unwrap();
        let (w, status) = &mut *guard;
        *status = w.write_all(trace_header(x_cols).as_bytes());
    }
    let on_done = |o: &TrialOutcome| {
        let rows = trace_rows(config, o, x_cols);
        let mut guard = partial.lock().unwrap();
        let (w, status) = &mut *guard;
        if status.is_ok() {
            *status = w.write_all(rows.as_bytes()).and_then(|_| w.flush());
        }
    };
    let outcomes = run_trials(config, opts, &on_done)?;
    let (w, status) = partial.into_inner().unwrap();
    status.map_err(io_err(&partial_path))?;
    drop(w);

    for o in &outcomes {
        if let Err(e) = &o.result {
            return Err(BenchError::Run { cell: config.cell_id(o.cell), trial: o.trial, source: e.clone() });
        }
    }

    let mut trace = trace_header(x_cols);
    let mut rows = 0;
    for o in &outcomes {
        trace.push_str(&trace_rows(config, o, x_cols));
        rows += o.output().trace.len();
    }
    let trace_path = out_dir.join(TRACE_FILE);
    fs::write(&trace_path, trace).map_err(io_err(&trace_path))?;
    let summary_path = out_dir.join(SUMMARY_FILE);
    fs::write(&summary_path, summary_csv(config, &outcomes)).map_err(io_err(&summary_path))?;
    fs::remove_file(&partial_path).map_err(io_err(&partial_path))?;
    Ok(BenchReport { trace: trace_path, summary: summary_path, rows, elapsed_ms: start.elapsed().as_millis() })
}
