//! Sweep execution: reference computation, per-run training and outputs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use hipinn::hitrain::{derive_seed, train, Reference, TrainOptions};
use hipinn::problems::{problem_by_name, ProblemSpec};
use hipinn::refsolve::{relative_l2_error, solve_reference, Grid2D, SolverOptions};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{expand, ExperimentConfig, ReferenceSolver, RunPlan};
use crate::report::write_report;

/// Stream index of the sample draw within a run seed.
const SAMPLE_STREAM: u64 = u64::MAX;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub repeat: usize,
    pub sigma: Option<Vec<f64>>,
    pub transition: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub status: RunStatus,
    pub message: Option<String>,
    pub iterations: usize,
    pub final_rel_l2_error: Option<f64>,
    pub final_losses: BTreeMap<String, f64>,
    pub wall_time_s: f64,
    /// Output files of this run, relative to the sweep directory.
    pub files: Vec<String>,
}

/// Reference values on the comparison grid.
#[derive(Debug, Clone)]
pub struct ReferenceData {
    pub points: Array2<f64>,
    pub values: Vec<f64>,
    /// Rows and columns of the plain-text dumps.
    pub shape: (usize, usize),
    pub source: &'static str,
    pub warnings: Vec<String>,
}

pub fn compute_reference(config: &ExperimentConfig, problem: &ProblemSpec) -> Result<ReferenceData> {
    let r = &config.reference;
    let nc = r.compare_points();
    let use_fd = match r.solver {
        ReferenceSolver::Exact => false,
        ReferenceSolver::Fd => true,
        ReferenceSolver::Auto => problem.exact.is_none(),
    };
    let (points, shape) = match problem.dim() {
        1 => (
            Array2::from_shape_fn((nc, 1), |(i, _)| i as f64 / (nc - 1) as f64),
            (1, nc),
        ),
        2 => (Grid2D::new(nc)?.points(), (nc, nc)),
        d => bail!("comparison grids cover one or two dimensions, problem has {d}"),
    };
    let mut warnings = Vec::new();
    let values = if use_fd {
        let options = SolverOptions {
            rel_tol: r.rel_tol,
            ..SolverOptions::default()
        };
        let (u, report) = solve_reference(problem, Grid2D::new(r.grid)?, &options)?;
        warnings = report.warnings;
        u.restrict(Grid2D::new(nc)?)?.flat()
    } else {
        problem
            .exact_at(points.view())
            .context("problem has no exact solution")??
    };
    Ok(ReferenceData {
        points,
        values,
        shape,
        source: if use_fd { "fd" } else { "exact" },
        warnings,
    })
}

fn write_matrix(path: &Path, values: &[f64], shape: (usize, usize)) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in values.chunks(shape.1) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    problem: &'a ProblemSpec,
    reference: &'a ReferenceData,
    dir: &'a Path,
}

fn base_summary(plan: &RunPlan) -> RunSummary {
    RunSummary {
        run_id: plan.id.clone(),
        label: plan.label.clone(),
        config_hash: plan.config_hash.clone(),
        seed: plan.seed,
        repeat: plan.repeat,
        sigma: plan.sigma.clone(),
        transition: plan.transition,
        hidden: plan.hidden.clone(),
        status: RunStatus::Failed,
        message: None,
        iterations: plan.schedule.total_iterations(),
        final_rel_l2_error: None,
        final_losses: BTreeMap::new(),
        wall_time_s: 0.0,
        files: Vec::new(),
    }
}

fn execute(ctx: &RunContext<'_>, plan: &RunPlan, summary: &mut RunSummary) -> Result<()> {
    let run_dir = ctx.dir.join(&plan.id);
    fs::create_dir_all(&run_dir)?;
    let rel = |name: &str| format!("{}/{name}", plan.id);
    let samples = ctx.problem.sample(&ctx.config.samples.counts(), derive_seed(plan.seed, SAMPLE_STREAM))?;
    let reference = Reference {
        points: ctx.reference.points.clone(),
        values: ctx.reference.values.clone(),
    };
    let options = TrainOptions {
        seed: plan.seed,
        checkpoint_stride: ctx.config.checkpoint_stride,
        resample: ctx.config.resample,
    };
    let run = train(ctx.problem, &plan.schedule, &samples, Some(&reference), &options)?;
    let mut trace = BufWriter::new(File::create(run_dir.join("trace.csv"))?);
    run.trace.write_csv(&mut trace)?;
    trace.flush()?;
    summary.files.push(rel("trace.csv"));
    let prediction = run.model.predict(ctx.reference.points.view())?;
    let error: Vec<f64> = prediction.iter().zip(&ctx.reference.values).map(|(p, r)| p - r).collect();
    write_matrix(&run_dir.join("prediction.txt"), &prediction, ctx.reference.shape)?;
    write_matrix(&run_dir.join("error.txt"), &error, ctx.reference.shape)?;
    summary.files.push(rel("prediction.txt"));
    summary.files.push(rel("error.txt"));
    let last = run.trace.last().context("empty trace")?;
    summary.final_rel_l2_error = Some(relative_l2_error(&prediction, &ctx.reference.values)?);
    summary.final_losses = run.trace.component_names.iter().cloned().zip(last.losses.iter().copied()).collect();
    Ok(())
}

fn run_one(ctx: &RunContext<'_>, plan: &RunPlan) -> RunSummary {
    let mut summary = base_summary(plan);
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| execute(ctx, plan, &mut summary)));
    summary.wall_time_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok(Ok(())) => summary.status = RunStatus::Completed,
        Ok(Err(e)) => summary.message = Some(format!("{e:#}")),
        Err(p) => {
            let text = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            summary.message = Some(format!("panicked: {text}"));
        }
    }
    summary.files.push(format!("{}/summary.json", plan.id));
    let path = ctx.dir.join(&plan.id).join("summary.json");
    if let Err(e) = fs::create_dir_all(ctx.dir.join(&plan.id))
        .map_err(anyhow::Error::from)
        .and_then(|_| write_json(&path, &summary))
    {
        summary.files.pop();
        summary.status = RunStatus::Failed;
        summary.message.get_or_insert_with(|| format!("cannot write summary: {e:#}"));
    }
    summary
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub run_id: String,
    pub status: RunStatus,
    pub summary: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub tool_version: String,
    pub reference_source: String,
    pub reference_warnings: Vec<String>,
    pub runs: Vec<ManifestRun>,
    /// Every file of the sweep, relative to its directory.
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub summaries: Vec<RunSummary>,
}

impl SweepOutcome {
    pub fn all_completed(&self) -> bool {
        self.summaries.iter().all(|s| s.status == RunStatus::Completed)
    }
}

/// Worker count: `HIPINN_WORKERS` when set, else the config, else 1.
pub fn worker_count(config: &ExperimentConfig) -> Result<usize> {
    match std::env::var("HIPINN_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("HIPINN_WORKERS must be a positive integer, got {v:?}"),
        },
        Err(_) => Ok(config.workers.unwrap_or(1)),
    }
}

/// Runs the whole sweep into `dir`. Individual run failures are recorded in
/// their summaries; only setup and manifest errors are returned.
pub fn run_experiments(config: &ExperimentConfig, dir: &Path, workers: usize) -> Result<SweepOutcome> {
    let plans = expand(config)?;
    let problem = problem_by_name(&config.problem.name)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let reference = compute_reference(config, &problem)?;
    let mut files = vec!["config.toml".to_string(), "reference.txt".to_string()];
    fs::write(dir.join("config.toml"), toml::to_string(config)?)?;
    write_matrix(&dir.join("reference.txt"), &reference.values, reference.shape)?;
    let ctx = RunContext {
        config,
        problem: &problem,
        reference: &reference,
        dir,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let summaries: Vec<RunSummary> = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| {
                let s = run_one(&ctx, plan);
                match s.final_rel_l2_error {
                    Some(e) => eprintln!("[{}] {:?}, relative L2 error {e:.3e}, {:.1} s", s.run_id, s.status, s.wall_time_s),
                    None => eprintln!("[{}] {:?}: {}", s.run_id, s.status, s.message.as_deref().unwrap_or("")),
                }
                s
            })
            .collect()
    });
    files.extend(write_report(dir, &summaries)?);
    let runs: Vec<ManifestRun> = summaries
        .iter()
        .map(|s| ManifestRun {
            run_id: s.run_id.clone(),
            status: s.status,
            summary: format!("{}/summary.json", s.run_id),
            files: s.files.clone(),
        })
        .collect();
    for s in &summaries {
        files.extend(s.files.iter().cloned());
    }
    files.push(MANIFEST.into());
    let manifest = Manifest {
        name: config.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        reference_source: reference.source.into(),
        reference_warnings: reference.warnings.clone(),
        runs,
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(SweepOutcome {
        dir: dir.to_path_buf(),
        summaries,
    })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Summaries of every run listed in a sweep's manifest.
pub fn load_summaries(dir: &Path) -> Result<Vec<RunSummary>> {
    read_manifest(dir)?
        .runs
        .iter()
        .map(|r| {
            let path = dir.join(&r.summary);
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}
