//! Batch runner: every solver on every instance, one CSV row per pair.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::cache::load_or_factor;
use crate::bench::generate::{gen_spring_mass, sample_initial_states, SpringMassParams};
use crate::error::Result;
use crate::factor::factor;
use crate::solver::{solve, SolverConfig, SolverContext, SolverKind, SolverReport};

pub const SCHEMA_VERSION: u32 = 1;
/// Budget used for the "solved within" fraction of the summary.
pub const CALL_BUDGET: usize = 50;

/// One problem of a batch. Instances sharing everything but the root state
/// share one context.
#[derive(Debug, Clone)]
pub struct BenchInstance {
    pub id: String,
    pub base: Arc<SolverContext>,
    pub root_state: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub solvers: Vec<SolverKind>,
    pub solver: SolverConfig,
    /// Run instances concurrently.
    pub parallel: bool,
    /// Record wall time; when off `wall_ms` is written as zero so that
    /// outputs are byte-reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            solvers: SolverKind::ALL.to_vec(),
            solver: SolverConfig::default(),
            parallel: true,
            timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub instance_id: String,
    pub solver: SolverKind,
    pub iterations: usize,
    pub dual_grad_calls: usize,
    pub hessian_vec_calls: usize,
    pub homogeneous_calls: usize,
    pub oracle_calls: usize,
    pub prox_calls: usize,
    pub final_residual_inf: f64,
    pub wall_ms: f64,
    pub converged: bool,
    /// Failure message; empty when the solver returned.
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub instances: usize,
    pub converged: usize,
    pub failed: usize,
    pub median_oracle_calls: f64,
    pub p84_oracle_calls: f64,
    pub p95_oracle_calls: f64,
    pub median_iterations: f64,
    /// Fraction of instances that converged within [`CALL_BUDGET`] oracle calls.
    pub fraction_within_budget: f64,
    /// `(upper bin edge, count)` of oracle calls over converged instances,
    /// bins of width 10.
    pub histogram: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trace {
    pub instance_id: String,
    pub solver: SolverKind,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: SolverConfig,
    pub metadata: BTreeMap<String, String>,
    pub summary: BTreeMap<String, SolverSummary>,
    #[serde(skip)]
    pub rows: Vec<RunRow>,
    #[serde(skip)]
    pub traces: Vec<Trace>,
}

/// `samples` spring-mass instances with uniformly sampled root states, all
/// sharing one factorization.
pub fn spring_mass_suite(
    params: &SpringMassParams,
    samples: usize,
    seed: u64,
    precondition: bool,
    cache_dir: Option<&Path>,
) -> Result<Vec<BenchInstance>> {
    let states = sample_initial_states(params, samples, seed);
    let prob = gen_spring_mass(params, DVector::zeros(params.nx()))?;
    let (prob, scale) = if precondition {
        let (scaled, s) = crate::solver::precondition(&prob)?;
        (scaled, Some(s))
    } else {
        (prob, None)
    };
    let cache = match cache_dir {
        Some(dir) => load_or_factor(&prob, dir)?,
        None => factor(&prob)?,
    };
    let mut ctx = SolverContext::with_cache(prob, cache)?;
    if let Some(s) = scale {
        ctx = ctx.with_dual_scaling(s)?;
    }
    let base = Arc::new(ctx);
    Ok(states
        .into_iter()
        .enumerate()
        .map(|(k, p)| BenchInstance {
            id: format!("sm{k:04}"),
            base: Arc::clone(&base),
            root_state: Some(p),
        })
        .collect())
}

/// Linear-interpolation quantile of sorted data (NaN when empty).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

fn sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Statistics over converged rows; failures and unconverged runs only enter
/// the counts and the budget fraction's denominator.
pub fn summarize(rows: &[RunRow]) -> SolverSummary {
    let ok: Vec<&RunRow> = rows.iter().filter(|r| r.converged).collect();
    let calls = sorted(ok.iter().map(|r| r.oracle_calls as f64));
    let iters = sorted(ok.iter().map(|r| r.iterations as f64));
    let within = ok.iter().filter(|r| r.oracle_calls <= CALL_BUDGET).count();
    let mut bins: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &ok {
        *bins.entry(r.oracle_calls.div_ceil(10).max(1) * 10).or_default() += 1;
    }
    SolverSummary {
        instances: rows.len(),
        converged: ok.len(),
        failed: rows.iter().filter(|r| !r.error.is_empty()).count(),
        median_oracle_calls: quantile(&calls, 0.5),
        p84_oracle_calls: quantile(&calls, 0.84),
        p95_oracle_calls: quantile(&calls, 0.95),
        median_iterations: quantile(&iters, 0.5),
        fraction_within_budget: if rows.is_empty() {
            0.0
        } else {
            within as f64 / rows.len() as f64
        },
        histogram: bins.into_iter().collect(),
    }
}

fn row_from(id: &str, kind: SolverKind, out: &Result<SolverReport>, timing: bool) -> RunRow {
    match out {
        Ok(rep) => RunRow {
            instance_id: id.to_string(),
            solver: kind,
            iterations: rep.iterations,
            dual_grad_calls: rep.counts.dual_grad,
            hessian_vec_calls: rep.counts.hessian_vec,
            homogeneous_calls: rep.counts.homogeneous,
            oracle_calls: rep.counts.oracle_calls(),
            prox_calls: rep.counts.prox,
            final_residual_inf: rep.residual_inf,
            wall_ms: if timing { rep.wall_time.as_secs_f64() * 1e3 } else { 0.0 },
            converged: rep.converged(),
            error: String::new(),
        },
        Err(e) => RunRow {
            instance_id: id.to_string(),
            solver: kind,
            iterations: 0,
            dual_grad_calls: 0,
            hessian_vec_calls: 0,
            homogeneous_calls: 0,
            oracle_calls: 0,
            prox_calls: 0,
            final_residual_inf: f64::NAN,
            wall_ms: 0.0,
            converged: false,
            error: e.to_string(),
        },
    }
}

/// Solver outputs of one instance, in the order of `cfg.solvers`.
pub type InstanceResults = Vec<(SolverKind, Result<SolverReport>)>;

fn run_instance(inst: &BenchInstance, cfg: &ExperimentConfig) -> InstanceResults {
    let owned;
    let ctx = match &inst.root_state {
        None => inst.base.as_ref(),
        Some(p) => match inst.base.with_root_state(p.clone()) {
            Ok(c) => {
                owned = c;
                &owned
            }
            Err(e) => {
                let msg = e.to_string();
                return cfg
                    .solvers
                    .iter()
                    .map(|&k| (k, Err(crate::Error::InvalidProblem(msg.clone()))))
                    .collect();
            }
        },
    };
    cfg.solvers
        .iter()
        .map(|&k| (k, solve(ctx, k, &cfg.solver, None)))
        .collect()
}

/// Runs the batch and hands every full report to `inspect` before it is
/// condensed into a row.
pub fn run_experiment_with<F>(instances: &[BenchInstance], cfg: &ExperimentConfig, inspect: F) -> RunReport
where
    F: Fn(&BenchInstance, SolverKind, &Result<SolverReport>) + Sync,
{
    let work = |inst: &BenchInstance| {
        let results = run_instance(inst, cfg);
        results
            .into_iter()
            .map(|(k, out)| {
                inspect(inst, k, &out);
                let row = row_from(&inst.id, k, &out, cfg.timing);
                let trace = Trace {
                    instance_id: inst.id.clone(),
                    solver: k,
                    residuals: out.map(|r| r.trace).unwrap_or_default(),
                };
                (row, trace)
            })
            .collect::<Vec<_>>()
    };
    let per_instance: Vec<Vec<(RunRow, Trace)>> = if cfg.parallel {
        instances.par_iter().map(work).collect()
    } else {
        instances.iter().map(work).collect()
    };
    let (rows, traces): (Vec<_>, Vec<_>) = per_instance.into_iter().flatten().unzip();

    let summary = cfg
        .solvers
        .iter()
        .map(|k| {
            let mine: Vec<RunRow> = rows.iter().filter(|r| r.solver == *k).cloned().collect();
            (k.name().to_string(), summarize(&mine))
        })
        .collect();
    RunReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.solver.clone(),
        metadata: BTreeMap::new(),
        summary,
        rows,
        traces,
    }
}

pub fn run_experiment(instances: &[BenchInstance], cfg: &ExperimentConfig) -> RunReport {
    run_experiment_with(instances, cfg, |_, _, _| {})
}

impl RunReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format: one line per (instance, solver, iteration).
    pub fn write_traces<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["instance_id", "solver", "iteration", "residual_inf"])?;
        for t in &self.traces {
            for (k, r) in t.residuals.iter().enumerate() {
                w.write_record([t.instance_id.as_str(), t.solver.name(), &k.to_string(), &r.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Writes `results.csv`, `traces.csv` and `summary.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(File::create(dir.join("results.csv"))?)?;
        self.write_traces(File::create(dir.join("traces.csv"))?)?;
        let mut f = File::create(dir.join("summary.json"))?;
        self.write_summary(&mut f)?;
        writeln!(f)?;
        Ok(())
    }
}

pub const CSV_HEADER: [&str; 12] = [
    "instance_id",
    "solver",
    "iterations",
    "dual_grad_calls",
    "hessian_vec_calls",
    "homogeneous_calls",
    "oracle_calls",
    "prox_calls",
    "final_residual_inf",
    "wall_ms",
    "converged",
    "error",
];

/// Reads rows written by [`RunReport::write_csv`].
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
