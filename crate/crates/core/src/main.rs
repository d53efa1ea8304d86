use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use treeprox::bench::cache::load_or_factor;
use treeprox::bench::experiment::{BenchInstance, ExperimentConfig};
use treeprox::bench::generate::{ConstraintStyle, PenaltyKind};
use treeprox::bench::{
    gen_random_instance, gen_spring_mass, read_problem, run_experiment, spring_mass_suite, write_problem,
    RandomSpec, SpringMassParams,
};
use treeprox::solver::{
    solve, verify_report, BacktrackingRule, OracleCounts, SolverConfig, SolverContext, SolverKind, Status,
    Verification,
};
use treeprox::{factor, Result};

#[derive(Parser)]
#[command(name = "treeprox", version, about = "Dual proximal solvers for scenario-tree optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem file.
    Solve(SolveArgs),
    /// Run a benchmark suite.
    Bench {
        #[command(subcommand)]
        suite: BenchSuite,
    },
    /// Write a generated problem file.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Check a problem file and list every violated rule.
    Validate { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Backtracking {
    None,
    Simple,
    Original,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 5e-4)]
    eps: f64,
    /// Step size; defaults to 0.95 over the estimated Lipschitz constant.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 5)]
    memory: usize,
    /// Start from this many accelerated gradient iterations.
    #[arg(long, num_args = 0..=1, default_missing_value = "5")]
    warm_start: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, value_enum, default_value_t = Backtracking::None)]
    backtracking: Backtracking,
}

impl SolverArgs {
    fn config(&self, precondition: bool) -> SolverConfig {
        SolverConfig {
            lambda: self.lambda,
            eps: self.eps,
            memory: self.memory,
            max_iters: self.max_iters,
            warm_start: self.warm_start.is_some(),
            warm_start_iters: self.warm_start.unwrap_or(5),
            precondition,
            backtracking: match self.backtracking {
                Backtracking::None => BacktrackingRule::None,
                Backtracking::Simple => BacktrackingRule::Simple,
                Backtracking::Original => BacktrackingRule::Original,
            },
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    file: PathBuf,
    #[arg(long, default_value = "nama")]
    solver: SolverKind,
    #[command(flatten)]
    solver_args: SolverArgs,
    #[arg(long)]
    precondition: bool,
    /// Directory holding cached factorizations.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Report destination; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchSuite {
    /// Spring-mass-damper array with sampled initial states.
    SpringMass {
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        horizon: usize,
        #[arg(long, value_delimiter = ',', default_value = "minfbe,nama,gpad")]
        solvers: Vec<SolverKind>,
        #[command(flatten)]
        solver_args: SolverArgs,
        /// Solve the unscaled dual.
        #[arg(long)]
        no_precondition: bool,
        /// Write zero wall times so that outputs are byte-reproducible.
        #[arg(long)]
        no_timing: bool,
        /// Run instances one after another.
        #[arg(long)]
        serial: bool,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenKind {
    /// Random tree and random data.
    Random {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        nx: usize,
        #[arg(long, default_value_t = 2)]
        nu: usize,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        #[arg(long, default_value_t = 3)]
        max_branching: usize,
        #[arg(long, default_value_t = 50)]
        max_nodes: usize,
        /// Soft penalties instead of hard boxes.
        #[arg(long)]
        l1: bool,
        /// Only input bounds.
        #[arg(long)]
        input_box: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spring-mass-damper array with a Markov-switching disturbance.
    SpringMass {
        #[arg(long, default_value_t = 5)]
        masses: usize,
        #[arg(long, default_value_t = 11)]
        horizon: usize,
        /// Root state, comma separated; zero by default.
        #[arg(long, value_delimiter = ',')]
        root_state: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct SolveOutput {
    solver: SolverKind,
    status: Status,
    iterations: usize,
    counts: OracleCounts,
    oracle_calls: usize,
    residual_inf: f64,
    lambda: f64,
    lambda_reductions: usize,
    preconditioned: bool,
    wall_ms: f64,
    verification: VerificationOutput,
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    y: Vec<f64>,
    z: Vec<f64>,
    trace: Vec<f64>,
}

#[derive(Serialize)]
struct VerificationOutput {
    residual_inf: f64,
    subgradient_distance: f64,
    stationarity: f64,
    dynamics_feasible: bool,
    passed: bool,
}

fn verification_output(v: &Verification, eps: f64, lambda: f64) -> VerificationOutput {
    VerificationOutput {
        residual_inf: v.residual_inf,
        subgradient_distance: v.subgradient_distance,
        stationarity: v.stationarity,
        dynamics_feasible: v.dynamics_feasible,
        passed: v.passes(eps, lambda),
    }
}

fn context(prob: treeprox::ProblemInstance, cache_dir: Option<&Path>) -> Result<SolverContext> {
    match cache_dir {
        Some(dir) => {
            let cache = load_or_factor(&prob, dir)?;
            SolverContext::with_cache(prob, cache)
        }
        None => SolverContext::new(prob),
    }
}

fn run_solve(args: &SolveArgs) -> Result<ExitCode> {
    let prob = read_problem(&args.file)?;
    let violations = prob.validate();
    if !violations.is_empty() {
        print_violations(&violations);
        return Ok(ExitCode::FAILURE);
    }
    let cfg = args.solver_args.config(false);
    let ctx = if args.precondition {
        let (scaled, scale) = treeprox::solver::precondition(&prob)?;
        context(scaled, args.cache_dir.as_deref())?.with_dual_scaling(scale)?
    } else {
        context(prob.clone(), args.cache_dir.as_deref())?
    };
    let report = solve(&ctx, args.solver, &cfg, None)?;
    let cache = factor(&prob)?;
    let v = verify_report(&prob, &cache, &report)?;
    let out = SolveOutput {
        solver: report.solver,
        status: report.status,
        iterations: report.iterations,
        counts: report.counts,
        oracle_calls: report.counts.oracle_calls(),
        residual_inf: report.residual_inf,
        lambda: report.lambda,
        lambda_reductions: report.lambda_reductions,
        preconditioned: report.preconditioned,
        wall_ms: report.wall_time.as_secs_f64() * 1e3,
        verification: verification_output(&v, cfg.eps, report.lambda),
        x: report.x.xs.iter().map(|v| v.as_slice().to_vec()).collect(),
        u: report.x.us.iter().map(|v| v.as_slice().to_vec()).collect(),
        y: report.y.as_slice().to_vec(),
        z: report.z.as_slice().to_vec(),
        trace: report.trace.clone(),
    };
    let text = serde_json::to_string_pretty(&out)?;
    match &args.out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    eprintln!(
        "{}: {:?} after {} iterations, {} oracle calls, residual {:.3e}",
        report.solver,
        report.status,
        report.iterations,
        report.counts.oracle_calls(),
        report.residual_inf
    );
    Ok(if report.converged() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn run_bench(suite: &BenchSuite) -> Result<ExitCode> {
    let BenchSuite::SpringMass {
        samples,
        seed,
        horizon,
        solvers,
        solver_args,
        no_precondition,
        no_timing,
        serial,
        cache_dir,
        out,
    } = suite;
    let params = SpringMassParams {
        horizon: *horizon,
        ..Default::default()
    };
    let precondition = !no_precondition;
    let instances: Vec<BenchInstance> =
        spring_mass_suite(&params, *samples, *seed, precondition, cache_dir.as_deref())?;
    let cfg = ExperimentConfig {
        solvers: solvers.clone(),
        solver: solver_args.config(precondition),
        parallel: !serial,
        timing: !no_timing,
    };
    let mut report = run_experiment(&instances, &cfg);
    let meta = &mut report.metadata;
    meta.insert("suite".into(), "spring_mass".into());
    meta.insert("samples".into(), samples.to_string());
    meta.insert("seed".into(), seed.to_string());
    meta.insert("horizon".into(), horizon.to_string());
    meta.insert("masses".into(), params.masses.to_string());
    meta.insert("tree".into(), "full binary Markov expansion".into());
    if let Some(inst) = instances.first() {
        meta.insert("nonleaf_nodes".into(), inst.base.problem().tree().num_nonleaf().to_string());
        meta.insert("lipschitz".into(), inst.base.lipschitz().to_string());
    }
    report.write_dir(out)?;
    for (name, s) in &report.summary {
        println!(
            "{name:>7}: {}/{} converged, median {:.1} calls, p84 {:.1}, p95 {:.1}, {:.0}% within 50",
            s.converged,
            s.instances,
            s.median_oracle_calls,
            s.p84_oracle_calls,
            s.p95_oracle_calls,
            100.0 * s.fraction_within_budget
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn run_gen(kind: &GenKind) -> Result<ExitCode> {
    match kind {
        GenKind::Random {
            seed,
            nx,
            nu,
            horizon,
            max_branching,
            max_nodes,
            l1,
            input_box,
            out,
        } => {
            let spec = RandomSpec {
                nx: *nx,
                nu: *nu,
                horizon: *horizon,
                max_branching: *max_branching,
                max_nodes: *max_nodes,
                penalty: if *l1 { PenaltyKind::ScaledL1 } else { PenaltyKind::Box },
                style: if *input_box {
                    ConstraintStyle::InputBox
                } else {
                    ConstraintStyle::Dense
                },
                ..Default::default()
            };
            write_problem(&gen_random_instance(*seed, &spec)?, out)?;
        }
        GenKind::SpringMass {
            masses,
            horizon,
            root_state,
            out,
        } => {
            let params = SpringMassParams {
                masses: *masses,
                horizon: *horizon,
                ..Default::default()
            };
            let p = if root_state.is_empty() {
                DVector::zeros(params.nx())
            } else {
                DVector::from_column_slice(root_state)
            };
            write_problem(&gen_spring_mass(&params, p)?, out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_violations(violations: &[treeprox::tree::Violation]) {
    for v in violations {
        match v.node {
            Some(n) => println!("node {n}: {}", v.rule),
            None => println!("{}", v.rule),
        }
    }
}

fn run_validate(file: &Path) -> Result<ExitCode> {
    let violations = read_problem(file)?.validate();
    if violations.is_empty() {
        println!("ok");
        Ok(ExitCode::SUCCESS)
    } else {
        print_violations(&violations);
        Ok(ExitCode::FAILURE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => run_solve(args),
        Command::Bench { suite } => run_bench(suite),
        Command::Gen { kind } => run_gen(kind),
        Command::Validate { file } => run_validate(file),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
