//! Dual solvers: MINFBE and NAMA with L-BFGS directions, and accelerated
//! proximal gradient (GPAD) as a baseline.

mod gpad;
mod minfbe;
mod nama;
mod precondition;

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{factor, FactorCache};
use crate::fbe::FbState;
use crate::oracle::{dual_grad, estimate_lipschitz, hessian_vec};
use crate::problem::{PrimalPoint, ProblemInstance};
use crate::prox::SeparableNonsmooth;

pub use gpad::{solve_gpad, warm_start};
pub use minfbe::solve_minfbe;
pub use nama::solve_nama;
pub use precondition::precondition;

/// Smallest admissible line-search step.
pub const MIN_TAU: f64 = 1.0 / (1u64 << 60) as f64;
/// Smallest admissible `lambda` under backtracking.
pub const MIN_LAMBDA: f64 = 1e-14;
/// Fraction of `1 / L` used when the step is chosen automatically.
pub const AUTO_STEP_FRACTION: f64 = 0.95;
const POWER_ITERATIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktrackingRule {
    /// Halve when the quadratic upper model fails at `T(y)`.
    Original,
    /// Halve when `lambda ||grad fhat(T(y)) - grad fhat(y)|| > eps'' ||T(y) - y||`.
    Simple,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamaUpdate {
    /// `y+ = y - lambda R(w)`, anchored at the current iterate.
    Anchored,
    /// `y+ = T(w)`.
    ForwardBackward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Step size; `None` picks `AUTO_STEP_FRACTION / L`.
    pub lambda: Option<f64>,
    /// Tolerance on `||z - Hx||_inf`.
    pub eps: f64,
    /// L-BFGS curvature safeguard.
    pub curvature_tol: f64,
    /// Constant of the simple backtracking rule, in `(0, 1/2)`.
    pub backtracking_eps: f64,
    /// Slack of the original backtracking rule, in `[0, 1)`.
    pub beta: f64,
    pub memory: usize,
    pub max_iters: usize,
    pub backtracking: BacktrackingRule,
    pub warm_start: bool,
    pub warm_start_iters: usize,
    pub precondition: bool,
    pub nama_parallel_linesearch: bool,
    pub nama_update: NamaUpdate,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            eps: 5e-4,
            curvature_tol: crate::lbfgs::DEFAULT_CURVATURE_TOL,
            backtracking_eps: 0.25,
            beta: 0.0,
            memory: 5,
            max_iters: 2000,
            backtracking: BacktrackingRule::None,
            warm_start: false,
            warm_start_iters: 5,
            precondition: false,
            nama_parallel_linesearch: false,
            nama_update: NamaUpdate::ForwardBackward,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("lambda = {l} must be positive"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps = {} must be positive", self.eps));
        }
        if !(self.curvature_tol > 0.0) {
            return bad(format!("curvature tolerance {} must be positive", self.curvature_tol));
        }
        if !(self.backtracking_eps > 0.0 && self.backtracking_eps < 0.5) {
            return bad(format!("backtracking constant {} outside (0, 1/2)", self.backtracking_eps));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return bad(format!("beta = {} outside [0, 1)", self.beta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Minfbe,
    Nama,
    /// NAMA with the two homogeneous solves of the line search run concurrently.
    Pnama,
    Gpad,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [Self::Minfbe, Self::Nama, Self::Pnama, Self::Gpad];

    pub fn name(self) -> &'static str {
        match self {
            Self::Minfbe => "minfbe",
            Self::Nama => "nama",
            Self::Pnama => "pnama",
            Self::Gpad => "gpad",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParams(format!("unknown solver {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounts {
    pub dual_grad: usize,
    /// Homogeneous solves spent on envelope gradients.
    pub hessian_vec: usize,
    /// Homogeneous solves spent on line-search directions.
    pub homogeneous: usize,
    pub prox: usize,
}

impl OracleCounts {
    /// Dual-gradient plus homogeneous solves, the two expensive tree sweeps.
    pub fn oracle_calls(&self) -> usize {
        self.dual_grad + self.hessian_vec + self.homogeneous
    }

    fn add(&mut self, other: &Self) {
        self.dual_grad += other.dual_grad;
        self.hessian_vec += other.hessian_vec;
        self.homogeneous += other.homogeneous;
        self.prox += other.prox;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxItersExceeded,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub solver: SolverKind,
    pub status: Status,
    pub x: PrimalPoint,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    /// `||z - Hx||_inf` in the original coordinates.
    pub residual_inf: f64,
    pub iterations: usize,
    pub counts: OracleCounts,
    /// Residual at every visited iterate, starting with the initial one.
    pub trace: Vec<f64>,
    /// Envelope value at every iterate (MINFBE and NAMA only).
    pub fbe_trace: Vec<f64>,
    /// Final step size, in the coordinates the solver ran in.
    pub lambda: f64,
    pub lambda_reductions: usize,
    pub preconditioned: bool,
    pub wall_time: Duration,
}

impl SolverReport {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

/// A problem together with everything the solvers precompute for it.
#[derive(Debug, Clone)]
pub struct SolverContext {
    prob: ProblemInstance,
    cache: FactorCache,
    g: SeparableNonsmooth,
    lipschitz: f64,
    /// Per-coordinate dual scaling `sqrt(pi)` when preconditioned.
    scale: Option<DVector<f64>>,
}

impl SolverContext {
    pub fn new(prob: ProblemInstance) -> Result<Self> {
        let cache = factor(&prob)?;
        Self::with_cache(prob, cache)
    }

    pub fn with_cache(prob: ProblemInstance, cache: FactorCache) -> Result<Self> {
        cache.check(&prob)?;
        let g = SeparableNonsmooth::from_problem(&prob)?;
        let lipschitz = estimate_lipschitz(&cache, &prob, POWER_ITERATIONS)?;
        Ok(Self {
            prob,
            cache,
            g,
            lipschitz,
            scale: None,
        })
    }

    /// Context of the diagonally rescaled problem; results are reported in
    /// the original coordinates.
    pub fn preconditioned(prob: &ProblemInstance) -> Result<Self> {
        let (scaled, scale) = precondition(prob)?;
        Self::new(scaled)?.with_dual_scaling(scale)
    }

    /// Marks the context as holding a rescaled problem whose dual variable is
    /// `y / scale` of the original one.
    pub fn with_dual_scaling(mut self, scale: DVector<f64>) -> Result<Self> {
        self.prob.check_dual(&scale)?;
        if !scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParams("dual scaling must be positive".into()));
        }
        self.scale = Some(scale);
        Ok(self)
    }

    /// Same problem with another root state. The factorization and the
    /// Lipschitz estimate do not depend on it and are reused.
    pub fn with_root_state(&self, p: DVector<f64>) -> Result<Self> {
        Ok(Self {
            prob: self.prob.with_root_state(p)?,
            ..self.clone()
        })
    }

    pub fn problem(&self) -> &ProblemInstance {
        &self.prob
    }

    pub fn cache(&self) -> &FactorCache {
        &self.cache
    }

    pub fn nonsmooth(&self) -> &SeparableNonsmooth {
        &self.g
    }

    /// Estimated Lipschitz constant of the dual gradient.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn is_preconditioned(&self) -> bool {
        self.scale.is_some()
    }

    pub fn default_lambda(&self) -> f64 {
        if self.lipschitz > 0.0 {
            AUTO_STEP_FRACTION / self.lipschitz
        } else {
            1.0
        }
    }

    fn residual_inf(&self, r: &DVector<f64>) -> f64 {
        match &self.scale {
            None => r.amax(),
            Some(s) => r.iter().zip(s.iter()).fold(0.0, |m, (a, b)| m.max((a / b).abs())),
        }
    }

    fn to_internal_dual(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.scale {
            None => y.clone(),
            Some(s) => y.component_div(s),
        }
    }

    fn to_original_dual(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.scale {
            None => y.clone(),
            Some(s) => y.component_mul(s),
        }
    }

    fn to_original_primal_image(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.scale {
            None => z.clone(),
            Some(s) => z.component_div(s),
        }
    }
}

fn prepare<'a>(ctx: &'a SolverContext, cfg: &SolverConfig) -> Result<Cow<'a, SolverContext>> {
    cfg.validate()?;
    if cfg.precondition && !ctx.is_preconditioned() {
        Ok(Cow::Owned(SolverContext::preconditioned(&ctx.prob)?))
    } else {
        Ok(Cow::Borrowed(ctx))
    }
}

/// Mutable state shared by the solver loops: iterate, step size and counters.
struct Run<'a> {
    ctx: &'a SolverContext,
    counts: OracleCounts,
    lambda: f64,
    trace: Vec<f64>,
    fbe_trace: Vec<f64>,
    lambda_reductions: usize,
    start: Instant,
}

impl<'a> Run<'a> {
    fn new(ctx: &'a SolverContext, cfg: &SolverConfig) -> Self {
        let lambda = match cfg.lambda {
            Some(l) => l,
            None => ctx.default_lambda(),
        };
        Self {
            ctx,
            counts: OracleCounts::default(),
            lambda,
            trace: Vec::new(),
            fbe_trace: Vec::new(),
            lambda_reductions: 0,
            start: Instant::now(),
        }
    }

    /// Starting dual point in the solver's coordinates.
    fn initial_dual(&mut self, cfg: &SolverConfig, y0: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        let m = self.ctx.prob.dual_dim();
        let y = match y0 {
            Some(y) => {
                self.ctx.prob.check_dual(y)?;
                self.ctx.to_internal_dual(y)
            }
            None => DVector::zeros(m),
        };
        if cfg.warm_start && cfg.warm_start_iters > 0 {
            let (y, counts) = gpad::iterate(self.ctx, self.lambda, y, cfg.warm_start_iters)?;
            self.counts.add(&counts);
            Ok(y)
        } else {
            Ok(y)
        }
    }

    fn fb_step(&mut self, y: DVector<f64>) -> Result<FbState> {
        let prob = &self.ctx.prob;
        let x = dual_grad(&self.ctx.cache, prob, &y)?;
        let hx = prob.apply_h(&x)?;
        self.counts.dual_grad += 1;
        self.counts.prox += 1;
        Ok(FbState::from_primal(prob, &self.ctx.g, y, self.lambda, x, hx))
    }

    /// `(x0(d), H x0(d))`.
    fn homogeneous(&self, d: &DVector<f64>) -> Result<(PrimalPoint, DVector<f64>)> {
        let x0 = hessian_vec(&self.ctx.cache, &self.ctx.prob, d)?;
        let hx0 = self.ctx.prob.apply_h(&x0)?;
        Ok((x0, hx0))
    }

    fn residual_inf(&self, state: &FbState) -> f64 {
        self.ctx.residual_inf(&state.residual)
    }

    /// Applies the backtracking rule given `h_r = H x0(R)`. On a reduction
    /// the state is refreshed for the new step with one prox; the flag tells
    /// whether that happened.
    fn backtrack(&mut self, cfg: &SolverConfig, state: FbState, h_r: &DVector<f64>) -> Result<(FbState, bool)> {
        let r = &state.residual;
        let shrink = match cfg.backtracking {
            BacktrackingRule::None => false,
            BacktrackingRule::Simple => self.lambda * h_r.norm() > cfg.backtracking_eps * r.norm(),
            BacktrackingRule::Original => -self.lambda * r.dot(h_r) > (1.0 - cfg.beta) * r.norm_squared(),
        };
        if !shrink {
            return Ok((state, false));
        }
        self.lambda *= 0.5;
        self.lambda_reductions += 1;
        if self.lambda < MIN_LAMBDA {
            return Err(Error::StepUnderflow { lambda: self.lambda });
        }
        self.counts.prox += 1;
        let refreshed = FbState::with_fhat(&self.ctx.g, state.y, self.lambda, state.x, state.hx, state.fhat);
        Ok((refreshed, true))
    }

    fn finish(self, solver: SolverKind, status: Status, iterations: usize, state: FbState) -> SolverReport {
        let ctx = self.ctx;
        SolverReport {
            solver,
            status,
            residual_inf: ctx.residual_inf(&state.residual),
            y: ctx.to_original_dual(&state.y),
            z: ctx.to_original_primal_image(&state.z),
            x: state.x,
            iterations,
            counts: self.counts,
            trace: self.trace,
            fbe_trace: self.fbe_trace,
            lambda: self.lambda,
            lambda_reductions: self.lambda_reductions,
            preconditioned: ctx.is_preconditioned(),
            wall_time: self.start.elapsed(),
        }
    }
}

/// Allowed increase of the envelope attributed to rounding.
fn decrease_slack(phi: f64) -> f64 {
    1e-12 * (1.0 + phi.abs())
}

/// Runs the chosen solver.
pub fn solve(
    ctx: &SolverContext,
    kind: SolverKind,
    cfg: &SolverConfig,
    y0: Option<&DVector<f64>>,
) -> Result<SolverReport> {
    match kind {
        SolverKind::Minfbe => solve_minfbe(ctx, cfg, y0),
        SolverKind::Nama => solve_nama(
            ctx,
            &SolverConfig {
                nama_parallel_linesearch: false,
                ..cfg.clone()
            },
            y0,
        ),
        SolverKind::Pnama => solve_nama(
            ctx,
            &SolverConfig {
                nama_parallel_linesearch: true,
                ..cfg.clone()
            },
            y0,
        ),
        SolverKind::Gpad => solve_gpad(ctx, cfg, y0),
    }
}

/// Independent check of a returned primal-dual triple on the original problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    /// `||z - Hx||_inf`
    pub residual_inf: f64,
    /// `dist_inf(y, dg(z))`
    pub subgradient_distance: f64,
    /// `||x - x(y)||_inf / (1 + ||x||_inf)`: zero iff `-H'y` is a subgradient
    /// of `f` at `x`.
    pub stationarity: f64,
    pub dynamics_feasible: bool,
}

impl Verification {
    pub fn passes(&self, eps: f64, lambda: f64) -> bool {
        let tiny = 1e-12;
        self.dynamics_feasible
            && self.residual_inf <= eps * (1.0 + 1e-9)
            && self.subgradient_distance <= lambda * eps * (1.0 + 1e-9) + tiny
            && self.stationarity <= 1e-8
    }
}

pub fn verify(
    prob: &ProblemInstance,
    cache: &FactorCache,
    x: &PrimalPoint,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<Verification> {
    let g = SeparableNonsmooth::from_problem(prob)?;
    let hx = prob.apply_h(x)?;
    let residual_inf = (z - &hx).amax();
    let subgradient_distance = g.subgradient_distance(z, y)?;
    let xy = dual_grad(cache, prob, y)?;
    let stationarity = xy.add_scaled(-1.0, x).norm_inf() / (1.0 + x.norm_inf());
    Ok(Verification {
        residual_inf,
        subgradient_distance,
        stationarity,
        dynamics_feasible: prob.eval_f(x).is_finite(),
    })
}

/// [`verify`] applied to a report.
pub fn verify_report(prob: &ProblemInstance, cache: &FactorCache, report: &SolverReport) -> Result<Verification> {
    verify(prob, cache, &report.x, &report.y, &report.z)
}
