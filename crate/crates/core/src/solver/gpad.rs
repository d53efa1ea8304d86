//! Accelerated proximal gradient on the dual (FISTA momentum, no restart).

use nalgebra::DVector;

use super::{prepare, OracleCounts, Run, SolverConfig, SolverContext, SolverKind, SolverReport, Status};
use crate::error::Result;

fn next_theta(theta: f64) -> f64 {
    let t2 = theta * theta;
    0.5 * ((t2 * t2 + 4.0 * t2).sqrt() - t2)
}

pub fn solve_gpad(ctx: &SolverContext, cfg: &SolverConfig, y0: Option<&DVector<f64>>) -> Result<SolverReport> {
    let ctx = prepare(ctx, cfg)?;
    let mut run = Run::new(&ctx, cfg);
    let mut y = run.initial_dual(cfg, y0)?;
    let mut y_prev = y.clone();
    let (mut theta, mut theta_prev) = (1.0, 1.0);
    let mut iterations = 0;
    loop {
        let momentum = theta * (1.0 / theta_prev - 1.0);
        let w = &y + (&y - &y_prev) * momentum;
        let state = run.fb_step(w)?;
        let res = run.residual_inf(&state);
        run.trace.push(res);
        if res <= cfg.eps {
            return Ok(run.finish(SolverKind::Gpad, Status::Converged, iterations, state));
        }
        if iterations >= cfg.max_iters {
            return Ok(run.finish(SolverKind::Gpad, Status::MaxItersExceeded, iterations, state));
        }
        y_prev = std::mem::replace(&mut y, state.t);
        theta_prev = theta;
        theta = next_theta(theta);
        iterations += 1;
    }
}

/// Plain accelerated iterations from `y` with step `lambda`; returns the last
/// forward-backward point.
pub(super) fn iterate(
    ctx: &SolverContext,
    lambda: f64,
    y: DVector<f64>,
    iters: usize,
) -> Result<(DVector<f64>, OracleCounts)> {
    let cfg = SolverConfig {
        lambda: Some(lambda),
        ..Default::default()
    };
    let mut run = Run::new(ctx, &cfg);
    let mut y = y;
    let mut y_prev = y.clone();
    let (mut theta, mut theta_prev) = (1.0, 1.0);
    for _ in 0..iters {
        let momentum = theta * (1.0 / theta_prev - 1.0);
        let w = &y + (&y - &y_prev) * momentum;
        let state = run.fb_step(w)?;
        y_prev = std::mem::replace(&mut y, state.t);
        theta_prev = theta;
        theta = next_theta(theta);
    }
    Ok((y, run.counts))
}

/// Dual starting point from `warm_start_iters` accelerated iterations at zero,
/// in the original coordinates.
pub fn warm_start(ctx: &SolverContext, cfg: &SolverConfig) -> Result<DVector<f64>> {
    let ctx = prepare(ctx, cfg)?;
    let lambda = cfg.lambda.unwrap_or_else(|| ctx.default_lambda());
    let zero = DVector::zeros(ctx.problem().dual_dim());
    let (y, _) = iterate(&ctx, lambda, zero, cfg.warm_start_iters)?;
    Ok(ctx.to_original_dual(&y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_sequence_decreases_like_two_over_k() {
        let mut theta = 1.0;
        for k in 1..200 {
            theta = next_theta(theta);
            // theta_k lies in [1/(k+1), 2/(k+2)]
            assert!(theta <= 2.0 / (k as f64 + 2.0) + 1e-12);
            assert!(theta >= 1.0 / (k as f64 + 1.0));
        }
    }
}
