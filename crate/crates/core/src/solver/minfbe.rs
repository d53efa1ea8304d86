//! Envelope minimization with L-BFGS directions and an exact-cost line search.

use nalgebra::DVector;

use super::{decrease_slack, prepare, Error, Run, SolverConfig, SolverContext, SolverKind, SolverReport, Status, MIN_TAU};
use crate::error::Result;
use crate::fbe::{fbe_grad_parts, LineSearchCert};
use crate::lbfgs::LbfgsBuffer;

pub fn solve_minfbe(ctx: &SolverContext, cfg: &SolverConfig, y0: Option<&DVector<f64>>) -> Result<SolverReport> {
    let ctx = prepare(ctx, cfg)?;
    let mut run = Run::new(&ctx, cfg);
    let y = run.initial_dual(cfg, y0)?;
    let mut state = run.fb_step(y)?;
    let mut buffer = LbfgsBuffer::new(cfg.memory, cfg.curvature_tol);
    // (step, gradient) of the previous iterate, waiting for the new gradient
    let mut pending: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut iterations = 0;
    let mut fresh = true;
    loop {
        if fresh {
            let res = run.residual_inf(&state);
            run.trace.push(res);
            run.fbe_trace.push(state.value()?);
            fresh = false;
        }
        if run.residual_inf(&state) <= cfg.eps {
            return Ok(run.finish(SolverKind::Minfbe, Status::Converged, iterations, state));
        }
        if iterations >= cfg.max_iters {
            return Ok(run.finish(SolverKind::Minfbe, Status::MaxItersExceeded, iterations, state));
        }

        let (grad, h_r) = fbe_grad_parts(&state, &ctx.cache, &ctx.prob)?;
        run.counts.hessian_vec += 1;
        let (next, reduced) = run.backtrack(cfg, state, &h_r)?;
        state = next;
        if reduced {
            buffer.clear();
            pending = None;
            continue;
        }
        if let Some((s, grad_old)) = pending.take() {
            let q = &grad - &grad_old;
            buffer.push(s, q, grad_old.norm_squared())?;
        }

        let d = buffer.apply_direction(&grad);
        let (_, h_d) = run.homogeneous(&d)?;
        run.counts.homogeneous += 1;
        let cert = LineSearchCert::new(&state, &d, h_d);
        let phi = state.value()?;
        let slack = decrease_slack(phi);

        let mut tau = 1.0;
        let trial = loop {
            let trial = cert.trial(&ctx.g, tau);
            run.counts.prox += 1;
            if trial.conj.is_finite() && cert.change(&trial) <= slack {
                break trial;
            }
            tau *= 0.5;
            if tau < MIN_TAU {
                return Err(Error::LineSearchStalled { tau });
            }
        };

        let y_next = trial.t;
        let s = &y_next - &state.y;
        state = run.fb_step(y_next)?;
        pending = Some((s, grad));
        iterations += 1;
        fresh = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::generate::{gen_random_instance, RandomSpec};
    use crate::solver::{verify_report, BacktrackingRule};

    fn ctx(seed: u64) -> SolverContext {
        SolverContext::new(gen_random_instance(seed, &RandomSpec::default()).unwrap()).unwrap()
    }

    #[test]
    fn converges_and_verifies() {
        let ctx = ctx(11);
        let cfg = SolverConfig {
            eps: 1e-7,
            ..Default::default()
        };
        let rep = solve_minfbe(&ctx, &cfg, None).unwrap();
        assert!(rep.converged());
        let v = verify_report(ctx.problem(), ctx.cache(), &rep).unwrap();
        assert!(v.passes(cfg.eps, rep.lambda), "{v:?}");
    }

    #[test]
    fn envelope_is_monotone() {
        let ctx = ctx(12);
        let rep = solve_minfbe(&ctx, &SolverConfig { eps: 1e-8, ..Default::default() }, None).unwrap();
        for w in rep.fbe_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()));
        }
    }

    #[test]
    fn three_calls_per_iteration() {
        let ctx = ctx(13);
        let rep = solve_minfbe(&ctx, &SolverConfig::default(), None).unwrap();
        assert_eq!(rep.counts.oracle_calls(), 3 * rep.iterations + 1);
    }

    #[test]
    fn oversized_step_is_reduced() {
        let ctx = ctx(14);
        let cfg = SolverConfig {
            lambda: Some(50.0 / ctx.lipschitz()),
            backtracking: BacktrackingRule::Simple,
            eps: 1e-6,
            ..Default::default()
        };
        let rep = solve_minfbe(&ctx, &cfg, None).unwrap();
        assert!(rep.converged());
        assert!(rep.lambda_reductions > 0);
        assert!(rep.lambda < cfg.lambda.unwrap());
    }
}
