//! Newton-type alternating minimization: L-BFGS directions on the fixed-point
//! residual, globalized by the envelope between `T(y)` and `y + d`.

use nalgebra::DVector;

use super::{
    decrease_slack, prepare, Error, NamaUpdate, Run, SolverConfig, SolverContext, SolverKind, SolverReport,
    Status, MIN_TAU,
};
use crate::error::Result;
use crate::fbe::{FbState, LineSearchCert};
use crate::lbfgs::LbfgsBuffer;

pub fn solve_nama(ctx: &SolverContext, cfg: &SolverConfig, y0: Option<&DVector<f64>>) -> Result<SolverReport> {
    let kind = if cfg.nama_parallel_linesearch {
        SolverKind::Pnama
    } else {
        SolverKind::Nama
    };
    let ctx = prepare(ctx, cfg)?;
    let mut run = Run::new(&ctx, cfg);
    let y = run.initial_dual(cfg, y0)?;
    let mut state = run.fb_step(y)?;
    let mut buffer = LbfgsBuffer::new(cfg.memory, cfg.curvature_tol);
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
            return Ok(run.finish(kind, Status::Converged, iterations, state));
        }
        if iterations >= cfg.max_iters {
            return Ok(run.finish(kind, Status::MaxItersExceeded, iterations, state));
        }

        let d = buffer.apply_direction(&state.residual);
        let ((x0_r, h_r), (_, h_d)) = if cfg.nama_parallel_linesearch {
            let run = &run;
            let r = &state.residual;
            let (a, b) = rayon::join(|| run.homogeneous(r), || run.homogeneous(&d));
            (a?, b?)
        } else {
            (run.homogeneous(&state.residual)?, run.homogeneous(&d)?)
        };
        run.counts.homogeneous += 2;
        let (next, reduced) = run.backtrack(cfg, state, &h_r)?;
        state = next;
        if reduced {
            buffer.clear();
            continue;
        }

        // Envelope ingredients at T(y) = y - lambda r, by affinity of x(.)
        let lambda = state.lambda;
        let r = &state.residual;
        let y_fb = &state.y - r * lambda;
        let x_fb = state.x.add_scaled(-lambda, &x0_r);
        let h_fb = &state.hx - &h_r * lambda;
        let fhat_fb = state.fhat + lambda * state.hx.dot(r) - 0.5 * lambda * lambda * h_r.dot(r);
        let base = FbState::with_fhat(&ctx.g, y_fb, lambda, x_fb, h_fb, fhat_fb);
        run.counts.prox += 1;
        let base_phi = base.value()?;

        let d_fb = &d + r * lambda;
        let h_dfb = &h_d + &h_r * lambda;
        let cert = LineSearchCert::new(&base, &d_fb, h_dfb);
        let phi = state.value()?;
        let slack = decrease_slack(phi);

        let mut tau = 1.0;
        let trial = loop {
            let trial = cert.trial(&ctx.g, tau);
            run.counts.prox += 1;
            if trial.conj.is_finite() && base_phi + cert.change(&trial) <= phi + slack {
                break trial;
            }
            tau *= 0.5;
            if tau < MIN_TAU {
                return Err(Error::LineSearchStalled { tau });
            }
        };

        let y_next = match cfg.nama_update {
            NamaUpdate::ForwardBackward => trial.t,
            NamaUpdate::Anchored => &state.y - (&trial.z - &trial.hw) * lambda,
        };
        let s = &y_next - &state.y;
        let r_old = state.residual.clone();
        state = run.fb_step(y_next)?;
        let q = &state.residual - &r_old;
        buffer.push(s, q, r_old.norm_squared())?;
        iterations += 1;
        fresh = true;
    }
}
