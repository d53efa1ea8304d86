//! Stage-parallel oracles built on a [`FactorCache`]: the dual minimizer
//! `x(y)`, its homogeneous part `x0(r)` (Hessian-vector products) and the
//! smooth dual value `fhat`.
//!
//! Stages are swept serially; nodes of one stage are processed in parallel
//! once the stage is wide enough to amortize the scheduling overhead.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::factor::FactorCache;
use crate::problem::{PrimalPoint, ProblemInstance};

/// Stage width from which node loops are dispatched to the thread pool.
pub const PARALLEL_STAGE_WIDTH: usize = 128;

fn for_each_node<T, F>(items: &mut [T], offset: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    if items.len() >= PARALLEL_STAGE_WIDTH {
        items
            .par_iter_mut()
            .with_min_len(PARALLEL_STAGE_WIDTH / 4)
            .enumerate()
            .for_each(|(k, t)| f(offset + k, t));
    } else {
        items.iter_mut().enumerate().for_each(|(k, t)| f(offset + k, t));
    }
}

fn sweep(cache: &FactorCache, prob: &ProblemInstance, y: &DVector<f64>, affine: bool) -> PrimalPoint {
    let tree = prob.tree();
    let layout = prob.layout();
    let (nx, nu) = (prob.nx(), prob.nu());
    let n = tree.num_nodes();
    let num_nonleaf = tree.num_nonleaf();
    let horizon = tree.num_stages();

    let mut qhat = vec![DVector::<f64>::zeros(nx); n];
    let mut us = vec![DVector::<f64>::zeros(nu); num_nonleaf];

    {
        let leaf_start = tree.stage_range(horizon).start;
        for_each_node(&mut qhat[leaf_start..], leaf_start, |i, q| {
            let con = prob.terminal_constraint(i);
            let yi = y.rows_range(layout.terminal_block(tree.leaf_index(i)));
            q.gemv_tr(1.0, &con.f, &yi, 0.0);
            if affine {
                *q += cache.c_hat(i);
            }
        });
    }

    for t in (0..horizon).rev() {
        let range = tree.stage_range(t);
        let (head, tail) = qhat.split_at_mut(range.end);
        let next: &[DVector<f64>] = tail;
        let next_start = range.end;
        let mut pairs: Vec<(&mut DVector<f64>, &mut DVector<f64>)> =
            head[range.clone()].iter_mut().zip(us[range.clone()].iter_mut()).collect();
        for_each_node(&mut pairs, range.start, |i, (q, u)| {
            if affine {
                q.copy_from(cache.c_hat(i));
                u.copy_from(&cache.node(i).sigma);
            }
            for &j in tree.children(i) {
                let e = cache.edge(j);
                let yj = y.rows_range(layout.stage_block(j));
                let qj = &next[j - next_start];
                q.gemv_tr(1.0, &e.d, &yj, 1.0);
                q.gemv_tr(1.0, &e.lambda, qj, 1.0);
                u.gemv(1.0, &e.phi, &yj, 1.0);
                u.gemv(1.0, &e.theta, qj, 1.0);
            }
        });
    }
    drop(qhat);

    let mut xs = vec![DVector::<f64>::zeros(nx); n];
    if affine {
        xs[0].copy_from(prob.root_state());
    }
    for t in 0..horizon {
        let range = tree.stage_range(t);
        {
            let xs_ref = &xs;
            for_each_node(&mut us[range.clone()], range.start, |i, u| {
                u.gemv(1.0, &cache.node(i).k, &xs_ref[i], 1.0);
            });
        }
        let (head, tail) = xs.split_at_mut(range.end);
        let end = tree.stage_range(t + 1).end;
        let us_ref = &us;
        let head: &[DVector<f64>] = head;
        for_each_node(&mut tail[..end - range.end], range.end, |j, x| {
            let a = tree.ancestor(j).unwrap();
            let d = prob.dynamics(j);
            x.gemv(1.0, &d.a, &head[a], 0.0);
            x.gemv(1.0, &d.b, &us_ref[a], 1.0);
            if affine {
                *x += &d.c;
            }
        });
    }
    PrimalPoint { xs, us }
}

/// `x(y) = argmin_x <Hx, y> + f(x)`. The result satisfies the dynamics exactly.
pub fn dual_grad(cache: &FactorCache, prob: &ProblemInstance, y: &DVector<f64>) -> Result<PrimalPoint> {
    cache.check(prob)?;
    prob.check_dual(y)?;
    Ok(sweep(cache, prob, y, true))
}

/// Linear part `x0(r)` of `x(.)`; the dual Hessian acts as `r -> -H x0(r)`.
pub fn hessian_vec(cache: &FactorCache, prob: &ProblemInstance, r: &DVector<f64>) -> Result<PrimalPoint> {
    cache.check(prob)?;
    prob.check_dual(r)?;
    Ok(sweep(cache, prob, r, false))
}

/// Gradient of the smooth dual term, `-H x(y)`.
pub fn grad_fhat(cache: &FactorCache, prob: &ProblemInstance, y: &DVector<f64>) -> Result<DVector<f64>> {
    let x = dual_grad(cache, prob, y)?;
    Ok(-prob.apply_h(&x)?)
}

/// `fhat(y) = -<H x(y), y> - f(x(y))`.
pub fn fhat_value(cache: &FactorCache, prob: &ProblemInstance, y: &DVector<f64>) -> Result<f64> {
    let x = dual_grad(cache, prob, y)?;
    let hx = prob.apply_h(&x)?;
    Ok(fhat_from(prob, &x, &hx, y))
}

/// `fhat(y)` from an already computed `x = x(y)` and `hx = Hx`.
pub(crate) fn fhat_from(prob: &ProblemInstance, x: &PrimalPoint, hx: &DVector<f64>, y: &DVector<f64>) -> f64 {
    -hx.dot(y) - prob.smooth_cost(x)
}

/// Power-iteration estimate of the Lipschitz constant of the dual gradient,
/// i.e. the largest eigenvalue of the dual Hessian `r -> -H x0(r)`.
pub fn estimate_lipschitz(cache: &FactorCache, prob: &ProblemInstance, max_iters: usize) -> Result<f64> {
    cache.check(prob)?;
    let m = prob.dual_dim();
    if m == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let w = -prob.apply_h(&sweep(cache, prob, &v, false))?;
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        let converged = (rayleigh - estimate).abs() <= 1e-9 * rayleigh.abs();
        estimate = rayleigh;
        if converged {
            break;
        }
    }
    Ok(estimate)
}
