#![allow(dead_code)]

//! Dense reference oracles assembled directly from the per-node problem data.

use nalgebra::{DMatrix, DVector};
use treeprox::problem::{NonsmoothSpec, PrimalPoint, ProblemInstance};

/// The problem written as one dense equality-constrained QP over
/// `v = ((x^i)_all, (u^i)_nonleaf)`:
/// `min v' W v + w'v  s.t.  E v = e`, with constraint map `h v = Hx`.
pub struct DenseQp {
    pub w: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub h: DMatrix<f64>,
    nx: usize,
    nu: usize,
    num_nodes: usize,
    num_nonleaf: usize,
}

impl DenseQp {
    pub fn new(prob: &ProblemInstance) -> Self {
        let tree = prob.tree();
        let (nx, nu) = (prob.nx(), prob.nu());
        let n = tree.num_nodes();
        let nl = tree.num_nonleaf();
        let dim = n * nx + nl * nu;
        let xo = |i: usize| i * nx;
        let uo = |i: usize| n * nx + i * nu;

        let mut w = DMatrix::zeros(dim, dim);
        let mut lin = DVector::zeros(dim);
        let mut h = DMatrix::zeros(prob.dual_dim(), dim);
        let mut eq = DMatrix::zeros(n * nx, dim);
        let mut eq_rhs = DVector::zeros(n * nx);

        eq.view_mut((0, 0), (nx, nx)).fill_with_identity();
        eq_rhs.rows_mut(0, nx).copy_from(prob.root_state());

        for i in 1..n {
            let a = tree.ancestor(i).unwrap();
            let pi = tree.probability(i);
            let c = prob.stage_cost(i);
            for r in 0..nx {
                for s in 0..nx {
                    w[(xo(a) + r, xo(a) + s)] += pi * c.q[(r, s)];
                }
                lin[xo(a) + r] += pi * c.q_lin[r];
            }
            for r in 0..nu {
                for s in 0..nu {
                    w[(uo(a) + r, uo(a) + s)] += pi * c.r[(r, s)];
                }
                for s in 0..nx {
                    w[(uo(a) + r, xo(a) + s)] += pi * c.s[(r, s)];
                    w[(xo(a) + s, uo(a) + r)] += pi * c.s[(r, s)];
                }
                lin[uo(a) + r] += pi * c.r_lin[r];
            }

            let d = prob.dynamics(i);
            let row = i * nx;
            for r in 0..nx {
                eq[(row + r, xo(i) + r)] = 1.0;
                for s in 0..nx {
                    eq[(row + r, xo(a) + s)] = -d.a[(r, s)];
                }
                for s in 0..nu {
                    eq[(row + r, uo(a) + s)] = -d.b[(r, s)];
                }
                eq_rhs[row + r] = d.c[r];
            }

            let con = prob.stage_constraint(i);
            let block = prob.layout().stage_block(i);
            for (k, row) in block.enumerate() {
                for s in 0..nx {
                    h[(row, xo(a) + s)] = con.f[(k, s)];
                }
                for s in 0..nu {
                    h[(row, uo(a) + s)] = con.g[(k, s)];
                }
            }
        }
        for i in tree.leaves() {
            let pi = tree.probability(i);
            let c = prob.terminal_cost(i);
            for r in 0..nx {
                for s in 0..nx {
                    w[(xo(i) + r, xo(i) + s)] += pi * c.p[(r, s)];
                }
                lin[xo(i) + r] += pi * c.p_lin[r];
            }
            let con = prob.terminal_constraint(i);
            let block = prob.layout().terminal_block(tree.leaf_index(i));
            for (k, row) in block.enumerate() {
                for s in 0..nx {
                    h[(row, xo(i) + s)] = con.f[(k, s)];
                }
            }
        }
        Self {
            w,
            lin,
            eq,
            eq_rhs,
            h,
            nx,
            nu,
            num_nodes: n,
            num_nonleaf: nl,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn to_point(&self, v: &DVector<f64>) -> PrimalPoint {
        let xs = (0..self.num_nodes)
            .map(|i| v.rows(i * self.nx, self.nx).into_owned())
            .collect();
        let base = self.num_nodes * self.nx;
        let us = (0..self.num_nonleaf)
            .map(|i| v.rows(base + i * self.nu, self.nu).into_owned())
            .collect();
        PrimalPoint { xs, us }
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.w * v)) + self.lin.dot(v)
    }

    /// Solves `min v'Wv + (w + extra)'v  s.t.  E v = e` through the KKT system.
    pub fn solve_eq(&self, extra_lin: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let me = self.eq.nrows();
        let mut kkt = DMatrix::zeros(n + me, n + me);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(&self.w * 2.0));
        kkt.view_mut((0, n), (n, me)).copy_from(&self.eq.transpose());
        kkt.view_mut((n, 0), (me, n)).copy_from(&self.eq);
        let mut rhs = DVector::zeros(n + me);
        rhs.rows_mut(0, n).copy_from(&-(&self.lin + extra_lin));
        rhs.rows_mut(n, me).copy_from(&self.eq_rhs);
        let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
        sol.rows(0, n).into_owned()
    }

    /// Dense `x(y)`.
    pub fn dual_minimizer(&self, y: &DVector<f64>) -> PrimalPoint {
        let v = self.solve_eq(&(self.h.transpose() * y));
        self.to_point(&v)
    }
}

/// Box-constrained QP solved by enumerating active sets:
/// `min v'Wv + w'v  s.t.  E v = e,  lo <= C v <= hi`.
/// Only for a handful of inequality rows.
pub fn active_set_qp(qp: &DenseQp, c: &DMatrix<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let m = c.nrows();
    assert!(m <= 10, "enumeration is exponential in the number of rows");
    let n = qp.dim();
    let me = qp.eq.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(m as u32) {
        // 0 inactive, 1 at lower, 2 at upper
        let states: Vec<usize> = (0..m).map(|k| (code / 3usize.pow(k as u32)) % 3).collect();
        let active: Vec<usize> = (0..m).filter(|&k| states[k] != 0).collect();
        let na = active.len();
        let mut kkt = DMatrix::zeros(n + me + na, n + me + na);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(&qp.w * 2.0));
        kkt.view_mut((0, n), (n, me)).copy_from(&qp.eq.transpose());
        kkt.view_mut((n, 0), (me, n)).copy_from(&qp.eq);
        let mut rhs = DVector::zeros(n + me + na);
        rhs.rows_mut(0, n).copy_from(&-&qp.lin);
        rhs.rows_mut(n, me).copy_from(&qp.eq_rhs);
        for (r, &k) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + me + r, j)] = c[(k, j)];
                kkt[(j, n + me + r)] = c[(k, j)];
            }
            rhs[n + me + r] = if states[k] == 1 { lo[k] } else { hi[k] };
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let v = sol.rows(0, n).into_owned();
        let cv = c * &v;
        let primal_ok = (0..m).all(|k| cv[k] >= lo[k] - 1e-9 && cv[k] <= hi[k] + 1e-9);
        // multiplier of a row at its lower bound must push up and vice versa
        let dual_ok = active.iter().enumerate().all(|(r, &k)| {
            let mu = sol[n + me + r];
            if states[k] == 1 {
                mu <= 1e-9
            } else {
                mu >= -1e-9
            }
        });
        if primal_ok && dual_ok {
            let obj = qp.objective(&v);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, v));
            }
        }
    }
    best.expect("a feasible active set exists").1
}

/// Stacked box bounds of all dual blocks; panics on non-box blocks.
pub fn box_bounds(prob: &ProblemInstance) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![0.0; prob.dual_dim()];
    let mut hi = vec![0.0; prob.dual_dim()];
    for (range, spec, _) in prob.blocks() {
        match spec {
            NonsmoothSpec::Box { lo: l, hi: h } => {
                lo[range.clone()].copy_from_slice(l);
                hi[range].copy_from_slice(h);
            }
            NonsmoothSpec::Free if range.is_empty() => {}
            _ => panic!("box blocks only"),
        }
    }
    (lo, hi)
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

pub fn random_vec(rng: &mut impl rand::Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.random_range(-1.0..1.0))
}
