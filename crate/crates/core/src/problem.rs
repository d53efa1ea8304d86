//! Per-node data of a scenario-tree optimal control problem and the linear
//! map `H` that stacks the constraint images.
//!
//! Stage-level data (dynamics, stage cost, stage constraint) belongs to a
//! non-root node `i` and acts on the ancestor's pair `(x^anc(i), u^anc(i))`.
//! Terminal data (terminal cost, terminal constraint) belongs to a leaf.
//! Quadratic forms carry no 1/2 factor: `phi(x, u) = [x;u]' [Q S'; S R] [x;u] + q'x + r'u`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{ScenarioTree, Violation};

/// Feasibility tolerance used by [`ProblemInstance::eval_f`].
pub const DYNAMICS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Cross term, `n_u x n_x`.
    pub s: DMatrix<f64>,
    pub q_lin: DVector<f64>,
    pub r_lin: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost {
    pub p: DMatrix<f64>,
    pub p_lin: DVector<f64>,
}

/// Nonsmooth term attached to one constraint block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonsmoothSpec {
    /// Indicator of `{z : lo <= z <= hi}`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `gamma * ||z||_1`, weighted by the node probability.
    ScaledL1 { gamma: f64 },
    /// No penalty on this block (`g = 0`).
    #[serde(rename = "none")]
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConstraint {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub set: NonsmoothSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalConstraint {
    pub f: DMatrix<f64>,
    pub set: NonsmoothSpec,
}

/// Per-node data that is either stored once and broadcast, or given per node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeData<T> {
    Shared(T),
    PerNode(Vec<T>),
}

impl<T> NodeData<T> {
    pub fn get(&self, index: usize) -> &T {
        match self {
            NodeData::Shared(v) => v,
            NodeData::PerNode(v) => &v[index],
        }
    }

    fn check_len(&self, what: &'static str, expected: usize) -> Result<()> {
        match self {
            NodeData::PerNode(v) if v.len() != expected => Err(Error::DimensionMismatch {
                what,
                expected,
                got: v.len(),
            }),
            _ => Ok(()),
        }
    }

    fn iter_indexed(&self, count: usize) -> impl Iterator<Item = (usize, &T)> {
        let limit = match self {
            NodeData::Shared(_) => 1,
            NodeData::PerNode(_) => count,
        };
        (0..limit).map(move |k| (k, self.get(k)))
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> NodeData<U> {
        match self {
            NodeData::Shared(v) => NodeData::Shared(f(v)),
            NodeData::PerNode(v) => NodeData::PerNode(v.iter().map(f).collect()),
        }
    }
}

/// Offsets of the dual blocks: stage blocks in node order, then terminal
/// blocks in leaf order.
#[derive(Debug, Clone, PartialEq)]
pub struct DualLayout {
    stage: Vec<Range<usize>>,
    terminal: Vec<Range<usize>>,
    dim: usize,
}

impl DualLayout {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Block of the stage constraint of non-root `node`.
    pub fn stage_block(&self, node: usize) -> Range<usize> {
        self.stage[node].clone()
    }

    /// Block of the terminal constraint of the leaf with index `leaf`.
    pub fn terminal_block(&self, leaf: usize) -> Range<usize> {
        self.terminal[leaf].clone()
    }
}

/// Primal point: a state for every node and an input for every non-leaf node.
/// Node IDs index `xs`; non-leaf IDs index `us` (non-leaf nodes come first).
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalPoint {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
}

impl PrimalPoint {
    pub fn zeros(num_nodes: usize, num_nonleaf: usize, nx: usize, nu: usize) -> Self {
        Self {
            xs: vec![DVector::zeros(nx); num_nodes],
            us: vec![DVector::zeros(nu); num_nonleaf],
        }
    }

    /// Decision vector `((u^i)_{nonleaf}, (x^i)_{i >= 1})`; the root state is excluded.
    pub fn to_flat(&self) -> DVector<f64> {
        let parts = self.us.iter().chain(self.xs.iter().skip(1));
        let data: Vec<f64> = parts.flat_map(|v| v.iter().copied()).collect();
        DVector::from_vec(data)
    }

    /// All blocks including the root state, `((x^i)_all, (u^i)_nonleaf)`.
    pub fn to_full_flat(&self) -> DVector<f64> {
        let parts = self.xs.iter().chain(self.us.iter());
        DVector::from_vec(parts.flat_map(|v| v.iter().copied()).collect())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        let xs: f64 = self.xs.iter().zip(&other.xs).map(|(a, b)| a.dot(b)).sum();
        let us: f64 = self.us.iter().zip(&other.us).map(|(a, b)| a.dot(b)).sum();
        xs + us
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Self {
        Self {
            xs: self.xs.iter().zip(&other.xs).map(|(a, b)| a + b * alpha).collect(),
            us: self.us.iter().zip(&other.us).map(|(a, b)| a + b * alpha).collect(),
        }
    }

    pub fn norm_inf(&self) -> f64 {
        self.xs
            .iter()
            .chain(&self.us)
            .map(|v| v.amax())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    tree: ScenarioTree,
    nx: usize,
    nu: usize,
    dynamics: NodeData<NodeDynamics>,
    costs: NodeData<StageCost>,
    terminal_costs: NodeData<TerminalCost>,
    stage_constraints: NodeData<StageConstraint>,
    terminal_constraints: NodeData<TerminalConstraint>,
    root_state: DVector<f64>,
    layout: DualLayout,
}

/// Everything needed to assemble a [`ProblemInstance`].
#[derive(Debug, Clone)]
pub struct ProblemParts {
    pub tree: ScenarioTree,
    pub nx: usize,
    pub nu: usize,
    /// Indexed by `node - 1`.
    pub dynamics: NodeData<NodeDynamics>,
    /// Indexed by `node - 1`.
    pub costs: NodeData<StageCost>,
    /// Indexed by leaf index.
    pub terminal_costs: NodeData<TerminalCost>,
    /// Indexed by `node - 1`.
    pub stage_constraints: NodeData<StageConstraint>,
    /// Indexed by leaf index.
    pub terminal_constraints: NodeData<TerminalConstraint>,
    pub root_state: DVector<f64>,
}

fn check_shape(what: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::DimensionMismatch {
            what,
            expected: rows,
            got: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            what,
            expected: cols,
            got: m.ncols(),
        });
    }
    Ok(())
}

fn check_len(what: &'static str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::DimensionMismatch {
            what,
            expected: len,
            got: v.len(),
        });
    }
    Ok(())
}

fn check_set(set: &NonsmoothSpec, rows: usize) -> Result<()> {
    if let NonsmoothSpec::Box { lo, hi } = set {
        if lo.len() != rows || hi.len() != rows {
            return Err(Error::DimensionMismatch {
                what: "box bounds",
                expected: rows,
                got: lo.len().max(hi.len()),
            });
        }
    }
    Ok(())
}

impl ProblemInstance {
    pub fn new(parts: ProblemParts) -> Result<Self> {
        let ProblemParts {
            tree,
            nx,
            nu,
            dynamics,
            costs,
            terminal_costs,
            stage_constraints,
            terminal_constraints,
            root_state,
        } = parts;
        let n_edges = tree.num_nodes() - 1;
        let n_leaves = tree.num_leaves();
        dynamics.check_len("dynamics", n_edges)?;
        costs.check_len("stage costs", n_edges)?;
        stage_constraints.check_len("stage constraints", n_edges)?;
        terminal_costs.check_len("terminal costs", n_leaves)?;
        terminal_constraints.check_len("terminal constraints", n_leaves)?;
        check_len("root state", &root_state, nx)?;
        for (_, d) in dynamics.iter_indexed(n_edges) {
            check_shape("A", &d.a, nx, nx)?;
            check_shape("B", &d.b, nx, nu)?;
            check_len("c", &d.c, nx)?;
        }
        for (_, c) in costs.iter_indexed(n_edges) {
            check_shape("Q", &c.q, nx, nx)?;
            check_shape("R", &c.r, nu, nu)?;
            check_shape("S", &c.s, nu, nx)?;
            check_len("q", &c.q_lin, nx)?;
            check_len("r", &c.r_lin, nu)?;
        }
        for (_, c) in terminal_costs.iter_indexed(n_leaves) {
            check_shape("P_N", &c.p, nx, nx)?;
            check_len("p_N", &c.p_lin, nx)?;
        }
        for (_, c) in stage_constraints.iter_indexed(n_edges) {
            let m = c.f.nrows();
            check_shape("F", &c.f, m, nx)?;
            check_shape("G", &c.g, m, nu)?;
            check_set(&c.set, m)?;
        }
        for (_, c) in terminal_constraints.iter_indexed(n_leaves) {
            let m = c.f.nrows();
            check_shape("F_N", &c.f, m, nx)?;
            check_set(&c.set, m)?;
        }

        let mut offset = 0;
        let mut stage = vec![0..0; tree.num_nodes()];
        for (node, block) in stage.iter_mut().enumerate().skip(1) {
            let m = stage_constraints.get(node - 1).f.nrows();
            *block = offset..offset + m;
            offset += m;
        }
        let terminal = (0..n_leaves)
            .map(|l| {
                let m = terminal_constraints.get(l).f.nrows();
                let r = offset..offset + m;
                offset += m;
                r
            })
            .collect();
        let layout = DualLayout {
            stage,
            terminal,
            dim: offset,
        };
        Ok(Self {
            tree,
            nx,
            nu,
            dynamics,
            costs,
            terminal_costs,
            stage_constraints,
            terminal_constraints,
            root_state,
            layout,
        })
    }

    pub fn into_parts(self) -> ProblemParts {
        ProblemParts {
            tree: self.tree,
            nx: self.nx,
            nu: self.nu,
            dynamics: self.dynamics,
            costs: self.costs,
            terminal_costs: self.terminal_costs,
            stage_constraints: self.stage_constraints,
            terminal_constraints: self.terminal_constraints,
            root_state: self.root_state,
        }
    }

    pub fn to_parts(&self) -> ProblemParts {
        self.clone().into_parts()
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn root_state(&self) -> &DVector<f64> {
        &self.root_state
    }

    /// Same problem with a different root state `p`.
    pub fn with_root_state(&self, p: DVector<f64>) -> Result<Self> {
        check_len("root state", &p, self.nx)?;
        Ok(Self {
            root_state: p,
            ..self.clone()
        })
    }

    pub fn layout(&self) -> &DualLayout {
        &self.layout
    }

    /// Primal dimension `n`.
    pub fn primal_dim(&self) -> usize {
        self.tree.num_nonleaf() * self.nu + (self.tree.num_nodes() - 1) * self.nx
    }

    /// Dual dimension `m`.
    pub fn dual_dim(&self) -> usize {
        self.layout.dim
    }

    /// Dynamics governing `node` (non-root) from its ancestor.
    pub fn dynamics(&self, node: usize) -> &NodeDynamics {
        self.dynamics.get(node - 1)
    }

    pub fn stage_cost(&self, node: usize) -> &StageCost {
        self.costs.get(node - 1)
    }

    pub fn stage_constraint(&self, node: usize) -> &StageConstraint {
        self.stage_constraints.get(node - 1)
    }

    pub fn terminal_cost(&self, leaf_node: usize) -> &TerminalCost {
        self.terminal_costs.get(self.tree.leaf_index(leaf_node))
    }

    pub fn terminal_constraint(&self, leaf_node: usize) -> &TerminalConstraint {
        self.terminal_constraints.get(self.tree.leaf_index(leaf_node))
    }

    pub fn dynamics_data(&self) -> &NodeData<NodeDynamics> {
        &self.dynamics
    }

    pub fn cost_data(&self) -> &NodeData<StageCost> {
        &self.costs
    }

    pub fn terminal_cost_data(&self) -> &NodeData<TerminalCost> {
        &self.terminal_costs
    }

    pub fn stage_constraint_data(&self) -> &NodeData<StageConstraint> {
        &self.stage_constraints
    }

    pub fn terminal_constraint_data(&self) -> &NodeData<TerminalConstraint> {
        &self.terminal_constraints
    }

    /// `(dual block range, nonsmooth spec, probability weight)` for every block.
    pub fn blocks(&self) -> Vec<(Range<usize>, &NonsmoothSpec, f64)> {
        let tree = &self.tree;
        let stage = (1..tree.num_nodes()).map(|i| {
            (
                self.layout.stage_block(i),
                &self.stage_constraint(i).set,
                tree.probability(i),
            )
        });
        let terminal = tree.leaves().map(|i| {
            (
                self.layout.terminal_block(tree.leaf_index(i)),
                &self.terminal_constraint(i).set,
                tree.probability(i),
            )
        });
        stage.chain(terminal).collect()
    }

    fn check_primal(&self, x: &PrimalPoint) -> Result<()> {
        if x.xs.len() != self.tree.num_nodes() {
            return Err(Error::DimensionMismatch {
                what: "primal states",
                expected: self.tree.num_nodes(),
                got: x.xs.len(),
            });
        }
        if x.us.len() != self.tree.num_nonleaf() {
            return Err(Error::DimensionMismatch {
                what: "primal inputs",
                expected: self.tree.num_nonleaf(),
                got: x.us.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_dual(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.dual_dim() {
            return Err(Error::DimensionMismatch {
                what: "dual vector",
                expected: self.dual_dim(),
                got: y.len(),
            });
        }
        Ok(())
    }

    /// `z = Hx`.
    pub fn apply_h(&self, x: &PrimalPoint) -> Result<DVector<f64>> {
        self.check_primal(x)?;
        let mut z = DVector::zeros(self.dual_dim());
        self.apply_h_into(x, &mut z);
        Ok(z)
    }

    pub(crate) fn apply_h_into(&self, x: &PrimalPoint, z: &mut DVector<f64>) {
        let tree = &self.tree;
        for i in 1..tree.num_nodes() {
            let a = tree.ancestor(i).unwrap();
            let con = self.stage_constraint(i);
            let mut block = z.rows_range_mut(self.layout.stage_block(i));
            block.gemv(1.0, &con.f, &x.xs[a], 0.0);
            block.gemv(1.0, &con.g, &x.us[a], 1.0);
        }
        for i in tree.leaves() {
            let con = self.terminal_constraint(i);
            let mut block = z.rows_range_mut(self.layout.terminal_block(tree.leaf_index(i)));
            block.gemv(1.0, &con.f, &x.xs[i], 0.0);
        }
    }

    /// `H' y`, including the root-state block.
    pub fn apply_h_adjoint(&self, y: &DVector<f64>) -> Result<PrimalPoint> {
        self.check_dual(y)?;
        let tree = &self.tree;
        let mut out = PrimalPoint::zeros(tree.num_nodes(), tree.num_nonleaf(), self.nx, self.nu);
        for i in 1..tree.num_nodes() {
            let a = tree.ancestor(i).unwrap();
            let con = self.stage_constraint(i);
            let yi = y.rows_range(self.layout.stage_block(i));
            out.xs[a].gemv_tr(1.0, &con.f, &yi, 1.0);
            out.us[a].gemv_tr(1.0, &con.g, &yi, 1.0);
        }
        for i in tree.leaves() {
            let con = self.terminal_constraint(i);
            let yi = y.rows_range(self.layout.terminal_block(tree.leaf_index(i)));
            out.xs[i].gemv_tr(1.0, &con.f, &yi, 1.0);
        }
        Ok(out)
    }

    /// Smooth cost plus the indicator of the dynamics: `+inf` unless `x^0 = p`
    /// and every node obeys its dynamics within [`DYNAMICS_TOL`].
    pub fn eval_f(&self, x: &PrimalPoint) -> f64 {
        if self.check_primal(x).is_err() {
            return f64::INFINITY;
        }
        if (&x.xs[0] - &self.root_state).amax() > DYNAMICS_TOL {
            return f64::INFINITY;
        }
        let tree = &self.tree;
        for i in 1..tree.num_nodes() {
            let a = tree.ancestor(i).unwrap();
            let d = self.dynamics(i);
            let pred = &d.a * &x.xs[a] + &d.b * &x.us[a] + &d.c;
            if (pred - &x.xs[i]).amax() > DYNAMICS_TOL {
                return f64::INFINITY;
            }
        }
        self.smooth_cost(x)
    }

    /// Probability-weighted quadratic cost, ignoring the dynamics.
    pub fn smooth_cost(&self, x: &PrimalPoint) -> f64 {
        let tree = &self.tree;
        let mut total = 0.0;
        for i in 1..tree.num_nodes() {
            let a = tree.ancestor(i).unwrap();
            let c = self.stage_cost(i);
            let (xa, ua) = (&x.xs[a], &x.us[a]);
            let val = xa.dot(&(&c.q * xa))
                + 2.0 * ua.dot(&(&c.s * xa))
                + ua.dot(&(&c.r * ua))
                + c.q_lin.dot(xa)
                + c.r_lin.dot(ua);
            total += tree.probability(i) * val;
        }
        for i in tree.leaves() {
            let c = self.terminal_cost(i);
            let xi = &x.xs[i];
            total += tree.probability(i) * (xi.dot(&(&c.p * xi)) + c.p_lin.dot(xi));
        }
        total
    }

    /// Simulates the dynamics forward from the root state with the given inputs.
    pub fn simulate(&self, us: &[DVector<f64>]) -> Result<PrimalPoint> {
        let tree = &self.tree;
        if us.len() != tree.num_nonleaf() {
            return Err(Error::DimensionMismatch {
                what: "inputs",
                expected: tree.num_nonleaf(),
                got: us.len(),
            });
        }
        let mut xs = vec![DVector::zeros(self.nx); tree.num_nodes()];
        xs[0] = self.root_state.clone();
        for i in 1..tree.num_nodes() {
            let a = tree.ancestor(i).unwrap();
            let d = self.dynamics(i);
            xs[i] = &d.a * &xs[a] + &d.b * &us[a] + &d.c;
        }
        Ok(PrimalPoint { xs, us: us.to_vec() })
    }

    /// Checks tree probabilities, cost convexity and constraint sets.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.tree.validate();
        let tree = &self.tree;
        let n_edges = tree.num_nodes() - 1;
        // shared data is reported against the first node it applies to
        for (k, c) in self.costs.iter_indexed(n_edges) {
            let node = k + 1;
            if !is_symmetric(&c.q) || !is_symmetric(&c.r) {
                out.push(Violation::at(node, "Q or R is not symmetric"));
            }
            let r_min = min_eigenvalue(&c.r);
            if r_min <= 1e-12 * c.r.amax().max(1.0) {
                out.push(Violation::at(
                    node,
                    format!("R is not positive definite (min eigenvalue {r_min:e})"),
                ));
            }
            let q_min = min_eigenvalue(&c.q);
            if q_min < -1e-10 {
                out.push(Violation::at(
                    node,
                    format!("Q is not positive semidefinite (min eigenvalue {q_min:e})"),
                ));
            }
            let mut block = DMatrix::zeros(self.nx + self.nu, self.nx + self.nu);
            block.view_mut((0, 0), (self.nx, self.nx)).copy_from(&c.q);
            block.view_mut((self.nx, self.nx), (self.nu, self.nu)).copy_from(&c.r);
            block.view_mut((self.nx, 0), (self.nu, self.nx)).copy_from(&c.s);
            block
                .view_mut((0, self.nx), (self.nx, self.nu))
                .copy_from(&c.s.transpose());
            let b_min = min_eigenvalue(&block);
            if b_min < -1e-10 {
                out.push(Violation::at(
                    node,
                    format!("[[Q, S'], [S, R]] is not positive semidefinite (min eigenvalue {b_min:e})"),
                ));
            }
        }
        let first_leaf = tree.leaves().start;
        for (k, c) in self.terminal_costs.iter_indexed(tree.num_leaves()) {
            let p_min = min_eigenvalue(&c.p);
            if !is_symmetric(&c.p) || p_min <= 1e-12 * c.p.amax().max(1.0) {
                out.push(Violation::at(
                    first_leaf + k,
                    format!("P_N is not symmetric positive definite (min eigenvalue {p_min:e})"),
                ));
            }
        }
        for (k, c) in self.stage_constraints.iter_indexed(n_edges) {
            check_spec(&c.set, k + 1, &mut out);
        }
        for (k, c) in self.terminal_constraints.iter_indexed(tree.num_leaves()) {
            check_spec(&c.set, first_leaf + k, &mut out);
        }
        out
    }
}

fn check_spec(set: &NonsmoothSpec, node: usize, out: &mut Vec<Violation>) {
    match set {
        NonsmoothSpec::Box { lo, hi } => {
            for (j, (l, h)) in lo.iter().zip(hi).enumerate() {
                if !l.is_finite() || !h.is_finite() {
                    out.push(Violation::at(node, format!("box bound {j} is not finite")));
                } else if l > h {
                    out.push(Violation::at(node, format!("box bound {j}: z_min {l} > z_max {h}")));
                }
            }
        }
        NonsmoothSpec::ScaledL1 { gamma } => {
            if !(*gamma >= 0.0) {
                out.push(Violation::at(node, format!("l1 weight {gamma} is negative")));
            }
        }
        NonsmoothSpec::Free => {}
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-10 * scale
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(nx: usize, nu: usize, m: usize) -> ProblemInstance {
        let tree = ScenarioTree::from_markov(&[vec![1.0]], &[1.0], 1).unwrap();
        ProblemInstance::new(ProblemParts {
            tree,
            nx,
            nu,
            dynamics: NodeData::Shared(NodeDynamics {
                a: DMatrix::identity(nx, nx),
                b: DMatrix::from_element(nx, nu, 1.0),
                c: DVector::zeros(nx),
            }),
            costs: NodeData::Shared(StageCost {
                q: DMatrix::identity(nx, nx),
                r: DMatrix::identity(nu, nu),
                s: DMatrix::zeros(nu, nx),
                q_lin: DVector::zeros(nx),
                r_lin: DVector::zeros(nu),
            }),
            terminal_costs: NodeData::Shared(TerminalCost {
                p: DMatrix::identity(nx, nx),
                p_lin: DVector::zeros(nx),
            }),
            stage_constraints: NodeData::Shared(StageConstraint {
                f: DMatrix::identity(m, nx),
                g: DMatrix::zeros(m, nu),
                set: NonsmoothSpec::Box {
                    lo: vec![-1.0; m],
                    hi: vec![1.0; m],
                },
            }),
            terminal_constraints: NodeData::Shared(TerminalConstraint {
                f: DMatrix::zeros(0, nx),
                set: NonsmoothSpec::Free,
            }),
            root_state: DVector::from_element(nx, 0.5),
        })
        .unwrap()
    }

    #[test]
    fn h_of_zero_is_zero() {
        let p = chain(2, 1, 2);
        let x = PrimalPoint::zeros(2, 1, 2, 1);
        assert_eq!(p.apply_h(&x).unwrap().amax(), 0.0);
        assert_eq!(p.apply_h_adjoint(&DVector::zeros(2)).unwrap().norm_inf(), 0.0);
    }

    #[test]
    fn identity_f_picks_root_state() {
        let p = chain(2, 1, 2);
        let x = p.simulate(&[DVector::from_element(1, 0.3)]).unwrap();
        let z = p.apply_h(&x).unwrap();
        assert_eq!(z, *p.root_state());
    }

    #[test]
    fn eval_f_rejects_infeasible() {
        let p = chain(2, 1, 2);
        let mut x = p.simulate(&[DVector::from_element(1, 0.3)]).unwrap();
        assert!(p.eval_f(&x).is_finite());
        x.xs[1][0] += 1e-6;
        assert_eq!(p.eval_f(&x), f64::INFINITY);
    }

    #[test]
    fn eval_f_zero_at_homogeneous_origin() {
        let p = chain(2, 1, 2).with_root_state(DVector::zeros(2)).unwrap();
        let x = p.simulate(&[DVector::zeros(1)]).unwrap();
        assert_eq!(p.eval_f(&x), 0.0);
    }

    #[test]
    fn dims() {
        let p = chain(3, 2, 4);
        assert_eq!(p.primal_dim(), 2 + 3);
        assert_eq!(p.dual_dim(), 4);
    }

    #[test]
    fn validate_catches_bad_data() {
        let p = chain(2, 1, 2);
        assert!(p.validate().is_empty());

        let mut parts = p.to_parts();
        parts.costs = NodeData::Shared(StageCost {
            r: DMatrix::zeros(1, 1),
            ..p.stage_cost(1).clone()
        });
        let bad = ProblemInstance::new(parts).unwrap();
        assert!(bad.validate().iter().any(|v| v.rule.contains("R is not positive definite")));

        let mut parts = p.to_parts();
        parts.stage_constraints = NodeData::Shared(StageConstraint {
            set: NonsmoothSpec::Box {
                lo: vec![1.0, 0.0],
                hi: vec![0.0, 0.0],
            },
            ..p.stage_constraint(1).clone()
        });
        let bad = ProblemInstance::new(parts).unwrap();
        assert!(bad.validate().iter().any(|v| v.rule.contains("z_min")));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = chain(2, 1, 2);
        let mut parts = p.to_parts();
        parts.root_state = DVector::zeros(3);
        assert!(matches!(
            ProblemInstance::new(parts),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(p.apply_h_adjoint(&DVector::zeros(5)).is_err());
    }
}
