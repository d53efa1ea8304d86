//! Offline factor step for the dual-gradient oracle.
//!
//! `x(y)` minimizes `sum_i pi^i phi^i + <y^i, F^i x + G^i u>` plus the terminal
//! terms over the dynamics. Backward dynamic programming on the tree gives,
//! at every non-leaf node `i`, a value function `V_i(x) = x'P_i x + v_i'x + c`
//! and an affine policy `u^i = K^i x^i + w^i` where only `v_i` and `w^i`
//! depend on `y`. With `Rb_i = sum_j (pi^j R_j + B_j'P_j B_j)` over the
//! children `j` and `Sb_i = sum_j (pi^j S_j + B_j'P_j A_j)`:
//!
//! ```text
//! K^i      = -Rb_i^{-1} Sb_i
//! Theta^j  = -1/2 Rb_i^{-1} B_j'        Phi^j = -1/2 Rb_i^{-1} G_j'
//! Lambda^j = A_j + B_j K^i              D^j   = F_j + G_j K^i
//! w^i      = sigma^i + sum_j (Phi^j y^j + Theta^j v_j)
//! v_i      = chat^i  + sum_j (D^j' y^j + Lambda^j' v_j)
//! ```
//!
//! At a leaf, `v_i = F_N' y_N + pi^i p_N`. `sigma` and `chat` collect the
//! affine data `c`, `q`, `r`, `p_N`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{min_eigenvalue, ProblemInstance};

/// Relative bound on the smallest eigenvalue of the eliminated input Hessian.
pub const CONVEXITY_TOL: f64 = 1e-10;

/// Factors attached to the edge `anc(j) -> j`, stored at non-root node `j`.
#[derive(Debug, Clone)]
pub struct EdgeFactor {
    pub theta: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Factors of a non-leaf node.
#[derive(Debug, Clone)]
pub struct NodeFactor {
    pub k: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub(crate) rbar: Cholesky<f64, Dyn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Shape {
    pub num_nodes: usize,
    pub nx: usize,
    pub nu: usize,
    pub dual_dim: usize,
}

impl Shape {
    pub(crate) fn of(prob: &ProblemInstance) -> Self {
        Self {
            num_nodes: prob.tree().num_nodes(),
            nx: prob.nx(),
            nu: prob.nu(),
            dual_dim: prob.dual_dim(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FactorCache {
    /// Indexed by node ID; entry 0 is unused.
    pub(crate) edges: Vec<Option<EdgeFactor>>,
    /// Indexed by non-leaf node ID.
    pub(crate) nodes: Vec<NodeFactor>,
    /// Affine part of `v_i` for every node.
    pub(crate) c_hat: Vec<DVector<f64>>,
    /// Value matrices `P_i` for every node.
    pub(crate) value: Vec<DMatrix<f64>>,
    pub(crate) shape: Shape,
}

struct NodeResult {
    node: NodeFactor,
    edges: Vec<EdgeFactor>,
    value: DMatrix<f64>,
    c_hat: DVector<f64>,
}

impl FactorCache {
    pub fn edge(&self, node: usize) -> &EdgeFactor {
        self.edges[node].as_ref().expect("root has no edge factor")
    }

    pub fn node(&self, node: usize) -> &NodeFactor {
        &self.nodes[node]
    }

    pub fn c_hat(&self, node: usize) -> &DVector<f64> {
        &self.c_hat[node]
    }

    pub(crate) fn check(&self, prob: &ProblemInstance) -> Result<()> {
        let shape = Shape::of(prob);
        if shape != self.shape {
            return Err(Error::CacheMismatch(format!(
                "cache shape {:?} vs problem shape {:?}",
                self.shape, shape
            )));
        }
        Ok(())
    }
}

/// Backward Riccati-type recursion over the tree.
pub fn factor(prob: &ProblemInstance) -> Result<FactorCache> {
    let tree = prob.tree();
    let n = tree.num_nodes();
    let mut value = vec![DMatrix::zeros(0, 0); n];
    let mut c_hat = vec![DVector::zeros(0); n];
    let mut edges: Vec<Option<EdgeFactor>> = vec![None; n];
    let mut nodes: Vec<Option<NodeFactor>> = vec![None; tree.num_nonleaf()];

    for i in tree.leaves() {
        let tc = prob.terminal_cost(i);
        let pi = tree.probability(i);
        value[i] = &tc.p * pi;
        c_hat[i] = &tc.p_lin * pi;
    }

    for t in (0..tree.num_stages()).rev() {
        let results: Vec<NodeResult> = tree
            .stage_range(t)
            .into_par_iter()
            .with_min_len(16)
            .map(|i| eliminate(prob, i, &value))
            .collect::<Result<_>>()?;
        for (i, res) in tree.stage_range(t).zip(results) {
            for (&j, e) in tree.children(i).iter().zip(res.edges) {
                edges[j] = Some(e);
            }
            value[i] = res.value;
            c_hat[i] = res.c_hat;
            nodes[i] = Some(res.node);
        }
    }

    Ok(FactorCache {
        edges,
        nodes: nodes.into_iter().map(|n| n.unwrap()).collect(),
        c_hat,
        value,
        shape: Shape::of(prob),
    })
}

fn eliminate(prob: &ProblemInstance, i: usize, value: &[DMatrix<f64>]) -> Result<NodeResult> {
    let tree = prob.tree();
    let (nx, nu) = (prob.nx(), prob.nu());
    let mut rbar = DMatrix::zeros(nu, nu);
    let mut sbar = DMatrix::zeros(nu, nx);
    let mut qbar = DMatrix::zeros(nx, nx);
    for &j in tree.children(i) {
        let pi = tree.probability(j);
        let d = prob.dynamics(j);
        let c = prob.stage_cost(j);
        let pb = &value[j] * &d.b;
        let pa = &value[j] * &d.a;
        rbar += &c.r * pi + d.b.transpose() * &pb;
        sbar += &c.s * pi + d.b.transpose() * &pa;
        qbar += &c.q * pi + d.a.transpose() * &pa;
    }
    rbar = (&rbar + rbar.transpose()) * 0.5;
    let min_eig = min_eigenvalue(&rbar);
    let max_eig = rbar.amax();
    if !(min_eig > CONVEXITY_TOL * max_eig) {
        return Err(Error::NotStronglyConvex { node: i, min_eig });
    }
    let chol = Cholesky::new(rbar).ok_or(Error::NotStronglyConvex { node: i, min_eig })?;
    let k = -chol.solve(&sbar);
    let p = &qbar + sbar.transpose() * &k;
    let p = (&p + p.transpose()) * 0.5;

    let edges = tree
        .children(i)
        .iter()
        .map(|&j| {
            let d = prob.dynamics(j);
            let con = prob.stage_constraint(j);
            EdgeFactor {
                theta: chol.solve(&d.b.transpose()) * -0.5,
                lambda: &d.a + &d.b * &k,
                phi: chol.solve(&con.g.transpose()) * -0.5,
                d: &con.f + &con.g * &k,
            }
        })
        .collect();

    let node = NodeFactor {
        k,
        sigma: DVector::zeros(nu),
        rbar: chol,
    };
    let mut res = NodeResult {
        node,
        edges,
        value: p,
        c_hat: DVector::zeros(nx),
    };
    let (sigma, c_hat) = affine_terms(prob, i, &res.node, value);
    res.node.sigma = sigma;
    res.c_hat = c_hat;
    Ok(res)
}

fn affine_terms(
    prob: &ProblemInstance,
    i: usize,
    node: &NodeFactor,
    value: &[DMatrix<f64>],
) -> (DVector<f64>, DVector<f64>) {
    let tree = prob.tree();
    let mut lu = DVector::zeros(prob.nu());
    let mut lx = DVector::zeros(prob.nx());
    for &j in tree.children(i) {
        let pi = tree.probability(j);
        let d = prob.dynamics(j);
        let c = prob.stage_cost(j);
        let pc = &value[j] * &d.c * 2.0;
        lu += &c.r_lin * pi + d.b.transpose() * &pc;
        lx += &c.q_lin * pi + d.a.transpose() * &pc;
    }
    let sigma = node.rbar.solve(&lu) * -0.5;
    let c_hat = lx + node.k.transpose() * lu;
    (sigma, c_hat)
}

/// Recomputes only `sigma` and `chat` after the affine data (`c`, `q`, `r`,
/// `p_N`) changed. The matrices of `prob` must match those used by `cache`.
pub fn refactor_affine(cache: &FactorCache, prob: &ProblemInstance) -> Result<FactorCache> {
    let shape = Shape::of(prob);
    if shape != cache.shape {
        return Err(Error::ShapeChanged(format!(
            "{:?} vs {:?}",
            cache.shape, shape
        )));
    }
    let tree = prob.tree();
    let mut out = cache.clone();
    for i in tree.leaves() {
        out.c_hat[i] = &prob.terminal_cost(i).p_lin * tree.probability(i);
    }
    let updates: Vec<(DVector<f64>, DVector<f64>)> = (0..tree.num_nonleaf())
        .into_par_iter()
        .with_min_len(16)
        .map(|i| affine_terms(prob, i, &cache.nodes[i], &cache.value))
        .collect();
    for (i, (sigma, c_hat)) in updates.into_iter().enumerate() {
        out.nodes[i].sigma = sigma;
        out.c_hat[i] = c_hat;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::*;
    use crate::tree::ScenarioTree;

    fn scalar_lq() -> ProblemInstance {
        let tree = ScenarioTree::from_markov(&[vec![1.0]], &[1.0], 1).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        ProblemInstance::new(ProblemParts {
            tree,
            nx: 1,
            nu: 1,
            dynamics: NodeData::Shared(NodeDynamics {
                a: one.clone(),
                b: one.clone(),
                c: DVector::zeros(1),
            }),
            costs: NodeData::Shared(StageCost {
                q: DMatrix::zeros(1, 1),
                r: one.clone(),
                s: DMatrix::zeros(1, 1),
                q_lin: DVector::zeros(1),
                r_lin: DVector::zeros(1),
            }),
            terminal_costs: NodeData::Shared(TerminalCost {
                p: one.clone(),
                p_lin: DVector::zeros(1),
            }),
            stage_constraints: NodeData::Shared(StageConstraint {
                f: DMatrix::zeros(0, 1),
                g: DMatrix::zeros(0, 1),
                set: NonsmoothSpec::Free,
            }),
            terminal_constraints: NodeData::Shared(TerminalConstraint {
                f: DMatrix::zeros(0, 1),
                set: NonsmoothSpec::Free,
            }),
            root_state: DVector::from_element(1, 1.0),
        })
        .unwrap()
    }

    #[test]
    fn scalar_riccati_step() {
        // u^2 + (x + u)^2 is minimized at u = -x/2
        let cache = factor(&scalar_lq()).unwrap();
        assert!((cache.node(0).k[(0, 0)] + 0.5).abs() < 1e-15);
        // value: u^2 + (x+u)^2 at u = -x/2 is x^2/2
        assert!((cache.value[0][(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_affine_data_gives_zero_offsets() {
        let cache = factor(&scalar_lq()).unwrap();
        assert_eq!(cache.node(0).sigma.amax(), 0.0);
        assert!(cache.c_hat.iter().all(|c| c.amax() == 0.0));
    }

    #[test]
    fn refactor_matches_full_factor() {
        let prob = scalar_lq();
        let cache = factor(&prob).unwrap();
        let mut parts = prob.to_parts();
        parts.costs = NodeData::Shared(StageCost {
            r_lin: DVector::from_element(1, 0.7),
            q_lin: DVector::from_element(1, -0.2),
            ..prob.stage_cost(1).clone()
        });
        parts.dynamics = NodeData::Shared(NodeDynamics {
            c: DVector::from_element(1, 0.3),
            ..prob.dynamics(1).clone()
        });
        let perturbed = ProblemInstance::new(parts).unwrap();
        let fresh = factor(&perturbed).unwrap();
        let updated = refactor_affine(&cache, &perturbed).unwrap();
        assert_eq!(updated.node(0).k, cache.node(0).k);
        assert!(updated.node(0).sigma != cache.node(0).sigma);
        assert!((&updated.node(0).sigma - &fresh.node(0).sigma).amax() < 1e-14);
        assert!((&updated.c_hat[0] - &fresh.c_hat[0]).amax() < 1e-14);

        let same = refactor_affine(&cache, &prob).unwrap();
        assert_eq!(same.node(0).sigma, cache.node(0).sigma);
        assert_eq!(same.c_hat, cache.c_hat);
    }

    #[test]
    fn refactor_rejects_shape_change() {
        let prob = scalar_lq();
        let cache = factor(&prob).unwrap();
        let mut parts = prob.to_parts();
        parts.stage_constraints = NodeData::Shared(StageConstraint {
            f: DMatrix::zeros(1, 1),
            g: DMatrix::zeros(1, 1),
            set: NonsmoothSpec::Free,
        });
        let other = ProblemInstance::new(parts).unwrap();
        assert!(matches!(refactor_affine(&cache, &other), Err(Error::ShapeChanged(_))));
    }

    #[test]
    fn singular_input_hessian_is_rejected() {
        let prob = scalar_lq();
        let mut parts = prob.to_parts();
        parts.costs = NodeData::Shared(StageCost {
            r: DMatrix::zeros(1, 1),
            ..prob.stage_cost(1).clone()
        });
        parts.dynamics = NodeData::Shared(NodeDynamics {
            b: DMatrix::zeros(1, 1),
            ..prob.dynamics(1).clone()
        });
        let bad = ProblemInstance::new(parts).unwrap();
        assert!(matches!(factor(&bad), Err(Error::NotStronglyConvex { node: 0, .. })));
    }
}
