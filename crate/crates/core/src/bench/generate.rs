//! Instance generators: the spring-mass-damper array with a Markov-jump
//! disturbance, and seeded random instances for testing.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::*;
use crate::tree::ScenarioTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpringMassParams {
    pub masses: usize,
    /// kg
    pub mass: f64,
    /// N/m
    pub stiffness: f64,
    /// Ns/m
    pub damping: f64,
    pub u_max: f64,
    pub v_max: f64,
    pub horizon: usize,
    /// s
    pub sample_time: f64,
    pub state_weight: f64,
    pub input_weight: f64,
    pub terminal_weight: f64,
    pub initial_dist: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    /// Additive disturbance applied to every state component, per mode.
    pub disturbance: Vec<f64>,
    /// Half-width of the box the initial positions are sampled from.
    pub position_range: f64,
}

impl Default for SpringMassParams {
    fn default() -> Self {
        Self {
            masses: 5,
            mass: 5.0,
            stiffness: 1.0,
            damping: 0.1,
            u_max: 2.0,
            v_max: 5.0,
            horizon: 11,
            sample_time: 0.5,
            state_weight: 5.0,
            input_weight: 2.0,
            terminal_weight: 100.0,
            initial_dist: vec![0.5, 0.5],
            transition: vec![vec![0.1, 0.9], vec![0.9, 0.1]],
            disturbance: vec![0.0, 0.1],
            position_range: 2.5,
        }
    }
}

impl SpringMassParams {
    pub fn nx(&self) -> usize {
        2 * self.masses
    }

    pub fn nu(&self) -> usize {
        self.masses - 1
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        if self.masses < 2 {
            return bad("at least two masses are required");
        }
        if !(self.mass > 0.0) || !(self.sample_time > 0.0) {
            return bad("mass and sample time must be positive");
        }
        if self.stiffness < 0.0 || self.damping < 0.0 {
            return bad("stiffness and damping must be nonnegative");
        }
        if !(self.u_max > 0.0) || !(self.v_max > 0.0) {
            return bad("input and velocity bounds must be positive");
        }
        if !(self.input_weight > 0.0) || !(self.terminal_weight > 0.0) || self.state_weight < 0.0 {
            return bad("cost weights must be positive");
        }
        if self.disturbance.len() != self.initial_dist.len() {
            return bad("one disturbance value per mode is required");
        }
        Ok(())
    }
}

/// Continuous-time `(A_c, B_c)` with the state ordered as positions, then velocities.
pub fn spring_mass_continuous(params: &SpringMassParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = params.masses;
    let coupling = DMatrix::from_fn(m, m, |i, j| match i.abs_diff(j) {
        0 => 2.0,
        1 => -1.0,
        _ => 0.0,
    });
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    a.view_mut((0, m), (m, m)).fill_with_identity();
    a.view_mut((m, 0), (m, m))
        .copy_from(&(&coupling * (-params.stiffness / params.mass)));
    a.view_mut((m, m), (m, m))
        .copy_from(&(&coupling * (-params.damping / params.mass)));
    let mut b = DMatrix::zeros(2 * m, m - 1);
    for j in 0..m - 1 {
        b[(m + j, j)] = 1.0 / params.mass;
        b[(m + j + 1, j)] = -1.0 / params.mass;
    }
    (a, b)
}

/// Zero-order-hold discretization via the exponential of `[[A, B], [0, 0]] * ts`.
pub fn zero_order_hold(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, k) = (a.nrows(), b.ncols());
    let mut aug = DMatrix::zeros(n + k, n + k);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, k)).copy_from(b);
    let e = (aug * ts).exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, k)).into_owned(),
    )
}

/// Spring-mass-damper array on the full Markov tree, starting at `root_state`.
pub fn gen_spring_mass(params: &SpringMassParams, root_state: DVector<f64>) -> Result<ProblemInstance> {
    params.check()?;
    let (nx, nu, m) = (params.nx(), params.nu(), params.masses);
    let tree = ScenarioTree::from_markov(&params.transition, &params.initial_dist, params.horizon)?;
    let (ac, bc) = spring_mass_continuous(params);
    let (a, b) = zero_order_hold(&ac, &bc, params.sample_time);

    let dynamics = (1..tree.num_nodes())
        .map(|i| {
            let mode = tree.mode(i).expect("non-root nodes carry a mode");
            NodeDynamics {
                a: a.clone(),
                b: b.clone(),
                c: DVector::from_element(nx, params.disturbance[mode]),
            }
        })
        .collect();

    let rows = nu + m;
    let mut g = DMatrix::zeros(rows, nu);
    g.view_mut((0, 0), (nu, nu)).fill_with_identity();
    let mut f = DMatrix::zeros(rows, nx);
    f.view_mut((nu, m), (m, m)).fill_with_identity();
    let lo: Vec<f64> = std::iter::repeat_n(-params.u_max, nu)
        .chain(std::iter::repeat_n(-params.v_max, m))
        .collect();
    let hi = lo.iter().map(|v| -v).collect();

    let mut f_term = DMatrix::zeros(m, nx);
    f_term.view_mut((0, m), (m, m)).fill_with_identity();

    ProblemInstance::new(ProblemParts {
        tree,
        nx,
        nu,
        dynamics: NodeData::PerNode(dynamics),
        costs: NodeData::Shared(StageCost {
            q: DMatrix::identity(nx, nx) * params.state_weight,
            r: DMatrix::identity(nu, nu) * params.input_weight,
            s: DMatrix::zeros(nu, nx),
            q_lin: DVector::zeros(nx),
            r_lin: DVector::zeros(nu),
        }),
        terminal_costs: NodeData::Shared(TerminalCost {
            p: DMatrix::identity(nx, nx) * params.terminal_weight,
            p_lin: DVector::zeros(nx),
        }),
        stage_constraints: NodeData::Shared(StageConstraint {
            f,
            g,
            set: NonsmoothSpec::Box { lo, hi },
        }),
        terminal_constraints: NodeData::Shared(TerminalConstraint {
            f: f_term,
            set: NonsmoothSpec::Box {
                lo: vec![-params.v_max; m],
                hi: vec![params.v_max; m],
            },
        }),
        root_state,
    })
}

/// Initial states drawn uniformly: positions within `position_range`,
/// velocities within half the velocity bound.
pub fn sample_initial_states(params: &SpringMassParams, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = params.masses;
    (0..count)
        .map(|_| {
            DVector::from_fn(2 * m, |i, _| {
                let half = if i < m {
                    params.position_range
                } else {
                    0.5 * params.v_max
                };
                rng.random_range(-half..=half)
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintStyle {
    /// Random dense `F`, `G` and terminal `F_N`.
    Dense,
    /// Input bounds only (`F = 0`, `G = I`); always feasible.
    InputBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Box,
    ScaledL1,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSpec {
    pub nx: usize,
    pub nu: usize,
    pub horizon: usize,
    /// Each non-leaf node gets between 1 and this many children.
    pub max_branching: usize,
    /// Stops branching once the tree would exceed this many nodes.
    pub max_nodes: usize,
    pub stage_rows: usize,
    pub terminal_rows: usize,
    pub style: ConstraintStyle,
    pub penalty: PenaltyKind,
    /// Draw fresh data for every node instead of broadcasting one copy.
    pub time_varying: bool,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            nx: 3,
            nu: 2,
            horizon: 3,
            max_branching: 3,
            max_nodes: 50,
            stage_rows: 2,
            terminal_rows: 2,
            style: ConstraintStyle::Dense,
            penalty: PenaltyKind::Box,
            time_varying: true,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn random_tree(rng: &mut ChaCha8Rng, spec: &RandomSpec) -> Result<ScenarioTree> {
    let mut ancestor = vec![None];
    let mut probability = vec![1.0];
    let mut frontier = vec![0usize];
    for t in 0..spec.horizon {
        // each remaining stage needs at least one node per frontier node
        let remaining = spec.horizon - t;
        let mut next = Vec::new();
        for (k, &i) in frontier.iter().enumerate() {
            let reserve = (frontier.len() - k - 1 + next.len()) * remaining;
            let room = spec
                .max_nodes
                .saturating_sub(ancestor.len() + reserve + remaining)
                / remaining.max(1);
            let cap = spec.max_branching.max(1).min(room + 1);
            let count = rng.random_range(1..=cap);
            let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for w in weights {
                next.push(ancestor.len());
                ancestor.push(Some(i));
                probability.push(probability[i] * w / total);
            }
        }
        frontier = next;
    }
    ScenarioTree::from_ancestors(ancestor, probability)
}

fn random_penalty(rng: &mut ChaCha8Rng, kind: PenaltyKind, rows: usize) -> NonsmoothSpec {
    match kind {
        PenaltyKind::Box => NonsmoothSpec::Box {
            lo: (0..rows).map(|_| rng.random_range(-2.0..-0.2)).collect(),
            hi: (0..rows).map(|_| rng.random_range(0.2..2.0)).collect(),
        },
        PenaltyKind::ScaledL1 => NonsmoothSpec::ScaledL1 {
            gamma: rng.random_range(0.1..1.0),
        },
        PenaltyKind::Free => NonsmoothSpec::Free,
    }
}

/// Seeded random instance. Costs are positive semidefinite by construction
/// with `R` and `P_N` positive definite. Boxes are centred on the constraint
/// values of a random reference trajectory, so box instances are strictly
/// feasible.
pub fn gen_random_instance(seed: u64, spec: &RandomSpec) -> Result<ProblemInstance> {
    if spec.nx == 0 || spec.nu == 0 || spec.horizon == 0 {
        return Err(Error::InvalidParams("dimensions and horizon must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = random_tree(&mut rng, spec)?;
    let (nx, nu) = (spec.nx, spec.nu);
    let n_edges = tree.num_nodes() - 1;
    let n_leaves = tree.num_leaves();

    let mut dynamics = |rng: &mut ChaCha8Rng| NodeDynamics {
        a: DMatrix::identity(nx, nx) * 0.9 + uniform(rng, nx, nx) * (0.4 / (nx as f64).sqrt()),
        b: uniform(rng, nx, nu),
        c: uniform_vec(rng, nx, 0.1),
    };
    let cost = |rng: &mut ChaCha8Rng| {
        let k = nx + nu;
        let l = uniform(rng, k, k);
        let w = &l * l.transpose() / k as f64;
        StageCost {
            q: w.view((0, 0), (nx, nx)).into_owned(),
            r: w.view((nx, nx), (nu, nu)).into_owned() + DMatrix::identity(nu, nu) * 0.2,
            s: w.view((nx, 0), (nu, nx)).into_owned(),
            q_lin: uniform_vec(rng, nx, 0.5),
            r_lin: uniform_vec(rng, nu, 0.5),
        }
    };
    let terminal_cost = |rng: &mut ChaCha8Rng| {
        let l = uniform(rng, nx, nx);
        TerminalCost {
            p: &l * l.transpose() / nx as f64 + DMatrix::identity(nx, nx) * 0.5,
            p_lin: uniform_vec(rng, nx, 0.5),
        }
    };
    let stage_constraint = |rng: &mut ChaCha8Rng| match spec.style {
        ConstraintStyle::Dense => StageConstraint {
            f: uniform(rng, spec.stage_rows, nx),
            g: uniform(rng, spec.stage_rows, nu),
            set: random_penalty(rng, spec.penalty, spec.stage_rows),
        },
        ConstraintStyle::InputBox => StageConstraint {
            f: DMatrix::zeros(nu, nx),
            g: DMatrix::identity(nu, nu),
            set: random_penalty(rng, spec.penalty, nu),
        },
    };
    let terminal_constraint = |rng: &mut ChaCha8Rng| match spec.style {
        ConstraintStyle::Dense => TerminalConstraint {
            f: uniform(rng, spec.terminal_rows, nx),
            set: random_penalty(rng, spec.penalty, spec.terminal_rows),
        },
        ConstraintStyle::InputBox => TerminalConstraint {
            f: DMatrix::zeros(0, nx),
            set: NonsmoothSpec::Free,
        },
    };

    fn draw<T>(rng: &mut ChaCha8Rng, per_node: bool, count: usize, mut f: impl FnMut(&mut ChaCha8Rng) -> T) -> NodeData<T> {
        if per_node {
            NodeData::PerNode((0..count).map(|_| f(rng)).collect())
        } else {
            NodeData::Shared(f(rng))
        }
    }

    let tv = spec.time_varying;
    let parts = ProblemParts {
        dynamics: draw(&mut rng, tv, n_edges, &mut dynamics),
        costs: draw(&mut rng, tv, n_edges, cost),
        terminal_costs: draw(&mut rng, tv, n_leaves, terminal_cost),
        stage_constraints: draw(&mut rng, tv, n_edges, stage_constraint),
        terminal_constraints: draw(&mut rng, tv, n_leaves, terminal_constraint),
        root_state: uniform_vec(&mut rng, nx, 1.0),
        tree,
        nx,
        nu,
    };
    let prob = ProblemInstance::new(parts)?;
    if spec.penalty == PenaltyKind::Box {
        center_boxes(&mut rng, prob)
    } else {
        Ok(prob)
    }
}

fn shift_box(set: &NonsmoothSpec, offset: &[f64]) -> NonsmoothSpec {
    match set {
        NonsmoothSpec::Box { lo, hi } => NonsmoothSpec::Box {
            lo: lo.iter().zip(offset).map(|(l, o)| l + o).collect(),
            hi: hi.iter().zip(offset).map(|(h, o)| h + o).collect(),
        },
        other => other.clone(),
    }
}

fn center_boxes(rng: &mut ChaCha8Rng, prob: ProblemInstance) -> Result<ProblemInstance> {
    let tree = prob.tree();
    let us: Vec<_> = (0..tree.num_nonleaf()).map(|_| uniform_vec(rng, prob.nu(), 1.0)).collect();
    let reference = prob.apply_h(&prob.simulate(&us)?)?;
    let layout = prob.layout();
    let stage = (1..tree.num_nodes())
        .map(|i| {
            let mut c = prob.stage_constraint(i).clone();
            c.set = shift_box(&c.set, &reference.as_slice()[layout.stage_block(i)]);
            c
        })
        .collect();
    let terminal = tree
        .leaves()
        .map(|i| {
            let mut c = prob.terminal_constraint(i).clone();
            c.set = shift_box(&c.set, &reference.as_slice()[layout.terminal_block(tree.leaf_index(i))]);
            c
        })
        .collect();
    let mut parts = prob.into_parts();
    parts.stage_constraints = NodeData::PerNode(stage);
    parts.terminal_constraints = NodeData::PerNode(terminal);
    ProblemInstance::new(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dimensions() {
        let p = SpringMassParams::default();
        let prob = gen_spring_mass(&p, DVector::zeros(10)).unwrap();
        assert_eq!((prob.nx(), prob.nu()), (10, 4));
        assert_eq!(prob.tree().num_nonleaf(), 2047);
        assert!(prob.validate().is_empty());
    }

    #[test]
    fn free_particles_keep_velocity() {
        let p = SpringMassParams {
            stiffness: 0.0,
            damping: 0.0,
            ..Default::default()
        };
        let (ac, bc) = spring_mass_continuous(&p);
        let (a, _) = zero_order_hold(&ac, &bc, p.sample_time);
        let v = a.view((5, 5), (5, 5));
        assert!((v - DMatrix::<f64>::identity(5, 5)).amax() < 1e-14);
        let pv = a.view((0, 5), (5, 5));
        assert!((pv - DMatrix::<f64>::identity(5, 5) * 0.5).amax() < 1e-14);
    }

    #[test]
    fn disturbance_follows_mode() {
        let p = SpringMassParams {
            horizon: 2,
            ..Default::default()
        };
        let prob = gen_spring_mass(&p, DVector::zeros(10)).unwrap();
        for i in 1..prob.tree().num_nodes() {
            let expected = if prob.tree().mode(i) == Some(1) { 0.1 } else { 0.0 };
            assert!(prob.dynamics(i).c.iter().all(|&c| c == expected));
        }
    }

    #[test]
    fn too_few_masses() {
        let p = SpringMassParams {
            masses: 1,
            ..Default::default()
        };
        assert!(matches!(gen_spring_mass(&p, DVector::zeros(2)), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn samples_stay_in_range() {
        let p = SpringMassParams::default();
        for x in sample_initial_states(&p, 20, 3) {
            assert!(x.rows(0, 5).amax() <= 2.5);
            assert!(x.rows(5, 5).amax() <= 2.5);
        }
    }

    #[test]
    fn random_instances_are_valid_and_reproducible() {
        for seed in 0..20 {
            let spec = RandomSpec {
                max_branching: 4,
                horizon: 4,
                ..Default::default()
            };
            let a = gen_random_instance(seed, &spec).unwrap();
            assert!(a.tree().num_nodes() <= 50, "{} nodes", a.tree().num_nodes());
            assert!(a.validate().is_empty(), "{:?}", a.validate());
            assert_eq!(a, gen_random_instance(seed, &spec).unwrap());
        }
    }
}
