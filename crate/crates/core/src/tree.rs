//! Scenario trees: stage-ordered node graphs carrying the probabilities of a
//! discrete multistage distribution.
//!
//! Node IDs are dense and ordered by stage, so `nodes(t)` is always a
//! contiguous range and every per-node array in the crate indexes by ID.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on probability sums.
pub const PROBABILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    num_stages: usize,
    stage: Vec<usize>,
    ancestor: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    probability: Vec<f64>,
    stage_offsets: Vec<usize>,
    modes: Vec<Option<usize>>,
}

/// A broken tree invariant. `node` is `None` for stage-level rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub node: Option<usize>,
    pub rule: String,
}

impl Violation {
    pub(crate) fn at(node: usize, rule: impl Into<String>) -> Self {
        Self {
            node: Some(node),
            rule: rule.into(),
        }
    }

    pub(crate) fn global(rule: impl Into<String>) -> Self {
        Self {
            node: None,
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "node {n}: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

impl ScenarioTree {
    /// Builds a tree from an ancestor array (`None` only for node 0) and
    /// per-node probabilities.
    ///
    /// Structural rules (stage ordering, leaves exactly at the last stage)
    /// are enforced here; probability rules are left to [`validate`](Self::validate).
    pub fn from_ancestors(ancestor: Vec<Option<usize>>, probability: Vec<f64>) -> Result<Self> {
        let modes = vec![None; ancestor.len()];
        Self::from_parts(ancestor, probability, modes)
    }

    pub(crate) fn from_parts(
        ancestor: Vec<Option<usize>>,
        probability: Vec<f64>,
        modes: Vec<Option<usize>>,
    ) -> Result<Self> {
        let n = ancestor.len();
        if n == 0 {
            return Err(Error::InvalidProblem("tree has no nodes".into()));
        }
        if probability.len() != n {
            return Err(Error::DimensionMismatch {
                what: "tree probabilities",
                expected: n,
                got: probability.len(),
            });
        }
        if ancestor[0].is_some() {
            return Err(Error::InvalidProblem("node 0 must be the root".into()));
        }
        let mut stage = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for i in 1..n {
            let a = ancestor[i].ok_or_else(|| {
                Error::InvalidProblem(format!("node {i} has no ancestor but is not the root"))
            })?;
            if a >= i {
                return Err(Error::InvalidProblem(format!(
                    "node {i} has ancestor {a}; ancestors must precede their children"
                )));
            }
            stage[i] = stage[a] + 1;
            if stage[i] < stage[i - 1] {
                return Err(Error::InvalidProblem(format!(
                    "node {i} at stage {} follows a node at stage {}; IDs must be ordered by stage",
                    stage[i],
                    stage[i - 1]
                )));
            }
            children[a].push(i);
        }
        let num_stages = stage[n - 1];
        if num_stages == 0 {
            return Err(Error::InvalidProblem("horizon must be at least 1".into()));
        }
        for i in 0..n {
            let leaf = children[i].is_empty();
            if leaf != (stage[i] == num_stages) {
                return Err(Error::InvalidProblem(format!(
                    "node {i} at stage {} is {} but leaves must sit exactly at stage {num_stages}",
                    stage[i],
                    if leaf { "a leaf" } else { "not a leaf" }
                )));
            }
        }
        let mut stage_offsets = vec![0usize; num_stages + 2];
        for &t in &stage {
            stage_offsets[t + 1] += 1;
        }
        for t in 1..stage_offsets.len() {
            stage_offsets[t] += stage_offsets[t - 1];
        }
        Ok(Self {
            num_stages,
            stage,
            ancestor,
            children,
            probability,
            stage_offsets,
            modes,
        })
    }

    /// Full tree of a Markov chain over `horizon` stages. Zero-probability
    /// branches are pruned.
    pub fn from_markov(transition: &[Vec<f64>], initial_dist: &[f64], horizon: usize) -> Result<Self> {
        let num_modes = initial_dist.len();
        if horizon == 0 {
            return Err(Error::InvalidParams("horizon must be at least 1".into()));
        }
        if transition.len() != num_modes {
            return Err(Error::DimensionMismatch {
                what: "transition rows",
                expected: num_modes,
                got: transition.len(),
            });
        }
        check_stochastic(initial_dist, 0)?;
        for (row, p) in transition.iter().enumerate() {
            if p.len() != num_modes {
                return Err(Error::DimensionMismatch {
                    what: "transition columns",
                    expected: num_modes,
                    got: p.len(),
                });
            }
            // row 0 is reserved for the initial distribution in error reports
            check_stochastic(p, row + 1)?;
        }

        let mut ancestor = vec![None];
        let mut probability = vec![1.0];
        let mut modes: Vec<Option<usize>> = vec![None];
        let mut frontier = vec![0usize];
        for _ in 0..horizon {
            let mut next = Vec::new();
            for &i in &frontier {
                let branch: &[f64] = match modes[i] {
                    None => initial_dist,
                    Some(w) => transition[w].as_slice(),
                };
                for (w, &p) in branch.iter().enumerate() {
                    if p > 0.0 {
                        next.push(ancestor.len());
                        ancestor.push(Some(i));
                        probability.push(probability[i] * p);
                        modes.push(Some(w));
                    }
                }
            }
            frontier = next;
        }
        Self::from_parts(ancestor, probability, modes)
    }

    /// Horizon `N`; stages run over `0..=N`.
    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    pub fn num_nodes(&self) -> usize {
        self.stage.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.stage_range(self.num_stages).len()
    }

    pub fn num_nonleaf(&self) -> usize {
        self.stage_offsets[self.num_stages]
    }

    pub fn stage_of(&self, node: usize) -> usize {
        self.stage[node]
    }

    pub fn ancestor(&self, node: usize) -> Option<usize> {
        self.ancestor[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn probability(&self, node: usize) -> f64 {
        self.probability[node]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probability
    }

    pub fn ancestors(&self) -> &[Option<usize>] {
        &self.ancestor
    }

    /// Markov mode that generated the node, if the tree came from a chain.
    pub fn mode(&self, node: usize) -> Option<usize> {
        self.modes[node]
    }

    pub fn modes(&self) -> &[Option<usize>] {
        &self.modes
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.stage[node] == self.num_stages
    }

    /// Leaf index of a leaf node (position within `nodes(N)`).
    pub fn leaf_index(&self, node: usize) -> usize {
        debug_assert!(self.is_leaf(node));
        node - self.stage_offsets[self.num_stages]
    }

    /// `nodes(t)` as a contiguous ID range. Panics if `t > N`.
    pub fn stage_range(&self, t: usize) -> Range<usize> {
        self.stage_offsets[t]..self.stage_offsets[t + 1]
    }

    /// `nodes(t1, t2)`: all nodes with stage in `[t1, t2]`.
    pub fn nodes_at(&self, t1: usize, t2: usize) -> Result<Range<usize>> {
        if t1 > t2 || t2 > self.num_stages {
            return Err(Error::StageOutOfRange {
                t1,
                t2,
                horizon: self.num_stages,
            });
        }
        Ok(self.stage_offsets[t1]..self.stage_offsets[t2 + 1])
    }

    pub fn leaves(&self) -> Range<usize> {
        self.stage_range(self.num_stages)
    }

    /// Checks the probability invariants. An empty list means the tree is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if (self.probability[0] - 1.0).abs() > PROBABILITY_TOL {
            out.push(Violation::at(
                0,
                format!("root probability {} != 1", self.probability[0]),
            ));
        }
        for (i, &p) in self.probability.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0 + PROBABILITY_TOL) {
                out.push(Violation::at(i, format!("probability {p} outside (0, 1]")));
            }
        }
        for t in 0..=self.num_stages {
            let s: f64 = self.stage_range(t).map(|i| self.probability[i]).sum();
            if (s - 1.0).abs() > PROBABILITY_TOL {
                out.push(Violation::global(format!(
                    "stage {t} probabilities sum to {s}, expected 1"
                )));
            }
        }
        for i in 0..self.num_nodes() {
            if self.children[i].is_empty() {
                continue;
            }
            let s: f64 = self.children[i].iter().map(|&c| self.probability[c]).sum();
            if (s - self.probability[i]).abs() > PROBABILITY_TOL {
                out.push(Violation::at(
                    i,
                    format!(
                        "children probabilities sum to {s}, expected {}",
                        self.probability[i]
                    ),
                ));
            }
            for &c in &self.children[i] {
                if self.ancestor[c] != Some(i) || self.stage[c] != self.stage[i] + 1 {
                    out.push(Violation::at(c, format!("inconsistent edge from node {i}")));
                }
            }
        }
        out
    }

    /// Conditional probability vector of the children of `node`.
    pub fn conditional(&self, node: usize) -> Vec<f64> {
        let p = self.probability[node];
        self.children[node]
            .iter()
            .map(|&c| self.probability[c] / p)
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn with_probabilities(&self, probability: Vec<f64>) -> Self {
        Self {
            probability,
            ..self.clone()
        }
    }
}

fn check_stochastic(row: &[f64], index: usize) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > PROBABILITY_TOL {
        return Err(Error::NonStochasticMatrix { row: index, sum });
    }
    Ok(())
}
