//! JSON problem files.
//!
//! Matrices are `{"rows", "cols", "data"}` with `data` in row-major order.
//! Per-node data is either `{"shared": ...}` (broadcast to every node) or
//! `{"per_node": [...]}`. The tree is given by ancestor and probability arrays
//! or by a Markov chain that is expanded on load. Serialization always
//! writes ancestor arrays, which is the canonical form.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{
    NodeData, NodeDynamics, NonsmoothSpec, ProblemInstance, ProblemParts, StageConstraint, StageCost,
    TerminalConstraint, TerminalCost,
};
use crate::tree::ScenarioTree;

pub const FORMAT_NAME: &str = "treeprox-problem";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for Matrix {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl TryFrom<&Matrix> for DMatrix<f64> {
    type Error = Error;

    fn try_from(m: &Matrix) -> Result<Self> {
        if m.data.len() != m.rows * m.cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data",
                expected: m.rows * m.cols,
                got: m.data.len(),
            });
        }
        Ok(DMatrix::from_row_slice(m.rows, m.cols, &m.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerNode<T> {
    Shared(T),
    PerNode(Vec<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeSpec {
    Ancestors {
        /// `null` for the root.
        ancestor: Vec<Option<usize>>,
        probability: Vec<f64>,
    },
    Markov {
        transition: Vec<Vec<f64>>,
        initial_dist: Vec<f64>,
        horizon: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsEntry {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub q: Matrix,
    pub r: Matrix,
    pub s: Matrix,
    pub q_lin: Vec<f64>,
    pub r_lin: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalCostEntry {
    pub p: Matrix,
    pub p_lin: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub f: Matrix,
    pub g: Matrix,
    pub set: NonsmoothSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalConstraintEntry {
    pub f: Matrix,
    pub set: NonsmoothSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub format: String,
    pub version: u32,
    pub nx: usize,
    pub nu: usize,
    pub tree: TreeSpec,
    pub root_state: Vec<f64>,
    pub dynamics: PerNode<DynamicsEntry>,
    pub costs: PerNode<CostEntry>,
    pub terminal_costs: PerNode<TerminalCostEntry>,
    pub stage_constraints: PerNode<ConstraintEntry>,
    pub terminal_constraints: PerNode<TerminalConstraintEntry>,
}

fn to_file<T, U>(data: &NodeData<T>, f: impl Fn(&T) -> U) -> PerNode<U> {
    match data {
        NodeData::Shared(v) => PerNode::Shared(f(v)),
        NodeData::PerNode(v) => PerNode::PerNode(v.iter().map(f).collect()),
    }
}

fn from_file<T, U>(data: &PerNode<U>, f: impl Fn(&U) -> Result<T>) -> Result<NodeData<T>> {
    Ok(match data {
        PerNode::Shared(v) => NodeData::Shared(f(v)?),
        PerNode::PerNode(v) => NodeData::PerNode(v.iter().map(f).collect::<Result<_>>()?),
    })
}

fn vec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn mat(m: &Matrix) -> Result<DMatrix<f64>> {
    DMatrix::try_from(m)
}

impl ProblemFile {
    pub fn from_problem(prob: &ProblemInstance) -> Self {
        let parts = prob.to_parts();
        let tree = &parts.tree;
        ProblemFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            nx: parts.nx,
            nu: parts.nu,
            tree: TreeSpec::Ancestors {
                ancestor: tree.ancestors().to_vec(),
                probability: tree.probabilities().to_vec(),
            },
            root_state: parts.root_state.as_slice().to_vec(),
            dynamics: to_file(&parts.dynamics, |d| DynamicsEntry {
                a: (&d.a).into(),
                b: (&d.b).into(),
                c: d.c.as_slice().to_vec(),
            }),
            costs: to_file(&parts.costs, |c| CostEntry {
                q: (&c.q).into(),
                r: (&c.r).into(),
                s: (&c.s).into(),
                q_lin: c.q_lin.as_slice().to_vec(),
                r_lin: c.r_lin.as_slice().to_vec(),
            }),
            terminal_costs: to_file(&parts.terminal_costs, |c| TerminalCostEntry {
                p: (&c.p).into(),
                p_lin: c.p_lin.as_slice().to_vec(),
            }),
            stage_constraints: to_file(&parts.stage_constraints, |c| ConstraintEntry {
                f: (&c.f).into(),
                g: (&c.g).into(),
                set: c.set.clone(),
            }),
            terminal_constraints: to_file(&parts.terminal_constraints, |c| TerminalConstraintEntry {
                f: (&c.f).into(),
                set: c.set.clone(),
            }),
        }
    }

    /// Builds the instance; shape errors are reported, modelling rules are
    /// left to [`ProblemInstance::validate`].
    pub fn to_problem(&self) -> Result<ProblemInstance> {
        if self.format != FORMAT_NAME {
            return Err(Error::InvalidProblem(format!("unknown format {:?}", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::InvalidProblem(format!("unsupported version {}", self.version)));
        }
        let tree = match &self.tree {
            TreeSpec::Ancestors { ancestor, probability } => {
                ScenarioTree::from_ancestors(ancestor.clone(), probability.clone())?
            }
            TreeSpec::Markov {
                transition,
                initial_dist,
                horizon,
            } => ScenarioTree::from_markov(transition, initial_dist, *horizon)?,
        };
        let parts = ProblemParts {
            tree,
            nx: self.nx,
            nu: self.nu,
            dynamics: from_file(&self.dynamics, |d| {
                Ok(NodeDynamics {
                    a: mat(&d.a)?,
                    b: mat(&d.b)?,
                    c: vec(&d.c),
                })
            })?,
            costs: from_file(&self.costs, |c| {
                Ok(StageCost {
                    q: mat(&c.q)?,
                    r: mat(&c.r)?,
                    s: mat(&c.s)?,
                    q_lin: vec(&c.q_lin),
                    r_lin: vec(&c.r_lin),
                })
            })?,
            terminal_costs: from_file(&self.terminal_costs, |c| {
                Ok(TerminalCost {
                    p: mat(&c.p)?,
                    p_lin: vec(&c.p_lin),
                })
            })?,
            stage_constraints: from_file(&self.stage_constraints, |c| {
                Ok(StageConstraint {
                    f: mat(&c.f)?,
                    g: mat(&c.g)?,
                    set: c.set.clone(),
                })
            })?,
            terminal_constraints: from_file(&self.terminal_constraints, |c| {
                Ok(TerminalConstraint {
                    f: mat(&c.f)?,
                    set: c.set.clone(),
                })
            })?,
            root_state: vec(&self.root_state),
        };
        ProblemInstance::new(parts)
    }
}

pub fn to_json(prob: &ProblemInstance) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ProblemFile::from_problem(prob))?)
}

pub fn from_json(text: &str) -> Result<ProblemInstance> {
    serde_json::from_str::<ProblemFile>(text)?.to_problem()
}

pub fn read_problem(path: &Path) -> Result<ProblemInstance> {
    from_json(&std::fs::read_to_string(path)?)
}

pub fn write_problem(prob: &ProblemInstance, path: &Path) -> Result<()> {
    let mut text = to_json(prob)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::generate::{gen_random_instance, gen_spring_mass, RandomSpec, SpringMassParams};

    #[test]
    fn matrices_are_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f = Matrix::from(&m);
        assert_eq!(f.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(mat(&f).unwrap(), m);
        let bad = Matrix { rows: 2, cols: 2, data: vec![1.0] };
        assert!(mat(&bad).is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        for seed in 0..5 {
            let prob = gen_random_instance(seed, &RandomSpec::default()).unwrap();
            let text = to_json(&prob).unwrap();
            let back = from_json(&text).unwrap();
            assert_eq!(back, prob);
            assert_eq!(to_json(&back).unwrap(), text);
        }
    }

    #[test]
    fn markov_tree_expands() {
        let params = SpringMassParams {
            horizon: 3,
            ..Default::default()
        };
        let prob = gen_spring_mass(&params, DVector::zeros(params.nx())).unwrap();
        let mut file = ProblemFile::from_problem(&prob);
        file.tree = TreeSpec::Markov {
            transition: params.transition.clone(),
            initial_dist: params.initial_dist.clone(),
            horizon: 3,
        };
        let back = file.to_problem().unwrap();
        assert_eq!(back.tree().num_nodes(), prob.tree().num_nodes());
        assert_eq!(back.tree().probabilities(), prob.tree().probabilities());
    }

    #[test]
    fn broadcast_data_stays_shared() {
        let prob = gen_random_instance(
            2,
            &RandomSpec {
                time_varying: false,
                ..Default::default()
            },
        )
        .unwrap();
        let file = ProblemFile::from_problem(&prob);
        assert!(matches!(file.dynamics, PerNode::Shared(_)));
    }

    #[test]
    fn wrong_format_is_rejected() {
        let prob = gen_random_instance(1, &RandomSpec::default()).unwrap();
        let mut file = ProblemFile::from_problem(&prob);
        file.format = "other".into();
        assert!(file.to_problem().is_err());
        assert!(from_json("{\"format\": 3}").is_err());
    }
}
