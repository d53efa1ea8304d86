use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::{NodeData, NonsmoothSpec, ProblemInstance, StageConstraint, TerminalConstraint};

fn scale_set(set: &NonsmoothSpec, s: f64) -> NonsmoothSpec {
    match set {
        NonsmoothSpec::Box { lo, hi } => NonsmoothSpec::Box {
            lo: lo.iter().map(|v| v * s).collect(),
            hi: hi.iter().map(|v| v * s).collect(),
        },
        // pi * gamma * ||z / s||_1 = pi * (gamma / s) * ||z||_1
        NonsmoothSpec::ScaledL1 { gamma } => NonsmoothSpec::ScaledL1 { gamma: gamma / s },
        NonsmoothSpec::Free => NonsmoothSpec::Free,
    }
}

/// Rescales every constraint block by `sqrt(pi)` of its node, which turns the
/// dual variable into `y / sqrt(pi)`. Returns the equivalent problem and the
/// per-coordinate dual scaling.
pub fn precondition(prob: &ProblemInstance) -> Result<(ProblemInstance, DVector<f64>)> {
    let tree = prob.tree();
    if let Some(node) = (0..tree.num_nodes()).find(|&i| !(tree.probability(i) > 0.0)) {
        return Err(Error::ZeroProbability { node });
    }
    let mut scale = DVector::zeros(prob.dual_dim());
    let layout = prob.layout();

    let stage: Vec<StageConstraint> = (1..tree.num_nodes())
        .map(|i| {
            let s = tree.probability(i).sqrt();
            scale.rows_range_mut(layout.stage_block(i)).fill(s);
            let c = prob.stage_constraint(i);
            StageConstraint {
                f: &c.f * s,
                g: &c.g * s,
                set: scale_set(&c.set, s),
            }
        })
        .collect();
    let terminal: Vec<TerminalConstraint> = tree
        .leaves()
        .map(|i| {
            let s = tree.probability(i).sqrt();
            scale
                .rows_range_mut(layout.terminal_block(tree.leaf_index(i)))
                .fill(s);
            let c = prob.terminal_constraint(i);
            TerminalConstraint {
                f: &c.f * s,
                set: scale_set(&c.set, s),
            }
        })
        .collect();

    let mut parts = prob.to_parts();
    parts.stage_constraints = NodeData::PerNode(stage);
    parts.terminal_constraints = NodeData::PerNode(terminal);
    Ok((ProblemInstance::new(parts)?, scale))
}
