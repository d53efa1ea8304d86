//! On-disk factor caches keyed by a content hash of the instance.

use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::file::{to_json, Matrix};
use crate::error::{Error, Result};
use crate::factor::{factor, EdgeFactor, FactorCache, NodeFactor, Shape};
use crate::problem::ProblemInstance;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredEdge {
    theta: Matrix,
    lambda: Matrix,
    phi: Matrix,
    d: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredNode {
    k: Matrix,
    sigma: Vec<f64>,
    /// Lower Cholesky factor of the eliminated input Hessian.
    chol: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredCache {
    key: String,
    num_nodes: usize,
    nx: usize,
    nu: usize,
    dual_dim: usize,
    edges: Vec<Option<StoredEdge>>,
    nodes: Vec<StoredNode>,
    c_hat: Vec<Vec<f64>>,
    value: Vec<Matrix>,
}

/// SHA-256 of the canonical problem file with the root state zeroed, since
/// the factorization does not depend on it.
pub fn instance_key(prob: &ProblemInstance) -> Result<String> {
    let canonical = prob.with_root_state(DVector::zeros(prob.nx()))?;
    let digest = Sha256::digest(to_json(&canonical)?.as_bytes());
    Ok(hex::encode(digest))
}

fn mat(m: &Matrix) -> Result<DMatrix<f64>> {
    DMatrix::try_from(m)
}

fn store(cache: &FactorCache, key: String) -> StoredCache {
    let s = cache.shape;
    StoredCache {
        key,
        num_nodes: s.num_nodes,
        nx: s.nx,
        nu: s.nu,
        dual_dim: s.dual_dim,
        edges: cache
            .edges
            .iter()
            .map(|e| {
                e.as_ref().map(|e| StoredEdge {
                    theta: (&e.theta).into(),
                    lambda: (&e.lambda).into(),
                    phi: (&e.phi).into(),
                    d: (&e.d).into(),
                })
            })
            .collect(),
        nodes: cache
            .nodes
            .iter()
            .map(|n| StoredNode {
                k: (&n.k).into(),
                sigma: n.sigma.as_slice().to_vec(),
                chol: (&n.rbar.l()).into(),
            })
            .collect(),
        c_hat: cache.c_hat.iter().map(|v| v.as_slice().to_vec()).collect(),
        value: cache.value.iter().map(Matrix::from).collect(),
    }
}

fn restore(stored: &StoredCache) -> Result<FactorCache> {
    let edges = stored
        .edges
        .iter()
        .map(|e| {
            e.as_ref()
                .map(|e| {
                    Ok(EdgeFactor {
                        theta: mat(&e.theta)?,
                        lambda: mat(&e.lambda)?,
                        phi: mat(&e.phi)?,
                        d: mat(&e.d)?,
                    })
                })
                .transpose()
        })
        .collect::<Result<_>>()?;
    let nodes = stored
        .nodes
        .iter()
        .map(|n| {
            Ok(NodeFactor {
                k: mat(&n.k)?,
                sigma: DVector::from_column_slice(&n.sigma),
                rbar: Cholesky::pack_dirty(mat(&n.chol)?),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FactorCache {
        edges,
        nodes,
        c_hat: stored.c_hat.iter().map(|v| DVector::from_column_slice(v)).collect(),
        value: stored.value.iter().map(mat).collect::<Result<_>>()?,
        shape: Shape {
            num_nodes: stored.num_nodes,
            nx: stored.nx,
            nu: stored.nu,
            dual_dim: stored.dual_dim,
        },
    })
}

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.factor.json"))
}

/// Loads the factorization from `dir` if a cache with the instance's key
/// exists, otherwise factors and writes it.
pub fn load_or_factor(prob: &ProblemInstance, dir: &Path) -> Result<FactorCache> {
    let key = instance_key(prob)?;
    let path = cache_path(dir, &key);
    if path.exists() {
        let stored: StoredCache = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        if stored.key != key {
            return Err(Error::CacheMismatch(format!("{} holds key {}", path.display(), stored.key)));
        }
        let cache = restore(&stored)?;
        cache.check(prob)?;
        return Ok(cache);
    }
    let cache = factor(prob)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(&path, serde_json::to_string(&store(&cache, key))?)?;
    Ok(cache)
}
