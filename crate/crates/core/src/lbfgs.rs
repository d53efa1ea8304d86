//! Limited-memory BFGS inverse-Hessian approximation with a safeguarded update.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};

pub const DEFAULT_CURVATURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Pair {
    s: DVector<f64>,
    q: DVector<f64>,
    /// `<s, q>`
    sq: f64,
}

/// Circular store of the most recent `(s, q)` pairs.
#[derive(Debug, Clone)]
pub struct LbfgsBuffer {
    memory: usize,
    curvature_tol: f64,
    pairs: VecDeque<Pair>,
}

impl LbfgsBuffer {
    pub fn new(memory: usize, curvature_tol: f64) -> Self {
        Self {
            memory,
            curvature_tol,
            pairs: VecDeque::with_capacity(memory + 1),
        }
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stored `s` vectors, oldest first.
    pub fn s_vectors(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.pairs.iter().map(|p| &p.s)
    }

    /// `-B g` by the two-loop recursion. The initial matrix is
    /// `<s, q> / <q, q>` of the newest pair times the identity.
    pub fn apply_direction(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut p = g.clone();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for pair in self.pairs.iter().rev() {
            let a = pair.s.dot(&p) / pair.sq;
            p.axpy(-a, &pair.q, 1.0);
            alphas.push(a);
        }
        if let Some(newest) = self.pairs.back() {
            p *= newest.sq / newest.q.norm_squared();
        }
        for (pair, a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = pair.q.dot(&p) / pair.sq;
            p.axpy(a - b, &pair.s, 1.0);
        }
        -p
    }

    /// Stores the pair iff `<s, q> > tol * ||s||^2 * scale_ref`. Returns
    /// whether it was stored. The oldest pair is evicted when full.
    pub fn push(&mut self, s: DVector<f64>, q: DVector<f64>, scale_ref: f64) -> Result<bool> {
        if s.len() != q.len() {
            return Err(Error::DimensionMismatch {
                what: "curvature pair",
                expected: s.len(),
                got: q.len(),
            });
        }
        if let Some(p) = self.pairs.front() {
            if p.s.len() != s.len() {
                return Err(Error::DimensionMismatch {
                    what: "curvature pair",
                    expected: p.s.len(),
                    got: s.len(),
                });
            }
        }
        let sq = s.dot(&q);
        if !(sq > self.curvature_tol * s.norm_squared() * scale_ref) || self.memory == 0 {
            return Ok(false);
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back(Pair { s, q, sq });
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn empty_buffer_is_steepest_descent() {
        let b = LbfgsBuffer::new(5, DEFAULT_CURVATURE_TOL);
        assert_eq!(b.apply_direction(&v(&[1.0, -2.0])), v(&[-1.0, 2.0]));
    }

    #[test]
    fn identical_pair_acts_as_identity() {
        let mut b = LbfgsBuffer::new(5, DEFAULT_CURVATURE_TOL);
        assert!(b.push(v(&[1.0, 2.0, 0.0]), v(&[1.0, 2.0, 0.0]), 1.0).unwrap());
        let g = v(&[0.3, -1.0, 2.0]);
        assert!((b.apply_direction(&g) + &g).amax() < 1e-15);
    }

    #[test]
    fn secant_equation_holds_for_newest_pair() {
        let mut b = LbfgsBuffer::new(3, DEFAULT_CURVATURE_TOL);
        b.push(v(&[1.0, 0.0, 1.0]), v(&[2.0, 0.5, 1.0]), 1.0).unwrap();
        b.push(v(&[0.0, 1.0, -1.0]), v(&[0.2, 3.0, -1.0]), 1.0).unwrap();
        let d = b.apply_direction(&v(&[0.2, 3.0, -1.0]));
        assert!((d + v(&[0.0, 1.0, -1.0])).amax() < 1e-12);
    }

    #[test]
    fn curvature_safeguard() {
        let mut b = LbfgsBuffer::new(5, 1e-12);
        assert!(!b.push(v(&[1.0, 0.0]), v(&[-1.0, 0.0]), 0.0).unwrap());
        assert!(b.push(v(&[1.0, 0.0]), v(&[1.0, 0.0]), 0.5).unwrap());
        // <s, q> equal to the threshold is rejected
        let mut strict = LbfgsBuffer::new(5, 0.5);
        assert!(!strict.push(v(&[1.0, 0.0]), v(&[1.0, 0.0]), 2.0).unwrap());
    }

    #[test]
    fn mismatched_pair_is_an_error() {
        let mut b = LbfgsBuffer::new(5, 1e-12);
        assert!(b.push(v(&[1.0]), v(&[1.0, 2.0]), 1.0).is_err());
    }

    #[test]
    fn fifo_eviction() {
        let mut b = LbfgsBuffer::new(2, 1e-12);
        for k in 1..=3 {
            let s = v(&[k as f64, 1.0]);
            b.push(s.clone(), s, 1.0).unwrap();
        }
        let kept: Vec<f64> = b.s_vectors().map(|s| s[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
    }

    #[test]
    fn clear_resets_scaling() {
        let mut b = LbfgsBuffer::new(5, 1e-12);
        b.clear();
        assert!(b.is_empty());
        b.push(v(&[1.0, 0.0]), v(&[4.0, 0.0]), 1.0).unwrap();
        b.clear();
        assert_eq!(b.apply_direction(&v(&[1.0, 1.0])), v(&[-1.0, -1.0]));
    }
}
