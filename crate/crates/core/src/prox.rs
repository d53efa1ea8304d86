//! Proximal operators, conjugate values and subdifferential distances of the
//! block-separable nonsmooth term `g(z) = sum_i pi^i gbar^i(z^i)`.
//!
//! Each block owns a [`BlockFunction`] that already includes its probability
//! weight. Indicators absorb the weight; an l1 block with parameter `gamma`
//! at a node of probability `pi` becomes `pi * gamma * ||z||_1`.

use std::fmt::Debug;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::{NonsmoothSpec, ProblemInstance};

/// Slack for deciding that a point lies on a box face when measuring
/// subdifferential distances.
const FACE_TOL: f64 = 1e-10;

/// One block of a separable function. Implementors supply the prox and the
/// conjugate value; the conjugate prox defaults to the Moreau decomposition.
pub trait BlockFunction: Debug + Send + Sync {
    /// `prox_{step * h}(v)`, in place.
    fn prox(&self, v: &mut [f64], step: f64);

    /// `h*(w)`, possibly `+inf`.
    fn conjugate(&self, w: &[f64]) -> f64;

    /// `prox_{step * h*}(v) = v - step * prox_{h / step}(v / step)`, in place.
    fn prox_conjugate(&self, v: &mut [f64], step: f64) {
        let mut scaled: Vec<f64> = v.iter().map(|x| x / step).collect();
        self.prox(&mut scaled, 1.0 / step);
        for (vi, si) in v.iter_mut().zip(&scaled) {
            *vi -= step * si;
        }
    }

    /// `dist_inf(y, dh(z))`, if the block knows its subdifferential.
    fn subgradient_distance(&self, _z: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxIndicator {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BlockFunction for BoxIndicator {
    fn prox(&self, v: &mut [f64], _step: f64) {
        for ((x, &l), &h) in v.iter_mut().zip(&self.lo).zip(&self.hi) {
            *x = x.clamp(l, h);
        }
    }

    fn conjugate(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&wi, (&l, &h))| if wi >= 0.0 { h * wi } else { l * wi })
            .sum()
    }

    fn prox_conjugate(&self, v: &mut [f64], step: f64) {
        for ((x, &l), &h) in v.iter_mut().zip(&self.lo).zip(&self.hi) {
            *x -= step * (*x / step).clamp(l, h);
        }
    }

    fn subgradient_distance(&self, z: &[f64], y: &[f64]) -> Option<f64> {
        let mut d: f64 = 0.0;
        for (((&zi, &yi), &l), &h) in z.iter().zip(y).zip(&self.lo).zip(&self.hi) {
            let at_lo = zi <= l + FACE_TOL * (1.0 + l.abs());
            let at_hi = zi >= h - FACE_TOL * (1.0 + h.abs());
            let di = match (at_lo, at_hi) {
                (true, true) => 0.0,
                (true, false) => yi.max(0.0),
                (false, true) => (-yi).max(0.0),
                (false, false) => yi.abs(),
            };
            d = d.max(di);
        }
        Some(d)
    }
}

/// `weight * ||z||_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedL1 {
    pub weight: f64,
}

impl BlockFunction for WeightedL1 {
    fn prox(&self, v: &mut [f64], step: f64) {
        let t = step * self.weight;
        for x in v.iter_mut() {
            *x = x.signum() * (x.abs() - t).max(0.0);
        }
    }

    fn conjugate(&self, w: &[f64]) -> f64 {
        if w.iter().all(|x| x.abs() <= self.weight) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn prox_conjugate(&self, v: &mut [f64], _step: f64) {
        for x in v.iter_mut() {
            *x = x.clamp(-self.weight, self.weight);
        }
    }

    fn subgradient_distance(&self, z: &[f64], y: &[f64]) -> Option<f64> {
        let mut d: f64 = 0.0;
        for (&zi, &yi) in z.iter().zip(y) {
            let di = if zi.abs() <= FACE_TOL {
                (yi.abs() - self.weight).max(0.0)
            } else {
                (yi - self.weight * zi.signum()).abs()
            };
            d = d.max(di);
        }
        Some(d)
    }
}

/// The zero function; its conjugate is the indicator of the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zero;

impl BlockFunction for Zero {
    fn prox(&self, _v: &mut [f64], _step: f64) {}

    fn conjugate(&self, w: &[f64]) -> f64 {
        if w.iter().all(|&x| x == 0.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn prox_conjugate(&self, v: &mut [f64], _step: f64) {
        v.fill(0.0);
    }

    fn subgradient_distance(&self, _z: &[f64], y: &[f64]) -> Option<f64> {
        Some(y.iter().fold(0.0, |m, x| m.max(x.abs())))
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub range: Range<usize>,
    pub function: Arc<dyn BlockFunction>,
}

/// Block-separable function over the dual space.
#[derive(Debug, Clone)]
pub struct SeparableNonsmooth {
    blocks: Vec<Block>,
    dim: usize,
}

impl SeparableNonsmooth {
    /// Blocks must be contiguous and cover `0..dim` in order.
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        let mut next = 0;
        for b in &blocks {
            if b.range.start != next {
                return Err(Error::InvalidProblem(format!(
                    "nonsmooth blocks must partition the dual space; gap at {next}"
                )));
            }
            next = b.range.end;
        }
        Ok(Self { blocks, dim: next })
    }

    pub fn from_problem(prob: &ProblemInstance) -> Result<Self> {
        let blocks = prob
            .blocks()
            .into_iter()
            .map(|(range, spec, weight)| {
                let function: Arc<dyn BlockFunction> = match spec {
                    NonsmoothSpec::Box { lo, hi } => Arc::new(BoxIndicator {
                        lo: lo.clone(),
                        hi: hi.clone(),
                    }),
                    NonsmoothSpec::ScaledL1 { gamma } => {
                        if !(*gamma >= 0.0 && gamma.is_finite()) {
                            return Err(Error::UnsupportedSpec(format!("l1 weight {gamma}")));
                        }
                        Arc::new(WeightedL1 {
                            weight: weight * gamma,
                        })
                    }
                    NonsmoothSpec::Free => Arc::new(Zero),
                };
                Ok(Block { range, function })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    fn check(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "nonsmooth argument",
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `prox_{step * g}(v)`.
    pub fn prox(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        self.check(v)?;
        let mut out = v.clone();
        self.prox_in_place(&mut out, step);
        Ok(out)
    }

    pub(crate) fn prox_in_place(&self, v: &mut DVector<f64>, step: f64) {
        let s = v.as_mut_slice();
        for b in &self.blocks {
            b.function.prox(&mut s[b.range.clone()], step);
        }
    }

    /// `g*(w)`.
    pub fn conjugate(&self, w: &DVector<f64>) -> Result<f64> {
        self.check(w)?;
        Ok(self.conjugate_unchecked(w))
    }

    pub(crate) fn conjugate_unchecked(&self, w: &DVector<f64>) -> f64 {
        let s = w.as_slice();
        self.blocks
            .iter()
            .map(|b| b.function.conjugate(&s[b.range.clone()]))
            .sum()
    }

    /// `prox_{lambda * g*}(v)`.
    pub fn prox_conjugate(&self, v: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        self.check(v)?;
        let mut out = v.clone();
        self.prox_conjugate_in_place(&mut out, lambda);
        Ok(out)
    }

    pub(crate) fn prox_conjugate_in_place(&self, v: &mut DVector<f64>, lambda: f64) {
        let s = v.as_mut_slice();
        for b in &self.blocks {
            b.function.prox_conjugate(&mut s[b.range.clone()], lambda);
        }
    }

    /// Both halves of the Moreau decomposition of `v`:
    /// `z = prox_{g/lambda}(v/lambda)` and `t = prox_{lambda g*}(v)`, so that
    /// `v = t + lambda z`. Each half uses its exact blockwise formula, which
    /// keeps `t` inside the domain of `g*`.
    pub(crate) fn split(&self, v: &DVector<f64>, lambda: f64) -> (DVector<f64>, DVector<f64>) {
        let mut z = v / lambda;
        self.prox_in_place(&mut z, 1.0 / lambda);
        let mut t = v.clone();
        self.prox_conjugate_in_place(&mut t, lambda);
        (z, t)
    }

    /// `dist_inf(y, dg(z))`.
    pub fn subgradient_distance(&self, z: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check(z)?;
        self.check(y)?;
        let (zs, ys) = (z.as_slice(), y.as_slice());
        let mut d: f64 = 0.0;
        for b in &self.blocks {
            let r = b.range.clone();
            let bd = b
                .function
                .subgradient_distance(&zs[r.clone()], &ys[r])
                .ok_or_else(|| Error::UnsupportedSpec("block has no subdifferential".into()))?;
            d = d.max(bd);
        }
        Ok(d)
    }
}
