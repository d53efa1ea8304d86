//! Forward-backward machinery on the dual problem
//! `min_y fhat(y) + g*(y)` with `grad fhat(y) = -H x(y)`.
//!
//! For a step `lambda`, with `h = H x(y)` and `v = y + lambda h`:
//!
//! ```text
//! z = prox_{g/lambda}(v / lambda)      (primal estimate of Hx)
//! T = prox_{lambda g*}(v) = y - lambda R
//! R = z - h                            (fixed-point residual)
//! phi(y) = fhat(y) + g*(T) + lambda <h, R> + lambda/2 ||R||^2
//! ```
//!
//! `phi` is the forward-backward envelope; its gradient is
//! `(I - lambda Hess fhat) R = R + lambda H x0(R)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::factor::FactorCache;
use crate::oracle::{dual_grad, fhat_from, hessian_vec};
use crate::problem::{PrimalPoint, ProblemInstance};
use crate::prox::SeparableNonsmooth;

/// Everything the forward-backward step produces at one dual point.
#[derive(Debug, Clone)]
pub struct FbState {
    pub y: DVector<f64>,
    pub lambda: f64,
    pub x: PrimalPoint,
    pub hx: DVector<f64>,
    pub z: DVector<f64>,
    pub t: DVector<f64>,
    pub residual: DVector<f64>,
    pub fhat: f64,
    /// `g*(T)`
    pub conj: f64,
}

impl FbState {
    /// Builds the state from `x = x(y)` and `hx = H x`; one prox evaluation.
    pub fn from_primal(
        prob: &ProblemInstance,
        g: &SeparableNonsmooth,
        y: DVector<f64>,
        lambda: f64,
        x: PrimalPoint,
        hx: DVector<f64>,
    ) -> Self {
        let fhat = fhat_from(prob, &x, &hx, &y);
        Self::with_fhat(g, y, lambda, x, hx, fhat)
    }

    pub(crate) fn with_fhat(
        g: &SeparableNonsmooth,
        y: DVector<f64>,
        lambda: f64,
        x: PrimalPoint,
        hx: DVector<f64>,
        fhat: f64,
    ) -> Self {
        let v = &y + &hx * lambda;
        let (z, t) = g.split(&v, lambda);
        let residual = &z - &hx;
        let conj = g.conjugate_unchecked(&t);
        Self {
            y,
            lambda,
            x,
            hx,
            z,
            t,
            residual,
            fhat,
            conj,
        }
    }

    pub fn residual_inf(&self) -> f64 {
        self.residual.amax()
    }

    /// Forward-backward envelope value.
    pub fn value(&self) -> Result<f64> {
        if !self.conj.is_finite() {
            return Err(Error::InfiniteConjugate);
        }
        let r = &self.residual;
        Ok(self.fhat + self.conj + self.lambda * self.hx.dot(r) + 0.5 * self.lambda * r.norm_squared())
    }
}

/// One forward-backward step at `y`: a single dual-gradient call and a single prox.
pub fn fb_step(
    cache: &FactorCache,
    prob: &ProblemInstance,
    g: &SeparableNonsmooth,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<FbState> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParams(format!("step {lambda} must be positive")));
    }
    let x = dual_grad(cache, prob, y)?;
    let hx = prob.apply_h(&x)?;
    Ok(FbState::from_primal(prob, g, y.clone(), lambda, x, hx))
}

pub fn fbe_value(state: &FbState) -> Result<f64> {
    state.value()
}

/// Gradient of the envelope together with `H x0(R)`, which step-size checks reuse.
pub fn fbe_grad_parts(
    state: &FbState,
    cache: &FactorCache,
    prob: &ProblemInstance,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let x0 = hessian_vec(cache, prob, &state.residual)?;
    let hx0 = prob.apply_h(&x0)?;
    let grad = &state.residual + &hx0 * state.lambda;
    Ok((grad, hx0))
}

/// `grad phi(y) = R + lambda H x0(R)`; one Hessian-vector product.
pub fn fbe_grad(state: &FbState, cache: &FactorCache, prob: &ProblemInstance) -> Result<DVector<f64>> {
    Ok(fbe_grad_parts(state, cache, prob)?.0)
}

/// Envelope change along `w = y + tau d` without further oracle calls.
///
/// With `h_d = H x0(d)`, `phi(w) - phi(y) = alpha2 tau^2 + alpha1 tau + alpha0(tau)`
/// where only `alpha0` needs a prox and a conjugate value:
///
/// ```text
/// alpha1     = -<h, d> - lambda <h, h_d>
/// alpha2     = -1/2 <h_d, d> - lambda/2 ||h_d||^2
/// alpha0(t)  = g*(T(w)) - g*(T(y)) + lambda/2 (||z(w)||^2 - ||z(y)||^2)
/// ```
#[derive(Debug, Clone)]
pub struct LineSearchCert {
    pub alpha1: f64,
    pub alpha2: f64,
    y: DVector<f64>,
    d: DVector<f64>,
    h: DVector<f64>,
    h_d: DVector<f64>,
    z: DVector<f64>,
    conj: f64,
    lambda: f64,
}

/// Forward-backward quantities at a trial point of the line search.
#[derive(Debug, Clone)]
pub struct Trial {
    pub tau: f64,
    pub w: DVector<f64>,
    pub hw: DVector<f64>,
    pub z: DVector<f64>,
    pub t: DVector<f64>,
    pub conj: f64,
}

impl Trial {
    pub fn residual(&self) -> DVector<f64> {
        &self.z - &self.hw
    }
}

impl LineSearchCert {
    /// `h_d` must be `H x0(d)`.
    pub fn new(state: &FbState, d: &DVector<f64>, h_d: DVector<f64>) -> Self {
        let h = &state.hx;
        let lambda = state.lambda;
        let alpha1 = -h.dot(d) - lambda * h.dot(&h_d);
        let alpha2 = -0.5 * h_d.dot(d) - 0.5 * lambda * h_d.norm_squared();
        Self {
            alpha1,
            alpha2,
            y: state.y.clone(),
            d: d.clone(),
            h: h.clone(),
            h_d,
            z: state.z.clone(),
            conj: state.conj,
            lambda,
        }
    }

    /// Forward-backward step at `y + tau d`: one prox and one conjugate value.
    pub fn trial(&self, g: &SeparableNonsmooth, tau: f64) -> Trial {
        let w = &self.y + &self.d * tau;
        let hw = &self.h + &self.h_d * tau;
        let v = &w + &hw * self.lambda;
        let (z, t) = g.split(&v, self.lambda);
        let conj = g.conjugate_unchecked(&t);
        Trial { tau, w, hw, z, t, conj }
    }

    pub fn alpha0(&self, trial: &Trial) -> f64 {
        let dz = &trial.z - &self.z;
        let sz = &trial.z + &self.z;
        trial.conj - self.conj + 0.5 * self.lambda * dz.dot(&sz)
    }

    /// `phi(y + tau d) - phi(y)` for a trial produced by [`Self::trial`].
    pub fn change(&self, trial: &Trial) -> f64 {
        let tau = trial.tau;
        self.alpha2 * tau * tau + self.alpha1 * tau + self.alpha0(trial)
    }
}
