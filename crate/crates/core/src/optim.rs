//! Update rules.
//!
//! The factor `B` is moved by one of four manifold rules; `mu`, `d1` and
//! `d2` are unconstrained and use Euclidean ADADELTA. Every rule performs
//! ascent on the lower bound: steps are retracted along `+direction`.
//!
//! Accumulators of the adaptive rules are kept in tangent coordinates and
//! carried between iterations by vector transport (projection at the new
//! point). Transport does not preserve entrywise non-negativity, so square
//! roots are taken as `sgn(E) * sqrt(|E|)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{project, retract, transport, ManifoldPoint, TangentVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    RgdBasic,
    CrgdM,
    RmsProp,
    RgdAdadelta,
}

impl RuleKind {
    pub const ALL: [RuleKind; 4] = [RuleKind::RgdBasic, RuleKind::CrgdM, RuleKind::RmsProp, RuleKind::RgdAdadelta];

    pub fn label(self) -> &'static str {
        match self {
            RuleKind::RgdBasic => "RGD-Basic",
            RuleKind::CrgdM => "cRGD-M",
            RuleKind::RmsProp => "RMSProp",
            RuleKind::RgdAdadelta => "RGD-ADADELTA",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "rgdbasic" | "basic" => Ok(RuleKind::RgdBasic),
            "crgdm" | "momentum" => Ok(RuleKind::CrgdM),
            "rmsprop" => Ok(RuleKind::RmsProp),
            "rgdadadelta" | "adadelta" => Ok(RuleKind::RgdAdadelta),
            _ => Err(Error::InvalidParameter(format!("unknown update rule '{s}'"))),
        }
    }
}

/// Step size `eta`, decay `zeta` and fuzz `epsilon` for the manifold rules;
/// `adadelta_rho`/`adadelta_eps` for the Euclidean ADADELTA on `mu`, `d1`, `d2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    pub eta: T,
    pub zeta: T,
    pub epsilon: T,
    pub adadelta_rho: T,
    pub adadelta_eps: T,
}

impl Default for HyperParams<f64> {
    fn default() -> Self {
        Self { eta: 0.05, zeta: 0.95, epsilon: 1e-6, adadelta_rho: 0.95, adadelta_eps: 1e-6 }
    }
}

impl HyperParams<f64> {
    pub fn cast<T: Scalar>(&self) -> HyperParams<T> {
        HyperParams {
            eta: T::of(self.eta),
            zeta: T::of(self.zeta),
            epsilon: T::of(self.epsilon),
            adadelta_rho: T::of(self.adadelta_rho),
            adadelta_eps: T::of(self.adadelta_eps),
        }
    }
}

impl<T: Scalar> HyperParams<T> {
    pub fn validate(&self) -> Result<()> {
        let (zero, one) = (T::zero(), T::one());
        if !(self.eta > zero) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.zeta > zero && self.zeta < one) {
            return Err(Error::InvalidParameter(format!("zeta must lie in (0, 1), got {}", self.zeta)));
        }
        if !(self.epsilon > zero) || !(self.adadelta_eps > zero) {
            return Err(Error::InvalidParameter("epsilon constants must be positive".into()));
        }
        if !(self.adadelta_rho > zero && self.adadelta_rho < one) {
            return Err(Error::InvalidParameter(format!("adadelta rho must lie in (0, 1), got {}", self.adadelta_rho)));
        }
        Ok(())
    }
}

/// State threaded through successive updates of `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Scalar> {
    /// Momentum, tangent at `prev_point` (cRGD-M).
    pub momentum: Option<TangentVector<T>>,
    /// `E(g_B^2)`, tangent at `prev_point` (RMSProp, RGD-ADADELTA).
    pub sq_grad_avg: Option<DMatrix<T>>,
    /// `E(dB^2)`, projected at the point before `prev_point` (RGD-ADADELTA).
    pub sq_step_avg: Option<DMatrix<T>>,
    /// `B^(t-1)` once a step has been taken.
    pub prev_point: Option<ManifoldPoint<T>>,
    /// `B^(t-2)`.
    pub prev_prev_point: Option<ManifoldPoint<T>>,
    pub step_count: usize,
}

impl<T: Scalar> Default for OptimizerState<T> {
    fn default() -> Self {
        Self {
            momentum: None,
            sq_grad_avg: None,
            sq_step_avg: None,
            prev_point: None,
            prev_prev_point: None,
            step_count: 0,
        }
    }
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    fn advance(mut self, current: &ManifoldPoint<T>) -> Self {
        self.prev_prev_point = self.prev_point.take();
        self.prev_point = Some(current.clone());
        self.step_count += 1;
        self
    }
}

/// Riemannian gradient: the tangent projection of the Euclidean gradient.
pub fn riemann_grad<T: Scalar>(b: &ManifoldPoint<T>, g_b: &DMatrix<T>) -> Result<TangentVector<T>> {
    project(b, g_b)
}

/// `B <- r_B(eta * rgrad)`.
pub fn step_rgd_basic<T: Scalar>(b: &ManifoldPoint<T>, rgrad: &TangentVector<T>, eta: T) -> Result<ManifoldPoint<T>> {
    retract(b, &rgrad.scale(eta))
}

/// Momentum on the manifold: `m <- zeta * Gamma(m) + eta * rgrad`, `B <- r_B(m)`.
pub fn step_crgd_m<T: Scalar>(
    b: &ManifoldPoint<T>,
    rgrad: &TangentVector<T>,
    state: OptimizerState<T>,
    hyper: &HyperParams<T>,
) -> Result<(ManifoldPoint<T>, OptimizerState<T>)> {
    let step = rgrad.scale(hyper.eta);
    let momentum = match (&state.momentum, &state.prev_point) {
        (Some(m), Some(prev)) => transport(prev, b, m)?.scale(hyper.zeta).add(&step)?,
        _ => step,
    };
    let next = retract(b, &momentum)?;
    let mut state = state.advance(b);
    state.momentum = Some(momentum);
    Ok((next, state))
}

/// `sgn(e) * sqrt(|e|) + eps`, entrywise.
fn signed_root<T: Scalar>(e: &DMatrix<T>, eps: T) -> DMatrix<T> {
    e.map(|v| {
        let root = v.abs().sqrt();
        if v < T::zero() {
            eps - root
        } else {
            root + eps
        }
    })
}

fn transported_or_zero<T: Scalar>(acc: Option<&DMatrix<T>>, to: &ManifoldPoint<T>) -> Result<DMatrix<T>> {
    match acc {
        Some(e) => Ok(project(to, e)?.into_matrix()),
        None => Ok(DMatrix::zeros(to.nrows(), to.ncols())),
    }
}

fn ensure_finite<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite_value()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: what.into(), theta: Vec::new() })
    }
}

/// Constrained RMSProp: the Euclidean gradient is normalized entrywise by the
/// transported running average of its square, projected, and retracted.
pub fn step_rmsprop<T: Scalar>(
    b: &ManifoldPoint<T>,
    g_b: &DMatrix<T>,
    state: OptimizerState<T>,
    hyper: &HyperParams<T>,
) -> Result<(ManifoldPoint<T>, OptimizerState<T>)> {
    let zeta = hyper.zeta;
    let fresh = project(b, &g_b.component_mul(g_b))?.into_matrix();
    let acc = transported_or_zero(state.sq_grad_avg.as_ref(), b)? * zeta + fresh * (T::one() - zeta);
    let normalized = g_b.component_div(&signed_root(&acc, hyper.epsilon));
    ensure_finite(&normalized, "normalized RMSProp gradient")?;
    let direction = project(b, &normalized)?.scale(hyper.eta);
    let next = retract(b, &direction)?;
    let mut state = state.advance(b);
    state.sq_grad_avg = Some(acc);
    Ok((next, state))
}

/// Learning-rate-free ADADELTA analogue on the manifold.
///
/// Order within a step: `E(g^2)` update, step `dB` from the previous
/// `E(dB^2)`, `E(dB^2)` update (lagged one point), then the retraction.
pub fn step_rgd_adadelta<T: Scalar>(
    b: &ManifoldPoint<T>,
    g_b: &DMatrix<T>,
    state: OptimizerState<T>,
    hyper: &HyperParams<T>,
) -> Result<(ManifoldPoint<T>, OptimizerState<T>)> {
    let (zeta, eps) = (hyper.zeta, hyper.epsilon);
    let one_minus = T::one() - zeta;

    let fresh = project(b, &g_b.component_mul(g_b))?.into_matrix();
    let sq_grad = transported_or_zero(state.sq_grad_avg.as_ref(), b)? * zeta + fresh * one_minus;

    let prev_sq_step = state.sq_step_avg.clone().unwrap_or_else(|| DMatrix::zeros(b.nrows(), b.ncols()));
    let ratio = signed_root(&prev_sq_step, eps).component_div(&signed_root(&sq_grad, eps));
    let delta = ratio.component_mul(g_b);
    ensure_finite(&delta, "ADADELTA step")?;

    // E(dB^2) lives at B^(t-1); identity maps until the lagged points exist.
    let carried = match (&state.prev_prev_point, &state.prev_point) {
        (Some(_), Some(prev)) => project(prev, &prev_sq_step)?.into_matrix(),
        _ => prev_sq_step,
    };
    let delta_sq = delta.component_mul(&delta);
    let delta_sq = match &state.prev_point {
        Some(prev) => project(prev, &delta_sq)?.into_matrix(),
        None => delta_sq,
    };
    let sq_step = carried * zeta + delta_sq * one_minus;

    let direction = project(b, &delta)?;
    let next = retract(b, &direction)?;
    let mut state = state.advance(b);
    state.sq_grad_avg = Some(sq_grad);
    state.sq_step_avg = Some(sq_step);
    Ok((next, state))
}

/// Applies `rule` to `B` given the Euclidean gradient `g_b`.
pub fn step_factor<T: Scalar>(
    rule: RuleKind,
    b: &ManifoldPoint<T>,
    g_b: &DMatrix<T>,
    state: OptimizerState<T>,
    hyper: &HyperParams<T>,
) -> Result<(ManifoldPoint<T>, OptimizerState<T>)> {
    match rule {
        RuleKind::RgdBasic => {
            let rgrad = riemann_grad(b, g_b)?;
            let next = step_rgd_basic(b, &rgrad, hyper.eta)?;
            Ok((next, state.advance(b)))
        }
        RuleKind::CrgdM => {
            let rgrad = riemann_grad(b, g_b)?;
            step_crgd_m(b, &rgrad, state, hyper)
        }
        RuleKind::RmsProp => step_rmsprop(b, g_b, state, hyper),
        RuleKind::RgdAdadelta => step_rgd_adadelta(b, g_b, state, hyper),
    }
}

/// Running averages for Euclidean ADADELTA.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState<T: Scalar> {
    pub sq_grad: DVector<T>,
    pub sq_step: DVector<T>,
}

impl<T: Scalar> AdadeltaState<T> {
    pub fn zeros(len: usize) -> Self {
        Self { sq_grad: DVector::zeros(len), sq_step: DVector::zeros(len) }
    }
}

/// One ADADELTA ascent step:
/// `E[g^2] <- rho E[g^2] + (1-rho) g^2`,
/// `dx = sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g`,
/// `E[dx^2] <- rho E[dx^2] + (1-rho) dx^2`, `x <- x + dx`.
pub fn step_euclidean_adadelta<T: Scalar>(
    value: &DVector<T>,
    grad: &DVector<T>,
    state: AdadeltaState<T>,
    rho: T,
    eps: T,
) -> Result<(DVector<T>, AdadeltaState<T>)> {
    if value.len() != grad.len() || state.sq_grad.len() != value.len() || state.sq_step.len() != value.len() {
        return Err(Error::dim("ADADELTA value, gradient and state lengths differ"));
    }
    let one_minus = T::one() - rho;
    let mut next = value.clone();
    let AdadeltaState { mut sq_grad, mut sq_step } = state;
    for i in 0..value.len() {
        let g = grad[i];
        sq_grad[i] = rho * sq_grad[i] + one_minus * g * g;
        let dx = (sq_step[i] + eps).sqrt() / (sq_grad[i] + eps).sqrt() * g;
        sq_step[i] = rho * sq_step[i] + one_minus * dx * dx;
        next[i] += dx;
    }
    if !next.iter().all(|v| v.is_finite_value()) {
        return Err(Error::NonFinite { what: "ADADELTA update".into(), theta: Vec::new() });
    }
    Ok((next, AdadeltaState { sq_grad, sq_step }))
}
