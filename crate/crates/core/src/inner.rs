//! Inner solvers for the reweighted objective at one outer timestep.
//!
//! Both start from `x0hat`. Robust-GD takes `J` plain gradient steps; Robust-CG
//! runs nonlinear conjugate gradient with a closed-form step on the local
//! quadratic model and Fletcher–Reeves directions. IRLS weights are refreshed
//! from the current residual at every iterate.

use crate::operators::ForwardOperator;
use crate::robust_loss::{
    irls_weights, robust_objective_and_gradient, RobustObjectiveParams, WeightVector,
};
use crate::{Error, Result, Tensor};

/// Squared gradient norm below which CG stops and returns the current iterate.
pub const CG_TERMINATION: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub iterations: usize,
    /// Learning rate; zero is allowed and leaves the iterate untouched.
    pub eta_x: f64,
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("gd iterations must be >= 1"));
        }
        if !(self.eta_x >= 0.0 && self.eta_x.is_finite()) {
            return Err(Error::invalid("gd learning rate eta_x must be >= 0"));
        }
        Ok(())
    }
}

/// Numerator of the CG step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepNumerator {
    /// `g^T g`
    #[default]
    GradGrad,
    /// `g^T d`, the exact line minimizer for a frozen-weight linear problem.
    GradDir,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub iterations: usize,
    /// Finite-difference step for the Jacobian-vector product on nonlinear operators.
    pub eta: f64,
    pub numerator: StepNumerator,
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("cg iterations must be >= 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("cg finite-difference step eta must be > 0"));
        }
        Ok(())
    }
}

/// Iterate, negative gradient and search direction.
#[derive(Debug, Clone, PartialEq)]
pub struct CgState {
    pub x: Tensor,
    pub g: Tensor,
    pub d: Tensor,
}

fn negative_gradient<O: ForwardOperator + ?Sized>(
    x: &Tensor,
    x0hat: &Tensor,
    ybar: &Tensor,
    op: &O,
    p: &RobustObjectiveParams,
) -> Result<(Tensor, WeightVector, Tensor)> {
    let ax = op.apply(x)?;
    let w = irls_weights(&ybar.sub(&ax), p.delta())?;
    let (_, grad) = robust_objective_and_gradient(x, x0hat, ybar, op, p, &w)?;
    Ok((grad.scale(-1.0), w, ax))
}

pub fn robust_gd_inner<O: ForwardOperator + ?Sized>(
    x0hat: &Tensor,
    ybar: &Tensor,
    op: &O,
    p: &RobustObjectiveParams,
    cfg: &GdConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    ybar.ensure_shape(op.output_shape())?;
    let mut x = x0hat.clone();
    for j in 0..cfg.iterations {
        let ax = op.apply(&x)?;
        let w = irls_weights(&ybar.sub(&ax), p.delta())?;
        let (_, grad) = robust_objective_and_gradient(&x, x0hat, ybar, op, p, &w)?;
        x.axpy(-cfg.eta_x, &grad);
        if !x.is_finite() {
            return Err(Error::NumericalFailure {
                outer_step: None,
                iteration: j,
            });
        }
    }
    Ok(x)
}

fn step_size_at<O: ForwardOperator + ?Sized>(
    state: &CgState,
    ax: &Tensor,
    op: &O,
    weights: &WeightVector,
    p: &RobustObjectiveParams,
    cfg: &CgConfig,
    iteration: usize,
) -> Result<f64> {
    let omega = if op.is_linear() {
        weights.apply(&op.forward(&state.d))
    } else {
        let mut shifted = state.x.clone();
        shifted.axpy(cfg.eta, &state.d);
        let ws = weights.apply(&op.forward(&shifted));
        ws.zip_map(&weights.apply(ax), |a, b| (a - b) / cfg.eta)
    };
    let denom = state.d.norm_sq() / (p.r_t * p.r_t) + omega.norm_sq() / (p.gamma_t * p.gamma_t);
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(Error::DegenerateDirection { iteration });
    }
    let num = match cfg.numerator {
        StepNumerator::GradGrad => state.g.norm_sq(),
        StepNumerator::GradDir => state.g.dot(&state.d),
    };
    Ok(num / denom)
}

/// Closed-form step `num / (d^T d / r_t^2 + omega^T omega / gamma_t^2)` with
/// `omega = W A d` on linear operators and `(W A(x + eta d) - W A(x)) / eta` otherwise.
pub fn cg_step_size<O: ForwardOperator + ?Sized>(
    state: &CgState,
    op: &O,
    weights: &WeightVector,
    p: &RobustObjectiveParams,
    cfg: &CgConfig,
) -> Result<f64> {
    state.x.ensure_shape(op.input_shape())?;
    state.x.same_shape(&state.g)?;
    state.x.same_shape(&state.d)?;
    weights.as_tensor().ensure_shape(op.output_shape())?;
    let ax = op.forward(&state.x);
    step_size_at(state, &ax, op, weights, p, cfg, 0)
}

/// `g_next^T g_next / g^T g`, or `None` once `g^T g` vanishes.
pub fn fletcher_reeves_beta(g_next: &Tensor, g: &Tensor) -> Option<f64> {
    let gg = g.norm_sq();
    if gg <= 0.0 {
        return None;
    }
    Some(g_next.norm_sq() / gg)
}

pub fn robust_cg_inner<O: ForwardOperator + ?Sized>(
    x0hat: &Tensor,
    ybar: &Tensor,
    op: &O,
    p: &RobustObjectiveParams,
    cfg: &CgConfig,
) -> Result<Tensor> {
    robust_cg_inner_observed(x0hat, ybar, op, p, cfg, |_, _| {})
}

/// Robust-CG that reports every state `(j, state)` before the `j`-th update
/// (and the final state after the last one).
pub fn robust_cg_inner_observed<O: ForwardOperator + ?Sized>(
    x0hat: &Tensor,
    ybar: &Tensor,
    op: &O,
    p: &RobustObjectiveParams,
    cfg: &CgConfig,
    mut observe: impl FnMut(usize, &CgState),
) -> Result<Tensor> {
    cfg.validate()?;
    ybar.ensure_shape(op.output_shape())?;
    let (g, mut weights, mut ax) = negative_gradient(x0hat, x0hat, ybar, op, p)?;
    let mut state = CgState {
        x: x0hat.clone(),
        d: g.clone(),
        g,
    };
    let mut gg = state.g.norm_sq();
    for j in 0..cfg.iterations {
        observe(j, &state);
        if gg <= CG_TERMINATION {
            return Ok(state.x);
        }
        let alpha = step_size_at(&state, &ax, op, &weights, p, cfg, j)?;
        state.x.axpy(alpha, &state.d);
        if !state.x.is_finite() {
            return Err(Error::NumericalFailure {
                outer_step: None,
                iteration: j,
            });
        }
        let (g_next, w_next, ax_next) = negative_gradient(&state.x, x0hat, ybar, op, p)?;
        weights = w_next;
        ax = ax_next;
        let gg_next = g_next.norm_sq();
        let beta = gg_next / gg;
        let mut d = g_next.clone();
        d.axpy(beta, &state.d);
        if !d.is_finite() {
            return Err(Error::NumericalFailure {
                outer_step: None,
                iteration: j,
            });
        }
        state.g = g_next;
        state.d = d;
        gg = gg_next;
    }
    observe(cfg.iterations, &state);
    Ok(state.x)
}
