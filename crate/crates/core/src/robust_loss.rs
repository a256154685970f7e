//! Huber loss, IRLS weights and the reweighted objective.

use crate::operators::ForwardOperator;
use crate::{Error, Result, Tensor};

/// Huber threshold. `delta = +inf` turns the loss into the plain squared residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    delta: f64,
}

impl HuberParams {
    pub fn new(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(HuberParams { delta })
    }

    pub fn squared_l2() -> Self {
        HuberParams {
            delta: f64::INFINITY,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn is_squared_l2(&self) -> bool {
        self.delta == f64::INFINITY
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::invalid(alloc::format!(
            "Huber threshold must be > 0, got {delta}"
        )));
    }
    Ok(())
}

/// Scalar Huber loss `r^2` inside the knee, `2 delta |r| - delta^2` outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        r * r
    } else {
        2.0 * delta * a - delta * delta
    }
}

pub fn huber_loss(r: &Tensor, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(r.as_slice().iter().map(|&v| huber(v, delta)).sum())
}

/// Diagonal IRLS weights, entries in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Tensor);

impl WeightVector {
    pub fn ones(shape: &[usize]) -> Self {
        WeightVector(Tensor::full(shape, 1.0))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn apply(&self, v: &Tensor) -> Tensor {
        self.0.mul(v)
    }

    /// `W^2 v`
    pub fn apply_squared(&self, v: &Tensor) -> Tensor {
        self.0.zip_map(v, |w, x| w * w * x)
    }
}

pub fn irls_weights(r: &Tensor, delta: f64) -> Result<WeightVector> {
    check_delta(delta)?;
    Ok(WeightVector(r.map(|v| {
        let a = v.abs();
        // a > delta > 0 in this branch, so the ratio is finite
        if a <= delta {
            1.0
        } else {
            libm::sqrt(delta / a)
        }
    })))
}

/// `r_t`, `gamma_t` and the Huber threshold of one inner problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustObjectiveParams {
    pub r_t: f64,
    pub gamma_t: f64,
    pub huber: HuberParams,
}

impl RobustObjectiveParams {
    pub fn new(r_t: f64, gamma_t: f64, huber: HuberParams) -> Result<Self> {
        if !(r_t > 0.0 && r_t.is_finite() && gamma_t > 0.0 && gamma_t.is_finite()) {
            return Err(Error::invalid(
                "r_t and gamma_t must be positive and finite",
            ));
        }
        Ok(RobustObjectiveParams {
            r_t,
            gamma_t,
            huber,
        })
    }

    pub fn delta(&self) -> f64 {
        self.huber.delta()
    }
}

/// `ybar - A(x)`
pub fn residual<O: ForwardOperator + ?Sized>(op: &O, x: &Tensor, ybar: &Tensor) -> Result<Tensor> {
    let ax = op.apply(x)?;
    ybar.same_shape(&ax)?;
    Ok(ybar.sub(&ax))
}

/// Reweighted objective and its gradient with `weights` held fixed:
/// `1/2 (|x0bar - x0hat|^2 / r_t^2 + |W (ybar - A x0bar)|^2 / gamma_t^2)`.
pub fn robust_objective_and_gradient<O: ForwardOperator + ?Sized>(
    x0bar: &Tensor,
    x0hat: &Tensor,
    ybar: &Tensor,
    op: &O,
    p: &RobustObjectiveParams,
    weights: &WeightVector,
) -> Result<(f64, Tensor)> {
    x0bar.same_shape(x0hat)?;
    let r = residual(op, x0bar, ybar)?;
    weights.as_tensor().ensure_shape(r.shape())?;
    let (inv_r2, inv_g2) = (1.0 / (p.r_t * p.r_t), 1.0 / (p.gamma_t * p.gamma_t));
    let prior = x0bar.sub(x0hat);
    let loss = 0.5 * (prior.norm_sq() * inv_r2 + weights.apply(&r).norm_sq() * inv_g2);
    let mut grad = prior.scale(inv_r2);
    grad.axpy(-inv_g2, &op.pullback(x0bar, &weights.apply_squared(&r)));
    Ok((loss, grad))
}

/// Unweighted Huber objective `1/2 (|x0bar - x0hat|^2 / r_t^2 + H_delta(ybar - A x0bar) / gamma_t^2)`.
pub fn huber_objective<O: ForwardOperator + ?Sized>(
    x0bar: &Tensor,
    x0hat: &Tensor,
    ybar: &Tensor,
    op: &O,
    p: &RobustObjectiveParams,
) -> Result<f64> {
    x0bar.same_shape(x0hat)?;
    let r = residual(op, x0bar, ybar)?;
    let data = huber_loss(&r, p.delta())?;
    Ok(0.5 * (x0bar.sub(x0hat).norm_sq() / (p.r_t * p.r_t) + data / (p.gamma_t * p.gamma_t)))
}
