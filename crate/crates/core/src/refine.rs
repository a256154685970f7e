//! Explicit noise estimation and measurement refinement.

use crate::schedule::NoiseSchedule;
use crate::{Error, Result, Tensor};

/// Fidelity weight `gamma_t = 1 / sigma_t`.
pub fn gamma_schedule(t: f64, schedule: &NoiseSchedule) -> Result<f64> {
    let sigma = schedule.sigma(t)?;
    if sigma == 0.0 {
        return Err(Error::DivisionDomain(
            "gamma_t = 1/sigma_t is undefined at sigma_t = 0",
        ));
    }
    Ok(1.0 / sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    /// Measurement noise level.
    pub sigma: f64,
    pub gamma_t: f64,
}

impl RefineParams {
    pub fn new(sigma: f64, gamma_t: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("measurement noise sigma must be >= 0"));
        }
        if !(gamma_t > 0.0 && gamma_t.is_finite()) {
            return Err(Error::invalid("gamma_t must be > 0"));
        }
        Ok(RefineParams { sigma, gamma_t })
    }
}

/// Returns `(nu_tilde, ybar)`:
/// `nu_tilde = sigma^2 / (gamma^2 + sigma^2) (y - A x0hat)` and `ybar = y - nu_tilde`,
/// the convex combination `(gamma^2 y + sigma^2 A x0hat) / (gamma^2 + sigma^2)`.
pub fn refine_measurement(
    y: &Tensor,
    ax0hat: &Tensor,
    p: &RefineParams,
) -> Result<(Tensor, Tensor)> {
    y.same_shape(ax0hat)?;
    let s2 = p.sigma * p.sigma;
    let share = s2 / (p.gamma_t * p.gamma_t + s2);
    let nu = y.zip_map(ax0hat, |yi, ai| share * (yi - ai));
    let mut ybar = y.sub(&nu);
    // keep ybar inside [min(y, Ax), max(y, Ax)] despite rounding
    for ((b, &yi), &ai) in ybar
        .as_mut_slice()
        .iter_mut()
        .zip(y.as_slice())
        .zip(ax0hat.as_slice())
    {
        *b = b.clamp(yi.min(ai), yi.max(ai));
    }
    Ok((nu, ybar))
}
