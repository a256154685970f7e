//! Noise schedules `(alpha_t, sigma_t)` and outer time grids.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::{Error, Result};

/// Variance-preserving schedule with `alpha_t^2 + sigma_t^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSchedule {
    /// `alpha_t = exp(-1/2 * int_0^t beta)` with `beta` linear from `beta_min` to `beta_max` over `[0, t_max]`.
    VpLinear {
        beta_min: f64,
        beta_max: f64,
        t_max: f64,
    },
    /// Cosine schedule with small offset `s`.
    VpCosine { offset: f64, t_max: f64 },
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::VpLinear {
            beta_min: 0.1,
            beta_max: 30.0,
            t_max: 1.0,
        }
    }
}

/// Largest terminal `alpha_T` accepted as "x_T is standard normal".
pub const TERMINAL_ALPHA_TOL: f64 = 1e-3;

impl NoiseSchedule {
    pub fn vp_linear(beta_min: f64, beta_max: f64, t_max: f64) -> Result<Self> {
        if !(beta_min > 0.0 && beta_max > beta_min && t_max > 0.0)
            || !(beta_max.is_finite() && t_max.is_finite())
        {
            return Err(Error::invalid(
                "vp-linear schedule needs 0 < beta_min < beta_max and t_max > 0",
            ));
        }
        Self::VpLinear {
            beta_min,
            beta_max,
            t_max,
        }
        .checked()
    }

    pub fn vp_cosine(offset: f64, t_max: f64) -> Result<Self> {
        if !((0.0..1.0).contains(&offset) && t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::invalid(
                "cosine schedule needs 0 <= offset < 1 and t_max > 0",
            ));
        }
        Self::VpCosine { offset, t_max }.checked()
    }

    fn checked(self) -> Result<Self> {
        let (alpha, sigma) = self.eval_unchecked(self.t_max());
        if alpha > TERMINAL_ALPHA_TOL || (sigma - 1.0).abs() > TERMINAL_ALPHA_TOL {
            return Err(Error::invalid(alloc::format!(
                "schedule does not reach N(0, I) at T: alpha_T = {alpha:e}, sigma_T = {sigma}"
            )));
        }
        Ok(self)
    }

    pub fn t_max(&self) -> f64 {
        match *self {
            NoiseSchedule::VpLinear { t_max, .. } | NoiseSchedule::VpCosine { t_max, .. } => t_max,
        }
    }

    /// `(alpha_t, sigma_t)` for `t` in `[0, T]`.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=self.t_max()).contains(&t) {
            return Err(Error::invalid(alloc::format!(
                "time {t} outside [0, {}]",
                self.t_max()
            )));
        }
        Ok(self.eval_unchecked(t))
    }

    pub fn alpha(&self, t: f64) -> Result<f64> {
        self.eval(t).map(|(a, _)| a)
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        self.eval(t).map(|(_, s)| s)
    }

    fn eval_unchecked(&self, t: f64) -> (f64, f64) {
        match *self {
            NoiseSchedule::VpLinear {
                beta_min,
                beta_max,
                t_max,
            } => {
                let integral = beta_min * t + 0.5 * (beta_max - beta_min) * t * t / t_max;
                let alpha = libm::exp(-0.5 * integral);
                // sigma^2 = 1 - exp(-integral), exact zero at t = 0
                let sigma = libm::sqrt(-libm::expm1(-integral));
                (alpha, sigma)
            }
            NoiseSchedule::VpCosine { offset, t_max } => {
                let f = |u: f64| libm::cos(FRAC_PI_2 * (u + offset) / (1.0 + offset));
                let alpha = (f(t / t_max) / f(0.0)).clamp(0.0, 1.0);
                let sigma = libm::sqrt((1.0 - alpha * alpha).max(0.0));
                (alpha, sigma)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridSpacing {
    Uniform,
    /// `t_i = T (i/N)^p`, denser near `t = 0` for `p > 1`.
    Polynomial(f64),
}

impl Default for GridSpacing {
    fn default() -> Self {
        GridSpacing::Polynomial(2.0)
    }
}

/// Partition `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(steps: usize, t_max: f64, spacing: GridSpacing) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("time grid needs N >= 1"));
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::invalid("time grid needs T > 0"));
        }
        let times: Vec<f64> = (0..=steps)
            .map(|i| {
                let u = i as f64 / steps as f64;
                match spacing {
                    GridSpacing::Uniform => t_max * u,
                    GridSpacing::Polynomial(p) => t_max * libm::pow(u, p),
                }
            })
            .collect();
        if let GridSpacing::Polynomial(p) = spacing {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::invalid("polynomial spacing needs p > 0"));
            }
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("time grid collapsed; lower N or p"));
        }
        Ok(TimeGrid { times })
    }

    /// Use an explicit list of times (must start at 0 and strictly increase).
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "time grid must start at 0 and strictly increase",
            ));
        }
        Ok(TimeGrid { times })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t(&self, i: usize) -> f64 {
        self.times[i]
    }
}
