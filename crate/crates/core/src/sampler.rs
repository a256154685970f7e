//! The outer reverse-diffusion loop shared by Robust-GD and Robust-CG.
//!
//! Each step estimates `x0hat` from the current latent, refines the
//! measurement, solves the robust inner problem and re-noises the result to
//! the next (earlier) time.

use alloc::vec::Vec;

use crate::denoiser::{ddim_multistep_x0, DataPredictionModel, EstimatorConfig};
use crate::inner::{robust_cg_inner, robust_gd_inner, CgConfig, GdConfig};
use crate::operators::ForwardOperator;
use crate::refine::{refine_measurement, RefineParams};
use crate::rng::RngStream;
use crate::robust_loss::{huber_objective, HuberParams, RobustObjectiveParams};
use crate::schedule::{NoiseSchedule, TimeGrid};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerSolver {
    Gd(GdConfig),
    Cg(CgConfig),
}

/// Rule producing the prior-anchoring radius `r_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RSchedule {
    /// `r_t = c * sigma_t`
    ScaledSigma(f64),
    Constant(f64),
    /// `r_t = k / sigma_t`: keeps the prior/data weight ratio `1/r_t^2 : 1/gamma_t^2` fixed at `1 : k^2`
    /// under `gamma_t = 1/sigma_t`.
    InverseSigma(f64),
}

impl Default for RSchedule {
    fn default() -> Self {
        RSchedule::InverseSigma(1.0)
    }
}

impl RSchedule {
    pub fn r_t(&self, sigma_t: f64) -> f64 {
        match *self {
            RSchedule::ScaledSigma(c) => c * sigma_t,
            RSchedule::Constant(r) => r,
            RSchedule::InverseSigma(k) => k / sigma_t,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            RSchedule::ScaledSigma(c) => c,
            RSchedule::Constant(r) => r,
            RSchedule::InverseSigma(k) => k,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid("r schedule parameter must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Outer steps `N`; must match the time grid.
    pub steps: usize,
    pub inner: InnerSolver,
    pub huber: HuberParams,
    /// Measurement noise level assumed by the refinement step.
    pub sigma: f64,
    pub r_schedule: RSchedule,
    pub estimator: EstimatorConfig,
    pub seed: u64,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("sampler needs N >= 1"));
        }
        match &self.inner {
            InnerSolver::Gd(c) => c.validate()?,
            InnerSolver::Cg(c) => c.validate()?,
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("measurement noise sigma must be >= 0"));
        }
        self.r_schedule.validate()?;
        self.estimator.validate()
    }
}

/// Source of wall-clock seconds; `()` reports zero.
pub trait Clock {
    fn now(&mut self) -> f64;
}

impl Clock for () {
    fn now(&mut self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    /// Huber objective at the inner solver's start (`x0hat`).
    pub objective_initial: f64,
    /// Huber objective at the inner solver's output.
    pub objective_final: f64,
    /// `|x0bar - x0hat|`
    pub correction_norm: f64,
    pub wall_s: f64,
}

/// One record per outer step, in execution order (`t_N` first).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleTrace {
    pub records: Vec<StepRecord>,
}

pub fn run_sampler<M, O>(
    model: &mut M,
    y: &Tensor,
    op: &O,
    cfg: &SolverConfig,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
) -> Result<(Tensor, SampleTrace)>
where
    M: DataPredictionModel + ?Sized,
    O: ForwardOperator + ?Sized,
{
    run_sampler_timed(model, y, op, cfg, schedule, grid, &mut ())
}

pub fn run_sampler_timed<M, O, C>(
    model: &mut M,
    y: &Tensor,
    op: &O,
    cfg: &SolverConfig,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    clock: &mut C,
) -> Result<(Tensor, SampleTrace)>
where
    M: DataPredictionModel + ?Sized,
    O: ForwardOperator + ?Sized,
    C: Clock + ?Sized,
{
    cfg.validate()?;
    y.ensure_shape(op.output_shape())?;
    if grid.steps() != cfg.steps {
        return Err(Error::invalid(alloc::format!(
            "time grid has {} steps, config asks for {}",
            grid.steps(),
            cfg.steps
        )));
    }
    if grid.t(cfg.steps) > schedule.t_max() {
        return Err(Error::invalid(
            "time grid extends past the schedule horizon",
        ));
    }

    let mut rng = RngStream::new(cfg.seed);
    let mut x = rng.gaussian_tensor(op.input_shape());
    let mut trace = SampleTrace {
        records: Vec::with_capacity(cfg.steps),
    };
    for i in (1..=cfg.steps).rev() {
        let start = clock.now();
        let t = grid.t(i);
        let (_, sigma_t) = schedule.eval(t)?;
        let gamma_t = 1.0 / sigma_t;
        let x0hat = ddim_multistep_x0(model, &x, t, schedule, &cfg.estimator)?;
        x0hat.ensure_shape(op.input_shape())?;
        let (_, ybar) = refine_measurement(
            y,
            &op.apply(&x0hat)?,
            &RefineParams::new(cfg.sigma, gamma_t)?,
        )?;
        let params = RobustObjectiveParams::new(cfg.r_schedule.r_t(sigma_t), gamma_t, cfg.huber)?;
        let x0bar = match &cfg.inner {
            InnerSolver::Gd(gd) => robust_gd_inner(&x0hat, &ybar, op, &params, gd),
            InnerSolver::Cg(cg) => robust_cg_inner(&x0hat, &ybar, op, &params, cg),
        }
        .map_err(|e| e.at_outer_step(i))?;

        let (alpha_prev, sigma_prev) = schedule.eval(grid.t(i - 1))?;
        x = if sigma_prev == 0.0 {
            x0bar.scale(alpha_prev)
        } else {
            let mut next = x0bar.scale(alpha_prev);
            next.axpy(sigma_prev, &rng.gaussian_tensor(op.input_shape()));
            next
        };
        trace.records.push(StepRecord {
            t,
            objective_initial: huber_objective(&x0hat, &x0hat, &ybar, op, &params)?,
            objective_final: huber_objective(&x0bar, &x0hat, &ybar, op, &params)?,
            correction_norm: x0bar.sub(&x0hat).norm(),
            wall_s: clock.now() - start,
        });
    }
    Ok((x, trace))
}
