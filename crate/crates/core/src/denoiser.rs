//! Data-prediction models `x_theta(x_t, t)` and the multi-step clean-signal estimator.

use alloc::vec::Vec;

use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result, Tensor};

/// Anything that predicts the clean signal from a noisy latent.
///
/// `alpha` and `sigma` are the schedule values at `t`; models that carry their
/// own schedule (e.g. an external network) may ignore them.
pub trait DataPredictionModel {
    fn predict(&mut self, x_t: &Tensor, t: f64, alpha: f64, sigma: f64) -> Result<Tensor>;
}

impl<M: DataPredictionModel + ?Sized> DataPredictionModel for &mut M {
    fn predict(&mut self, x_t: &Tensor, t: f64, alpha: f64, sigma: f64) -> Result<Tensor> {
        (**self).predict(x_t, t, alpha, sigma)
    }
}

/// Independent-pixel Gaussian prior `N(mean, diag(var))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: Tensor,
    var: Tensor,
}

impl GaussianPrior {
    pub fn new(mean: Tensor, var: Tensor) -> Result<Self> {
        mean.same_shape(&var)?;
        if var.as_slice().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("prior variances must be > 0"));
        }
        Ok(GaussianPrior { mean, var })
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn var(&self) -> &Tensor {
        &self.var
    }

    pub fn shape(&self) -> &[usize] {
        self.mean.shape()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Tensor {
        let mut i = 0;
        let (m, v) = (self.mean.as_slice(), self.var.as_slice());
        Tensor::from_fn(self.mean.shape(), |_| {
            let z = m[i] + libm::sqrt(v[i]) * rng.gaussian();
            i += 1;
            z
        })
    }

    /// `E[x_0 | x_t]` under `x_t | x_0 ~ N(alpha x_0, sigma^2 I)`.
    pub fn posterior_mean(&self, x_t: &Tensor, alpha: f64, sigma: f64) -> Tensor {
        if sigma == 0.0 {
            return x_t.scale(1.0 / alpha);
        }
        let s2 = sigma * sigma;
        let (m, v) = (self.mean.as_slice(), self.var.as_slice());
        let xs = x_t.as_slice();
        Tensor::from_fn(x_t.shape(), |i| {
            let gain = alpha * v[i] / (alpha * alpha * v[i] + s2);
            m[i] + gain * (xs[i] - alpha * m[i])
        })
    }

    /// `log N(x_t; alpha mean, alpha^2 var + sigma^2)` summed over entries.
    fn marginal_log_density(&self, x_t: &Tensor, alpha: f64, sigma: f64) -> f64 {
        let s2 = sigma * sigma;
        let (m, v) = (self.mean.as_slice(), self.var.as_slice());
        x_t.as_slice()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let var = alpha * alpha * v[i] + s2;
                let r = x - alpha * m[i];
                -0.5 * (r * r / var + libm::log(2.0 * core::f64::consts::PI * var))
            })
            .sum()
    }

    /// Closed-form marginal score `grad log p_t(x_t)`.
    pub fn marginal_score(&self, x_t: &Tensor, alpha: f64, sigma: f64) -> Tensor {
        let s2 = sigma * sigma;
        let (m, v) = (self.mean.as_slice(), self.var.as_slice());
        let xs = x_t.as_slice();
        Tensor::from_fn(x_t.shape(), |i| {
            -(xs[i] - alpha * m[i]) / (alpha * alpha * v[i] + s2)
        })
    }
}

/// Mixture of independent-pixel Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    weights: Vec<f64>,
    components: Vec<GaussianPrior>,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianPrior>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::invalid("mixture needs one weight per component"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(alloc::format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let shape = components[0].shape();
        for c in &components[1..] {
            if c.shape() != shape {
                return Err(Error::shape(shape, c.shape()));
            }
        }
        Ok(GmmPrior {
            weights,
            components,
        })
    }

    pub fn shape(&self) -> &[usize] {
        self.components[0].shape()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianPrior] {
        &self.components
    }

    pub fn sample(&self, rng: &mut RngStream) -> Tensor {
        let u = rng.uniform();
        let mut acc = 0.0;
        let last = self.components.len() - 1;
        for (k, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc || k == last {
                return self.components[k].sample(rng);
            }
        }
        unreachable!()
    }

    /// Posterior component probabilities given `x_t`.
    pub fn responsibilities(&self, x_t: &Tensor, alpha: f64, sigma: f64) -> Vec<f64> {
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(&w, c)| libm::log(w) + c.marginal_log_density(x_t, alpha, sigma))
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logs.iter().map(|l| libm::exp(l - top)).collect();
        let z: f64 = unnorm.iter().sum();
        unnorm.into_iter().map(|u| u / z).collect()
    }

    pub fn posterior_mean(&self, x_t: &Tensor, alpha: f64, sigma: f64) -> Tensor {
        let resp = self.responsibilities(x_t, alpha, sigma);
        let mut out = Tensor::zeros(x_t.shape());
        for (r, c) in resp.iter().zip(&self.components) {
            out.axpy(*r, &c.posterior_mean(x_t, alpha, sigma));
        }
        out
    }
}

/// Closed-form priors usable as exact data-prediction models.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticPrior {
    Gaussian(GaussianPrior),
    Gmm(GmmPrior),
}

impl AnalyticPrior {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnalyticPrior::Gaussian(g) => g.shape(),
            AnalyticPrior::Gmm(m) => m.shape(),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Tensor {
        match self {
            AnalyticPrior::Gaussian(g) => g.sample(rng),
            AnalyticPrior::Gmm(m) => m.sample(rng),
        }
    }

    pub fn posterior_mean(&self, x_t: &Tensor, alpha: f64, sigma: f64) -> Tensor {
        match self {
            AnalyticPrior::Gaussian(g) => g.posterior_mean(x_t, alpha, sigma),
            AnalyticPrior::Gmm(m) => m.posterior_mean(x_t, alpha, sigma),
        }
    }
}

impl DataPredictionModel for AnalyticPrior {
    fn predict(&mut self, x_t: &Tensor, _t: f64, alpha: f64, sigma: f64) -> Result<Tensor> {
        x_t.ensure_shape(self.shape())?;
        Ok(self.posterior_mean(x_t, alpha, sigma))
    }
}

/// Exact posterior mean `E[x_0 | x_t]` of an analytic prior at time `t`.
pub fn posterior_mean_x0(
    prior: &AnalyticPrior,
    x_t: &Tensor,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    x_t.ensure_shape(prior.shape())?;
    let (alpha, sigma) = schedule.eval(t)?;
    Ok(prior.posterior_mean(x_t, alpha, sigma))
}

/// Score estimate `(alpha x0hat - x_t) / sigma^2`.
pub fn score_from_prediction(
    x0hat: &Tensor,
    x_t: &Tensor,
    alpha: f64,
    sigma: f64,
) -> Result<Tensor> {
    if sigma == 0.0 {
        return Err(Error::DivisionDomain("score undefined at sigma = 0"));
    }
    x0hat.same_shape(x_t)?;
    let s2 = sigma * sigma;
    Ok(x0hat.zip_map(x_t, |x0, x| (alpha * x0 - x) / s2))
}

/// One deterministic DDIM update from `(alpha_cur, sigma_cur)` to `(alpha_prev, sigma_prev)`.
pub fn ddim_step(
    x_t: &Tensor,
    x0_pred: &Tensor,
    (alpha_cur, sigma_cur): (f64, f64),
    (alpha_prev, sigma_prev): (f64, f64),
) -> Tensor {
    let ratio = sigma_prev / sigma_cur;
    let coeff = alpha_prev - ratio * alpha_cur;
    x_t.zip_map(x0_pred, |x, x0| ratio * x + coeff * x0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMethod {
    /// One call to the model at `t`.
    TweedieSingle,
    /// `steps` DDIM updates on a uniform grid from `t` down to 0.
    DdimMultistep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorConfig {
    pub method: EstimatorMethod,
    pub steps: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            method: EstimatorMethod::DdimMultistep,
            steps: 5,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("estimator steps must be >= 1"));
        }
        Ok(())
    }
}

/// Clean-signal estimate `x0hat(x_t, t)` by a short reverse process from `t`.
pub fn ddim_multistep_x0<M: DataPredictionModel + ?Sized>(
    model: &mut M,
    x_t: &Tensor,
    t: f64,
    schedule: &NoiseSchedule,
    cfg: &EstimatorConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if !(t > 0.0) {
        return Err(Error::invalid("clean-signal estimation needs t > 0"));
    }
    let (alpha, sigma) = schedule.eval(t)?;
    if cfg.method == EstimatorMethod::TweedieSingle {
        return model.predict(x_t, t, alpha, sigma);
    }
    let k = cfg.steps;
    let mut x = x_t.clone();
    let mut cur = (t, alpha, sigma);
    for step in (0..k).rev() {
        let t_prev = t * step as f64 / k as f64;
        let (alpha_prev, sigma_prev) = schedule.eval(t_prev)?;
        let x0 = model.predict(&x, cur.0, cur.1, cur.2)?;
        x = ddim_step(&x, &x0, (cur.1, cur.2), (alpha_prev, sigma_prev));
        cur = (t_prev, alpha_prev, sigma_prev);
    }
    // alpha_0 = 1, sigma_0 = 0: the last update lands on the prediction itself.
    Ok(x.scale(1.0 / cur.1))
}
