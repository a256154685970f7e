//! Measurement corruption: Gaussian noise on most entries, a fixed outlier value on the rest.

use alloc::vec::Vec;

use crate::rng::RngStream;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub sigma: f64,
    /// Probability that an entry is replaced by `xi`.
    pub rho: f64,
    pub xi: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("corruption sigma must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid(alloc::format!(
                "contamination rho must be in [0, 1), got {}",
                self.rho
            )));
        }
        if !self.xi.is_finite() {
            return Err(Error::invalid("outlier value xi must be finite"));
        }
        Ok(())
    }
}

/// Returns the corrupted measurement and the realized outlier mask.
///
/// The mask is for evaluation only; solvers never see it.
pub fn corrupt_measurement(y_clean: &Tensor, spec: &CorruptionSpec) -> Result<(Tensor, Vec<bool>)> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed);
    let mut mask = Vec::with_capacity(y_clean.len());
    let mut y = y_clean.clone();
    for v in y.as_mut_slice() {
        let outlier = rng.bernoulli(spec.rho);
        let noise = rng.gaussian();
        mask.push(outlier);
        *v = if outlier {
            spec.xi
        } else {
            *v + spec.sigma * noise
        };
    }
    Ok((y, mask))
}
