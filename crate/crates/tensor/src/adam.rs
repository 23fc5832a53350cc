//! Bias-corrected Adam with support for frozen parameter groups.

use crate::error::{Result, TensorError};
use crate::param::Parameter;
use crate::real::Real;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(lr: f64) -> Result<Self> {
        let cfg = AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || !(0.0 < self.beta1 && self.beta1 < 1.0)
            || !(0.0 < self.beta2 && self.beta2 < 1.0)
            || !(self.eps > 0.0)
        {
            return Err(TensorError::Config(format!(
                "invalid Adam config: lr={} beta1={} beta2={} eps={}",
                self.learning_rate, self.beta1, self.beta2, self.eps
            )));
        }
        Ok(())
    }
}

/// One Adam update on a single parameter.
///
/// Frozen parameters are left bit-identical no matter what gradient is (or
/// isn't) supplied. A missing gradient on a trainable parameter is a contract
/// violation: it means the caller wired the graph and the parameter list
/// inconsistently.
pub fn adam_step<T: Real>(
    param: &mut Parameter<T>,
    grad: Option<&[T]>,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.frozen {
        return Ok(());
    }
    let g = grad.ok_or_else(|| {
        TensorError::Contract("adam_step: trainable parameter has no gradient".to_string())
    })?;
    if g.len() != param.value.len() {
        return Err(TensorError::dim(
            "adam_step",
            format!("gradient of {} values", param.value.len()),
            format!("{} values", g.len()),
        ));
    }
    param.t += 1;
    let t = param.t;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::ONE;
    // Bias corrections folded into one scalar multiplier per step.
    let corr1 = 1.0 - cfg.beta1.powi(t as i32);
    let corr2 = 1.0 - cfg.beta2.powi(t as i32);
    let step = T::from_f64(cfg.learning_rate / corr1);
    let corr2_inv_sqrt = T::from_f64(1.0 / corr2.sqrt());
    let eps = T::from_f64(cfg.eps);

    let value = param.value.data_mut();
    for i in 0..value.len() {
        let gi = g[i];
        param.m[i] = b1 * param.m[i] + (one - b1) * gi;
        param.v[i] = b2 * param.v[i] + (one - b2) * gi * gi;
        let denom = (param.v[i]).sqrt() * corr2_inv_sqrt + eps;
        value[i] -= step * param.m[i] / denom;
    }
    Ok(())
}
