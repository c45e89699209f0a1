use serde::{Deserialize, Serialize};

use super::ops::ParamSlot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update; `step` is 1-based.
///
/// All gradients are validated before any parameter is touched, so a
/// rejected step leaves every slot unchanged.
pub fn adam_step(params: &mut [&mut ParamSlot], cfg: &AdamConfig, step: u64) -> Result<()> {
    if step == 0 {
        return Err(Error::invalid("adam step counter is 1-based"));
    }
    if let Some(bad) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("gradient of parameter `{}`", bad.name),
        });
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for p in params.iter_mut() {
        let ParamSlot {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = &mut **p;
        let it = value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(adam_m.data_mut().iter_mut().zip(adam_v.data_mut().iter_mut()));
        for ((theta, &g), (m, v)) in it {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
