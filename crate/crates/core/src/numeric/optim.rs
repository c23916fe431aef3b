use serde::{Deserialize, Serialize};

use super::Parameter;
use crate::error::{Error, Result};

/// Momentum SGD hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One momentum-SGD update over `params`, then clears their gradients.
///
/// With `gamma = base_lr * lr_multiplier`:
/// `buffer <- momentum * buffer - gamma * (grad + weight_decay * value)`,
/// `value <- value + buffer`. Weight decay only touches parameters flagged
/// with `decay`. Parameters with a zero multiplier are skipped entirely, so
/// their values stay bit-identical.
pub fn sgd_step<'a>(
    params: impl IntoIterator<Item = &'a mut Parameter>,
    config: &SgdConfig,
) -> Result<()> {
    if !(config.base_lr >= 0.0 && config.base_lr.is_finite()) {
        return Err(Error::config("base_lr", format!("{} must be >= 0", config.base_lr)));
    }
    if !(0.0..1.0).contains(&config.momentum) {
        return Err(Error::config("momentum", format!("{} outside [0, 1)", config.momentum)));
    }
    if !(config.weight_decay >= 0.0) {
        return Err(Error::config(
            "weight_decay",
            format!("{} must be >= 0", config.weight_decay),
        ));
    }
    let mut params: Vec<&mut Parameter> = params.into_iter().collect();
    for p in &params {
        p.grad().ensure_finite(&format!("gradient of {}", p.name()))?;
    }
    for p in params.iter_mut() {
        let gamma = config.base_lr * p.lr_multiplier;
        if gamma == 0.0 {
            p.zero_grad();
            continue;
        }
        let decay = if p.decay { config.weight_decay } else { 0.0 };
        let name = p.name().to_string();
        let mu = config.momentum;
        let (value, grad, buffer) = p.split_for_update();
        for ((v, g), b) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut().iter_mut())
            .zip(buffer.data_mut().iter_mut())
        {
            *b = mu * *b - gamma * (*g + decay * *v);
            *v += *b;
            *g = 0.0;
        }
        value.ensure_finite(&name)?;
    }
    Ok(())
}
