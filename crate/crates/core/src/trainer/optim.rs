//! AdamW with decoupled weight decay and a linear learning-rate ramp-down.

use crate::error::{Error, Result};
use crate::model::Parameters;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn check(&self) -> Result<()> {
        for (field, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config {
                    field: format!("train.{field}"),
                    message: format!("must lie in [0, 1), got {beta}"),
                });
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config {
                field: "train.eps".into(),
                message: "must be positive".into(),
            });
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config {
                field: "train.weight_decay".into(),
                message: "must be non-negative".into(),
            });
        }
        Ok(())
    }
}

/// First and second moments shaped like the parameters, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Parameters,
    pub v: Parameters,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// `base_lr * (1 - step / total_steps)`, floored at zero.
pub fn lr_schedule(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    (base_lr * (1.0 - step as f64 / total_steps as f64)).max(0.0)
}

/// One AdamW update. Fails without touching anything when shapes disagree
/// or a gradient is not finite.
pub fn adamw_step(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut OptimizerState,
    lr_t: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.tensors().len() != grads.tensors().len() {
        return Err(Error::Shape("parameter and gradient tensor counts differ".into()));
    }
    for ((name, p), ((_, g), ((_, m), (_, v)))) in params.tensors().iter().zip(
        grads
            .tensors()
            .iter()
            .zip(state.m.tensors().iter().zip(state.v.tensors().iter())),
    ) {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::Shape(format!(
                "`{name}`: parameter {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of `{name}` at flat index {bad} is {}",
                g.iter().nth(bad).copied().unwrap_or(f64::NAN)
            )));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, eps, wd) = (cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((_, mut p), (_, g)), ((_, mut m), (_, mut v))) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(ms.into_iter().zip(vs))
    {
        ndarray::Zip::from(&mut p)
            .and(&g)
            .and(&mut m)
            .and(&mut v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr_t * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
            });
    }
    Ok(())
}
