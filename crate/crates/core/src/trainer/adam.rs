use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::model::{GradientSet, ParamSet};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupMoments<F> {
    pub m_weight: Array2<F>,
    pub v_weight: Array2<F>,
    pub m_bias: Array1<F>,
    pub v_bias: Array1<F>,
    /// Number of updates this group has received.
    pub steps: u64,
}

impl<F: Real> GroupMoments<F> {
    pub fn is_zero(&self) -> bool {
        self.steps == 0
            && self
                .m_weight
                .iter()
                .chain(self.v_weight.iter())
                .chain(self.m_bias.iter())
                .chain(self.v_bias.iter())
                .all(|v| v.is_zero())
    }
}

/// First and second moment estimates, one entry per parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub groups: Vec<GroupMoments<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn zeros_like(params: &ParamSet<F>) -> Self {
        Self {
            groups: params
                .groups()
                .iter()
                .map(|g| GroupMoments {
                    m_weight: Array2::zeros(g.weight.dim()),
                    v_weight: Array2::zeros(g.weight.dim()),
                    m_bias: Array1::zeros(g.bias.len()),
                    v_bias: Array1::zeros(g.bias.len()),
                    steps: 0,
                })
                .collect(),
        }
    }

    fn congruent(&self, params: &ParamSet<F>) -> bool {
        self.groups.len() == params.groups().len()
            && self.groups.iter().zip(params.groups()).all(|(s, g)| {
                s.m_weight.dim() == g.weight.dim() && s.m_bias.len() == g.bias.len()
            })
    }
}

/// One Adam update of every trainable group. Frozen groups and their moments
/// are left untouched.
pub fn adam_step<F: Real>(
    params: &mut ParamSet<F>,
    grads: &GradientSet<F>,
    state: &mut AdamState<F>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if !state.congruent(params) {
        return Err(TrainError::ShapeMismatch(
            "optimizer state does not match parameters".into(),
        ));
    }
    if grads.groups.len() != params.groups().len()
        || grads.groups.iter().zip(params.groups()).any(|(g, p)| {
            g.weight.dim() != p.weight.dim() || g.bias.len() != p.bias.len()
        })
    {
        return Err(TrainError::ShapeMismatch(
            "gradients do not match parameters".into(),
        ));
    }
    let b1 = F::from_f64_lossy(cfg.beta1);
    let b2 = F::from_f64_lossy(cfg.beta2);
    let one_minus_b1 = F::from_f64_lossy(1.0 - cfg.beta1);
    let one_minus_b2 = F::from_f64_lossy(1.0 - cfg.beta2);
    let eps = F::from_f64_lossy(cfg.eps);
    for ((p, g), s) in params
        .groups_mut()
        .iter_mut()
        .zip(&grads.groups)
        .zip(&mut state.groups)
    {
        if !p.trainable {
            continue;
        }
        s.steps += 1;
        let t = s.steps as i32;
        let c1 = F::from_f64_lossy(1.0 / (1.0 - cfg.beta1.powi(t)));
        let c2 = F::from_f64_lossy(1.0 / (1.0 - cfg.beta2.powi(t)));
        let lr = F::from_f64_lossy(lr);
        let update = |theta: &mut F, m: &mut F, v: &mut F, grad: &F| {
            *m = b1 * *m + one_minus_b1 * *grad;
            *v = b2 * *v + one_minus_b2 * *grad * *grad;
            let m_hat = *m * c1;
            let v_hat = *v * c2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        };
        Zip::from(&mut p.weight)
            .and(&mut s.m_weight)
            .and(&mut s.v_weight)
            .and(&g.weight)
            .for_each(|a, b, c, d| update(a, b, c, d));
        Zip::from(&mut p.bias)
            .and(&mut s.m_bias)
            .and(&mut s.v_bias)
            .and(&g.bias)
            .for_each(|a, b, c, d| update(a, b, c, d));
    }
    Ok(())
}
