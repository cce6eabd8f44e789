use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{param_group, ParamGroup};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to the gradient.
    pub weight_decay: f64,
}

/// Adam with the L2 term folded into the gradient and one learning rate per
/// [`ParamGroup`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub settings: AdamSettings,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    groups: Vec<ParamGroup>,
}

impl Adam {
    pub fn new(params: &ParamSet, settings: AdamSettings) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            settings,
            step: 0,
            m: zeros.clone(),
            v: zeros,
            groups: params.names().iter().map(|n| param_group(n)).collect(),
        }
    }

    /// Rebuild from saved moments.
    pub fn from_state(params: &ParamSet, settings: AdamSettings, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<Self> {
        let mut a = Self::new(params, settings);
        if m.len() != a.m.len() || v.len() != a.v.len() {
            return Err(Error::Checkpoint("optimizer state does not match the parameter list".into()));
        }
        for (i, (mi, vi)) in m.iter().zip(&v).enumerate() {
            if mi.shape() != a.m[i].shape() || vi.shape() != a.v[i].shape() {
                return Err(Error::Checkpoint(format!("optimizer state for `{}` has the wrong shape", params.names()[i])));
            }
        }
        a.step = step;
        a.m = m;
        a.v = v;
        Ok(a)
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &[Tensor], lr_backbone: f64, lr_rest: f64) -> Result<()> {
        if grads.len() != params.len() || params.len() != self.m.len() {
            return Err(Error::invalid("gradient list does not match the parameters"));
        }
        self.step += 1;
        let AdamSettings {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.settings;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let lr = match self.groups[i] {
                ParamGroup::Backbone => lr_backbone,
                ParamGroup::Rest => lr_rest,
            };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = g + weight_decay * *w;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
