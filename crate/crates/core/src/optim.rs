//! Adam with one learning rate per parameter group and exponential decay.

use crate::error::{Error, Result};
use crate::nets::{Model, ModelGrad, ParamGroupId};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.99;
pub const EPS: f64 = 1e-8;

/// `base * 0.1^(iter / total)`.
pub fn lr_schedule(base_lr: f64, iter: u64, total_iters: u64) -> Result<f64> {
    if total_iters == 0 {
        return Err(Error::Config("learning-rate schedule needs total_iters > 0".into()));
    }
    Ok(base_lr * 0.1f64.powf(iter as f64 / total_iters as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub id: ParamGroupId,
    pub base_lr: f64,
    pub step_count: u64,
    /// Moments for each tensor of this group, in model tensor order.
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub groups: Vec<ParamGroup>,
}

impl Adam {
    /// Zero moments sized for `model`; `lrs` is indexed like [`ParamGroupId::ALL`].
    pub fn new(model: &mut Model, lrs: [f64; 3]) -> Self {
        let mut groups: Vec<ParamGroup> = ParamGroupId::ALL
            .iter()
            .zip(lrs)
            .map(|(&id, base_lr)| ParamGroup {
                id,
                base_lr,
                step_count: 0,
                m: Vec::new(),
                v: Vec::new(),
            })
            .collect();
        for (id, t) in model.tensors_mut() {
            let g = &mut groups[id as usize];
            g.m.push(vec![0.0; t.len()]);
            g.v.push(vec![0.0; t.len()]);
        }
        Self { groups }
    }

    pub fn group(&self, id: ParamGroupId) -> &ParamGroup {
        &self.groups[id as usize]
    }

    /// Fresh zero moments and step count for one group, sized for `model`.
    pub fn reset_group(&mut self, id: ParamGroupId, model: &mut Model) {
        let g = &mut self.groups[id as usize];
        g.m.clear();
        g.v.clear();
        g.step_count = 0;
        for (gid, t) in model.tensors_mut() {
            if gid == id {
                g.m.push(vec![0.0; t.len()]);
                g.v.push(vec![0.0; t.len()]);
            }
        }
    }

    /// One update of every group at schedule position `iter / total_iters`.
    /// Non-finite gradients abort the whole step before anything changes.
    pub fn step(&mut self, model: &mut Model, grad: &ModelGrad, iter: u64, total_iters: u64) -> Result<()> {
        let grads = grad.tensors();
        let mut ids = Vec::with_capacity(grads.len());
        for (id, p) in model.tensors_mut() {
            ids.push((id, p.len()));
        }
        if ids.len() != grads.len() || ids.iter().zip(&grads).any(|((_, n), g)| *n != g.len()) {
            return Err(Error::State("gradient layout does not match the model".into()));
        }
        for ((id, _), g) in ids.iter().zip(&grads) {
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numerical {
                    group: id.name().into(),
                    detail: format!("non-finite gradient {bad}"),
                });
            }
        }
        for g in &self.groups {
            let n = ids.iter().filter(|(id, _)| *id == g.id).count();
            if g.m.len() != n {
                return Err(Error::State(format!(
                    "optimizer state for {} has {} tensors, model has {n}",
                    g.id.name(),
                    g.m.len()
                )));
            }
        }

        let mut lr = [0.0; 3];
        let mut corr = [(0.0, 0.0); 3];
        for g in &mut self.groups {
            g.step_count += 1;
            let k = g.id as usize;
            lr[k] = lr_schedule(g.base_lr, iter, total_iters)?;
            corr[k] = (
                1.0 - BETA1.powf(g.step_count as f64),
                1.0 - BETA2.powf(g.step_count as f64),
            );
        }

        let mut slot = [0usize; 3];
        for ((id, params), g) in model.tensors_mut().into_iter().zip(&grads) {
            let k = id as usize;
            let group = &mut self.groups[k];
            let m = &mut group.m[slot[k]];
            let v = &mut group.v[slot[k]];
            slot[k] += 1;
            let (c1, c2) = corr[k];
            let step = lr[k];
            for i in 0..params.len() {
                let gi = g[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                params[i] -= step * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        model.grid.enforce_precision();
        Ok(())
    }
}
