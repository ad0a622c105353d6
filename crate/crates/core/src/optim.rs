//! Adam with decoupled weight decay and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// 1-based epochs after which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decay_epochs: vec![12],
            decay_factor: 0.1,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.decay_factor > 0.0) {
            return Err(Error::Config("eps and decay factor must be > 0, weight decay >= 0".into()));
        }
        Ok(())
    }

    /// Rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&e| epoch > e).count();
        self.lr * self.decay_factor.powi(drops as i32)
    }
}

/// Sums gradients over several backward passes before one update.
#[derive(Clone, Debug)]
pub struct GradAccumulator {
    sums: Vec<Option<Vec<f64>>>,
    count: usize,
}

impl GradAccumulator {
    pub fn new(n_params: usize) -> Self {
        GradAccumulator { sums: vec![None; n_params], count: 0 }
    }

    pub fn add(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            match &mut self.sums[id.0] {
                Some(acc) => acc.iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g.data().to_vec()),
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Averaged gradient for one parameter, if any pass touched it.
    pub fn mean(&self, id: ParamId) -> Option<Vec<f64>> {
        let n = self.count.max(1) as f64;
        self.sums[id.0].as_ref().map(|s| s.iter().map(|v| v / n).collect())
    }

    pub fn clear(&mut self) {
        self.sums.iter_mut().for_each(|s| *s = None);
        self.count = 0;
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let zeros = || store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
        Ok(Adam { cfg, step: 0, m: zeros(), v: zeros() })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at rate `lr`. Parameters without a gradient still decay.
    /// A zero rate leaves every parameter untouched.
    pub fn step(&mut self, store: &mut ParamStore, grad: impl Fn(ParamId) -> Option<Vec<f64>>, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let g = grad(id);
            if let Some(g) = &g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Contract(format!("non-finite gradient for {}", store.name(id))));
                }
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            if let Some(g) = &g {
                for ((mi, vi), gi) in m.iter_mut().zip(v.iter_mut()).zip(g) {
                    *mi = b1 * *mi + (1.0 - b1) * gi;
                    *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                }
            }
            if lr == 0.0 {
                continue;
            }
            let wd = self.cfg.weight_decay;
            let eps = self.cfg.eps;
            let has_grad = g.is_some();
            for ((p, mi), vi) in store.value_mut(id).data_mut().iter_mut().zip(m.iter()).zip(v.iter()) {
                let adam = if has_grad { (mi / c1) / ((vi / c2).sqrt() + eps) } else { 0.0 };
                *p -= lr * (adam + wd * *p);
            }
        }
        Ok(())
    }
}
