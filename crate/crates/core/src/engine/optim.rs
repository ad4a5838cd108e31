//! AdamW: Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::{EngineError, Gradients, Matrix, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: first and second moment estimates per parameter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let first = store.zero_grads().iter().map(|(_, g)| g.clone()).collect::<Vec<_>>();
        Self {
            config,
            second: first.clone(),
            first,
        }
    }

    /// Applies one update to every non-frozen parameter and bumps
    /// `store.step`:
    ///
    /// ```text
    /// m ← β1·m + (1−β1)·g        v ← β2·v + (1−β2)·g²
    /// p ← p − lr·m̂/(√v̂ + ε) − lr·wd·p
    /// ```
    ///
    /// The store is left untouched when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), EngineError> {
        for (id, g) in grads.iter() {
            if !store.get(id).frozen && !g.is_finite() {
                return Err(EngineError::NonFiniteGradient(store.get(id).name.clone()));
            }
        }
        let c = self.config;
        let t = store.step + 1;
        let bc1 = 1.0 - c.beta1.powi(t as i32);
        let bc2 = 1.0 - c.beta2.powi(t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let param = store.get_mut(id);
            if param.frozen {
                continue;
            }
            let g = grads.get(id).as_slice();
            let m = self.first[id.index()].as_mut_slice();
            let v = self.second[id.index()].as_mut_slice();
            for (((p, gi), mi), vi) in param.value.as_mut_slice().iter_mut().zip(g).zip(m).zip(v) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p = *p - c.learning_rate * m_hat / (v_hat.sqrt() + c.eps) - c.learning_rate * c.weight_decay * *p;
            }
        }
        store.step = t;
        Ok(())
    }
}
