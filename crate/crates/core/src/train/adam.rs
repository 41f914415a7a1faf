use super::TrainConfig;
use crate::error::{Result, RtfnError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// First and second moment buffers, one pair per trainable parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let sizes: Vec<usize> = store
            .ids()
            .filter(|&id| store.is_trainable(id))
            .map(|id| store.value(id).len())
            .collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update at rate `lr`; clears the gradients.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, cfg: &TrainConfig) -> Result<()> {
        adam_step(store, self, lr, cfg)
    }
}

pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    let trainable: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    if trainable.len() != state.m.len() {
        return Err(RtfnError::Contract(format!(
            "optimizer state tracks {} parameters, store has {}",
            state.m.len(),
            trainable.len()
        )));
    }
    if let Some(&id) = trainable.iter().find(|&&id| store.grad(id).is_none()) {
        return Err(RtfnError::Contract(format!(
            "missing gradient for parameter {}",
            store.name(id)
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (slot, (name, value, grad)) in store.trainable_mut().enumerate() {
        let grad: &Tensor = grad.expect("checked above");
        if grad.len() != value.len() {
            return Err(RtfnError::Contract(format!("gradient size mismatch for {name}")));
        }
        let (m, v) = (&mut state.m[slot], &mut state.v[slot]);
        for (((p, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    store.zero_grad();
    Ok(())
}
