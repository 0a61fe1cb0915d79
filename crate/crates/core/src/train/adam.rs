use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Optimiser state: one first and second moment per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Learning rate used by the most recent step.
    pub lr: f64,
    /// Running sum and count of losses since the last reset.
    pub loss_sum: f64,
    pub loss_count: usize,
}

impl TrainState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
            lr: 0.0,
            loss_sum: 0.0,
            loss_count: 0,
        }
    }

    pub fn record_loss(&mut self, loss: f64) {
        self.loss_sum += loss;
        self.loss_count += 1;
    }

    /// Mean of the recorded losses, then clears them.
    pub fn take_mean_loss(&mut self) -> f64 {
        let mean = self.loss_sum / self.loss_count.max(1) as f64;
        self.loss_sum = 0.0;
        self.loss_count = 0;
        mean
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut TrainState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Invalid(format!(
            "{} parameters, {} gradients, {} moment tensors",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (id, g) in store.ids().zip(grads) {
        let g = g
            .as_ref()
            .ok_or_else(|| Error::MissingGradient(store.name(id).to_string()))?;
        if g.shape() != store.get(id).shape() {
            return Err(Error::mismatch("adam_step", store.get(id).shape(), g.shape()));
        }
    }
    state.step += 1;
    state.lr = lr;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((param, g), (m, v)) in store
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let g = g.as_ref().expect("checked above");
        let iter = param
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((p, &g), (m, v)) in iter {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::new(&[1], vec![v]).unwrap());
        store
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(1.0);
        let mut state = TrainState::new(&store);
        let g = vec![Some(Tensor::new(&[1], vec![1.0]).unwrap())];
        adam_step(&mut store, &g, &mut state, 0.1, &AdamConfig::default()).unwrap();
        let theta = store.get(store.find("theta").unwrap()).data()[0];
        assert!((theta - 0.9).abs() < 1e-6);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut store = scalar_store(0.3);
        let mut state = TrainState::new(&store);
        let g = vec![Some(Tensor::zeros(&[1]))];
        for _ in 0..3 {
            adam_step(&mut store, &g, &mut state, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(store.get(store.find("theta").unwrap()).data()[0], 0.3);
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let mut store = scalar_store(0.3);
        let mut state = TrainState::new(&store);
        let err = adam_step(&mut store, &[None], &mut state, 0.1, &AdamConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("theta"), "{err}");
    }
}
