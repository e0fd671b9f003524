use super::ParamStore;
use crate::error::{Error, Result};

/// Moment buffers and step counter of an [`Adam`] optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, state: AdamState::default() }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// Applies one update to every parameter and clears their gradients.
    ///
    /// Every parameter must carry a gradient; moment buffers are allocated
    /// on the first call and must keep matching the parameter shapes.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.state.step_count == 0 && self.state.first_moment.is_empty() {
            for (_, t) in params.iter() {
                self.state.first_moment.push(vec![0.0; t.numel()]);
                self.state.second_moment.push(vec![0.0; t.numel()]);
            }
        }
        if self.state.first_moment.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, store has {}",
                self.state.first_moment.len(),
                params.len()
            )));
        }
        for id in params.ids() {
            let t = params.get(id);
            if t.grad().is_none() {
                return Err(Error::State(format!("parameter '{}' has no gradient", params.name(id))));
            }
            if self.state.first_moment[id.index()].len() != t.numel() {
                return Err(Error::State(format!("moment buffer shape mismatch for '{}'", params.name(id))));
            }
        }

        self.state.step_count += 1;
        let t = self.state.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for id in params.ids() {
            let tensor = params.get_mut(id);
            let grad = tensor.grad().expect("checked above").to_vec();
            let m = &mut self.state.first_moment[id.index()];
            let v = &mut self.state.second_moment[id.index()];
            for (((p, g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w));
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = scalar_store(0.75);
        let id = store.ids().next().unwrap();
        let mut adam = Adam::new(1e-3);
        store.get_mut(id).accumulate_grad(&[0.0]).unwrap();
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(id).data()[0], 0.75);
        assert_eq!(adam.state().step_count, 1);
        assert!(store.get(id).grad().is_none());
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+eps).
        let mut store = scalar_store(0.0);
        let id = store.ids().next().unwrap();
        let mut adam = Adam::new(1e-4);
        store.get_mut(id).accumulate_grad(&[1.0]).unwrap();
        adam.step(&mut store).unwrap();
        let expected = -1e-4 * 1.0 / (1.0 + 1e-8);
        assert!((store.get(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = scalar_store(1.0);
        let id = store.ids().next().unwrap();
        let mut adam = Adam::new(0.1);
        for _ in 0..200 {
            let w = store.get(id).data()[0];
            store.get_mut(id).accumulate_grad(&[2.0 * w]).unwrap();
            adam.step(&mut store).unwrap();
        }
        assert!(store.get(id).data()[0].abs() < 0.05);
        assert_eq!(adam.state().step_count, 200);
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut store = scalar_store(1.0);
        let mut adam = Adam::new(0.1);
        assert!(matches!(adam.step(&mut store), Err(Error::State(_))));
    }
}
