//! Bias-corrected Adam.

use super::tensor::Tensor;

/// Optimizer state: first/second moment accumulators per parameter plus the
/// step counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state for parameters of the given shapes, with β1 = 0.9,
    /// β2 = 0.999, ε = 1e-8.
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// One bias-corrected Adam update, in place. Deterministic given inputs.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(p.shape(), g.shape(), "adam: shape mismatch");
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mv = state.beta1 * *mv + (1.0 - state.beta1) * gv;
            *vv = state.beta2 * *vv + (1.0 - state.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5])];
        let grads = vec![Tensor::zeros(&[3])];
        let mut state = AdamState::new(0.01, &params);
        let before = params[0].clone();
        adam_step(&mut params, &grads, &mut state);
        assert_eq!(params[0], before);
    }

    #[test]
    fn first_step_with_constant_grad_is_sign_scaled() {
        // At t = 1 the bias-corrected moments are g and g^2, so the update
        // is -lr * g / (|g| + eps) ~= -lr * sign(g).
        let lr = 0.05;
        let mut params = vec![Tensor::from_vec(&[2], vec![1.0, 1.0])];
        let grads = vec![Tensor::from_vec(&[2], vec![3.0, -0.2])];
        let mut state = AdamState::new(lr, &params);
        adam_step(&mut params, &grads, &mut state);
        assert!((params[0].data()[0] - (1.0 - lr)).abs() < 1e-6);
        assert!((params[0].data()[1] - (1.0 + lr)).abs() < 1e-6);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // Minimize |θ|^2 from θ = 1; gradient is 2θ.
        let mut params = vec![Tensor::from_vec(&[2], vec![1.0, -1.0])];
        let mut state = AdamState::new(1e-2, &params);
        for _ in 0..500 {
            let grads = vec![params[0].map(|v| 2.0 * v)];
            adam_step(&mut params, &grads, &mut state);
        }
        assert!(params[0].max_abs() < 1e-3, "final |θ| = {}", params[0].max_abs());
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut params = vec![Tensor::from_vec(&[2], vec![0.3, 0.7])];
            let mut state = AdamState::new(0.01, &params);
            for i in 0..10 {
                let grads = vec![params[0].map(|v| v * (i as f64 + 1.0))];
                adam_step(&mut params, &grads, &mut state);
            }
            params[0].clone()
        };
        assert_eq!(run(), run());
    }
}
