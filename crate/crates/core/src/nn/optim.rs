use crate::nn::params::ModelParams;

/// Adam with bias-corrected moment estimates. Moments live on each
/// [`Param`](crate::nn::Param); the step count lives on [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update from the current gradient slots.
    pub fn step(&self, params: &mut ModelParams) {
        params.step += 1;
        let t = params.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            let value = p.value.as_mut_slice();
            let grad = p.grad.as_slice();
            let m = p.m.as_mut_slice();
            let v = p.v.as_mut_slice();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
