use super::{ModelConfig, Parameters, Scalar};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Parameters<T>,
    v: Parameters<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: &ModelConfig, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { lr, beta1, beta2, epsilon, step: 0, m: Parameters::zeros(cfg), v: Parameters::zeros(cfg) }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut Parameters<T>, grads: &Parameters<T>) {
        self.step += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let c1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.epsilon);
        let g_all = grads.tensors();
        let m_all = self.m.tensors_mut();
        let v_all = self.v.tensors_mut();
        for (((p, (_, _, g)), m), v) in params.tensors_mut().into_iter().zip(g_all).zip(m_all).zip(v_all) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
