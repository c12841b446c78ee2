use super::params::Params;


#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators, one flat buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<P: Params<f64>>(config: AdamConfig, params: &P) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, _, v| m.push(vec![0.0; v.len()]));
        let v = m.clone();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    /// Bias-corrected Adam update of `params` from `grads`.
    pub fn update<P: Params<f64>>(&mut self, params: &mut P, grads: &P) {
        let mut grad_tensors: Vec<Vec<f64>> = Vec::new();
        grads.visit("", &mut |_, _, g| grad_tensors.push(g.to_vec()));
        assert_eq!(grad_tensors.len(), self.m.len(), "optimizer state mismatch");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, _, theta| {
            let (m, v, g) = (&mut ms[idx], &mut vs[idx], &grad_tensors[idx]);
            for i in 0..theta.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

/// Convenience wrapper matching the optimizer's functional form.
pub fn adam_step<P: Params<f64>>(params: &mut P, grads: &P, state: &mut Adam) {
    state.update(params, grads);
}
