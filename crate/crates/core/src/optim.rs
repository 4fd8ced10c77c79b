//! Adam with decoupled weight decay over flat parameter groups.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    /// `sizes` lists the length of every parameter group, in the order they
    /// will be passed to [`AdamW::step`].
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        AdamW {
            cfg,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `groups` yields `(params, grads)` pairs matching the sizes
    /// given at construction.
    pub fn step<'a, I>(&mut self, groups: I)
    where
        I: IntoIterator<Item = (&'a mut [f64], &'a [f64])>,
    {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (g_idx, (params, grads)) in groups.into_iter().enumerate() {
            let m = &mut self.m[g_idx];
            let v = &mut self.v[g_idx];
            debug_assert_eq!(params.len(), m.len());
            for i in 0..params.len() {
                let g = grads[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * params[i]);
            }
        }
    }
}
