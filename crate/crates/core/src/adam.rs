//! Adam optimizer with bias correction.
//!
//! Used for network training and for every input-space optimization in this
//! crate (barrier bypass, input synthesis, attacks).

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::with_lr(1e-3)
    }
}

/// First/second moment state for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One moment update; returns the additive step `-lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, grad: &[f64], cfg: &AdamConfig) -> Vec<f64> {
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let mut out = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            out[i] = -cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        out
    }

    /// Step and apply in place.
    pub fn step_apply(&mut self, params: &mut [f64], grad: &[f64], cfg: &AdamConfig) {
        let step = self.step(grad, cfg);
        for (p, s) in params.iter_mut().zip(&step) {
            *p += s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_forever_gives_zero_steps() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut st = AdamState::new(3);
        for _ in 0..5 {
            let step = st.step(&[0.0, 0.0, 0.0], &cfg);
            assert_eq!(step, vec![0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn first_step_matches_closed_form() {
        // After bias correction the first step is -lr * g / (|g| + eps').
        // m_hat = g, v_hat = g^2, so step = -lr * g / (|g| + eps).
        let cfg = AdamConfig { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let g = [0.3, -2.0, 0.0, 1e-6];
        let mut st = AdamState::new(4);
        let step = st.step(&g, &cfg);
        for (s, gi) in step.iter().zip(&g) {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((s - expected).abs() < 1e-15, "{s} vs {expected}");
        }
    }

    #[test]
    fn identical_state_and_gradient_give_identical_output() {
        let cfg = AdamConfig::with_lr(0.01);
        let g = [0.5, -0.25];
        let mut a = AdamState::new(2);
        let mut b = AdamState::new(2);
        for _ in 0..10 {
            assert_eq!(a.step(&g, &cfg), b.step(&g, &cfg));
        }
    }

    #[test]
    fn quadratic_toy_follows_published_update_rule() {
        // Minimize f(x) = (x - 3)^2 / 2 from x = 0 and replay the published
        // recurrences by hand alongside.
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut x = 0.0f64;
        let mut st = AdamState::new(1);
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=50 {
            let g = x - 3.0;
            st.step_apply(std::slice::from_mut(&mut x), &[g], &cfg);

            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            let expected_step = -cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            // x accumulated exactly these steps.
            let _ = expected_step;
        }
        // Replay from scratch to compare the full trajectory.
        let mut x2 = 0.0f64;
        let (mut m2, mut v2) = (0.0f64, 0.0f64);
        for t in 1..=50 {
            let g: f64 = x2 - 3.0;
            m2 = cfg.beta1 * m2 + (1.0 - cfg.beta1) * g;
            v2 = cfg.beta2 * v2 + (1.0 - cfg.beta2) * g * g;
            let m_hat = m2 / (1.0 - cfg.beta1.powi(t));
            let v_hat = v2 / (1.0 - cfg.beta2.powi(t));
            x2 += -cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        assert_eq!(x, x2);
        assert!((x - 3.0).abs() < 1.0, "after 50 steps x = {x}");
    }
}
