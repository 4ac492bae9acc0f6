//! Adam with a linear tri-stage learning-rate schedule.

/// Linear warmup to `peak`, constant hold, linear decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriStageSchedule {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub hold_frac: f64,
}

impl TriStageSchedule {
    fn bounds(&self) -> (usize, usize) {
        let warmup = (self.total_steps as f64 * self.warmup_frac).round() as usize;
        let hold = (self.total_steps as f64 * self.hold_frac).round() as usize;
        (warmup, (warmup + hold).min(self.total_steps))
    }

    /// Learning rate for the 0-based update `step`.
    pub fn lr(&self, step: usize) -> f64 {
        let (warmup_end, hold_end) = self.bounds();
        if step < warmup_end {
            self.peak * (step + 1) as f64 / warmup_end as f64
        } else if step < hold_end {
            self.peak
        } else if step < self.total_steps {
            let decay = (self.total_steps - hold_end) as f64;
            self.peak * (self.total_steps - step) as f64 / decay
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One bias-corrected update. `params` and `grads` are matching lists of
    /// tensors, in the same order on every call.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            assert_eq!(p.len(), g.len(), "tensor {k} shape mismatch");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
