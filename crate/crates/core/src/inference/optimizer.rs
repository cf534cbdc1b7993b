//! Adam with a constant-then-decaying learning rate.

/// Learning rate `lr0` for the first `hold` iterations, then
/// `lr0 · (1 + (t - hold)/tau)^(-power)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub lr0: f64,
    pub hold: usize,
    pub tau: f64,
    pub power: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { lr0: 0.05, hold: 300, tau: 100.0, power: 0.51 }
    }
}

impl StepSchedule {
    pub fn at(&self, t: usize) -> f64 {
        if t < self.hold {
            self.lr0
        } else {
            self.lr0 * (1.0 + (t - self.hold) as f64 / self.tau).powf(-self.power)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// Updates the moment estimates with `g` and moves `x` downhill.
    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }

    /// Diagonal preconditioner `1/(√v̂ + ε)` from the current second moments.
    pub fn preconditioner(&self) -> Vec<f64> {
        let c2 = 1.0 - self.beta2.powi(self.t.max(1));
        self.v.iter().map(|v| 1.0 / ((v / c2).sqrt() + self.eps)).collect()
    }
}
