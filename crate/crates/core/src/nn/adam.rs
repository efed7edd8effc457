use super::model::{Gradients, NetworkModel};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments plus an exponentially decaying learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub total_steps: u64,
    pub lr_initial: f64,
    pub lr_final: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    /// Fresh state decaying from 1e-3 to 1e-6 over `total_steps`.
    pub fn new(param_count: usize, total_steps: u64) -> Self {
        Self::with_schedule(param_count, total_steps, 1e-3, 1e-6)
    }

    pub fn with_schedule(param_count: usize, total_steps: u64, lr_initial: f64, lr_final: f64) -> Self {
        Self {
            step: 0,
            total_steps,
            lr_initial,
            lr_final,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    /// `lr0 * (lr1 / lr0)^(t / S)`, clamped to the end of the schedule.
    pub fn learning_rate(&self, t: u64) -> f64 {
        if self.total_steps == 0 {
            return self.lr_initial;
        }
        let frac = t.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr_initial * (self.lr_final / self.lr_initial).powf(frac)
    }

    pub fn current_learning_rate(&self) -> f64 {
        self.learning_rate(self.step)
    }
}

/// One bias-corrected Adam update of every parameter of `model`.
pub fn adam_step(model: &mut NetworkModel, opt: &mut OptimizerState, grads: &Gradients) {
    let lr = opt.current_learning_rate();
    let t = (opt.step + 1) as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let mut offset = 0;
    for (param, grad) in model.tensors_mut().zip(grads.tensors()) {
        assert_eq!(param.len(), grad.len(), "gradient layout");
        let m = &mut opt.first_moment[offset..offset + param.len()];
        let v = &mut opt.second_moment[offset..offset + param.len()];
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        offset += param.len();
    }
    assert_eq!(offset, opt.first_moment.len(), "optimizer state length");
    opt.step += 1;
}
