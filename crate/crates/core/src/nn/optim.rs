use serde::{Deserialize, Serialize};

use super::param::Param;

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    /// First and second moments, in parameter visitation order.
    pub moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Adam { lr, beta1, beta2, eps: 1e-8, step: 0, moments: Vec::new() }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one parameter; `slot` is its position in visitation order.
    pub fn update(&mut self, slot: usize, p: &mut Param) {
        if self.moments.len() <= slot {
            self.moments.resize_with(slot + 1, Default::default);
        }
        let (m, v) = &mut self.moments[slot];
        if m.len() != p.len() {
            *m = vec![0.0; p.len()];
            *v = vec![0.0; p.len()];
        }
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = self.lr / bc1;
        for i in 0..p.len() {
            let g = p.grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let denom = (v[i] / bc2).sqrt() + self.eps;
            p.value[i] -= step_size * m[i] / denom;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::zeros(vec![2]);
        p.grad = vec![3.0, -0.5];
        let mut adam = Adam::new(0.1, 0.9, 0.999);
        adam.begin_step();
        adam.update(0, &mut p);
        assert!((p.value[0] + 0.1).abs() < 1e-6);
        assert!((p.value[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Param::zeros(vec![1]);
        p.value[0] = 5.0;
        let mut adam = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            p.grad[0] = 2.0 * (p.value[0] - 1.0);
            adam.begin_step();
            adam.update(0, &mut p);
        }
        assert!((p.value[0] - 1.0).abs() < 1e-2);
    }
}
