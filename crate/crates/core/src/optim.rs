//! Adam over the detector's parameter tensors.

use serde::{Deserialize, Serialize};

use crate::detector::DetectorParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: DetectorParams,
    v: DetectorParams,
}

impl Adam {
    pub fn new(params: &DetectorParams, lr: f64) -> Self {
        let mut zeros = params.clone();
        for t in zeros.tensors_mut() {
            t.fill(0.0);
        }
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut DetectorParams, grads: &DetectorParams) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectorConfig;

    #[test]
    fn first_step_moves_each_weight_by_lr_against_gradient_sign() {
        let cfg = DetectorConfig {
            input_dim: 2,
            hidden_size: 2,
            head_hidden: 2,
            ..Default::default()
        };
        let mut p = DetectorParams::init(&cfg, 0);
        let before = p.clone();
        let mut g = DetectorParams::zeros(&cfg);
        g.head_b2[0] = 3.0;
        g.head_b2[1] = -0.5;
        let mut adam = Adam::new(&p, 0.01);
        adam.step(&mut p, &g);
        assert!((p.head_b2[0] - (before.head_b2[0] - 0.01)).abs() < 1e-8);
        assert!((p.head_b2[1] - (before.head_b2[1] + 0.01)).abs() < 1e-8);
        assert_eq!(p.head_w1, before.head_w1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = DetectorConfig {
            input_dim: 1,
            hidden_size: 1,
            head_hidden: 1,
            bidirectional: false,
            ..Default::default()
        };
        let mut p = DetectorParams::zeros(&cfg);
        p.head_b1[0] = 5.0;
        let mut adam = Adam::new(&p, 0.1);
        for _ in 0..500 {
            let mut g = DetectorParams::zeros(&cfg);
            g.head_b1[0] = 2.0 * (p.head_b1[0] - 1.5);
            adam.step(&mut p, &g);
        }
        assert!((p.head_b1[0] - 1.5).abs() < 1e-2);
    }
}
