use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= learning_rate * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias correction makes the first update ±lr regardless of gradient scale
        let mut p = vec![Matrix::from_vec(1, 3, vec![1.0, 1.0, 1.0])];
        let g = vec![Matrix::from_vec(1, 3, vec![1e-3, -50.0, 0.0])];
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            &[(1, 3)],
        );
        adam.step(&mut p, &g);
        assert!((p[0].data[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data[1] - 1.1).abs() < 1e-9);
        assert_eq!(p[0].data[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![Matrix::from_vec(1, 2, vec![3.0, -2.0])];
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..Default::default()
            },
            &[(1, 2)],
        );
        for _ in 0..2000 {
            let g = vec![p[0].map(|x| 2.0 * x)];
            adam.step(&mut p, &g);
        }
        assert!(p[0].data.iter().all(|x| x.abs() < 1e-2), "{:?}", p[0].data);
    }
}
