//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for a fixed list of parameter buffers.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        Adam {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. A missing gradient counts as zero.
    ///
    /// `θ ← θ − lr·(wd·θ + m̂ / (√v̂ + ε))`
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} buffers, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
            weight_decay: wd,
        } = self.cfg;
        let c1 = 1.0 - b1.powf(self.step as f64);
        let c2 = 1.0 - b2.powf(self.step as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if p.len() != m.len() || grads[i].is_some_and(|g| g.len() != m.len()) {
                return Err(Error::Shape(format!("buffer {i} changed size")));
            }
            for j in 0..m.len() {
                let g = grads[i].map_or(0.0, |g| g[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let update = m[j] / c1 / ((v[j] / c2).sqrt() + eps);
                p[j] -= lr * (wd * p[j] + update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook scalar Adam on f(x) = (x − 3)².
    fn reference(x0: f64, steps: usize, lr: f64, wd: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * wd * x + lr * mh / (vh.sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn matches_scalar_reference() {
        for wd in [0.0, 1e-3] {
            let want = reference(-1.0, 100, 0.05, wd);
            let mut opt = Adam::new(
                AdamConfig {
                    learning_rate: 0.05,
                    weight_decay: wd,
                    ..AdamConfig::default()
                },
                &[1],
            );
            let mut x = [-1.0];
            for w in want {
                let g = [2.0 * (x[0] - 3.0)];
                opt.step(&mut [&mut x], &[Some(&g)]).unwrap();
                assert!((x[0] - w).abs() <= 1e-12, "{} vs {w}", x[0]);
            }
            assert_eq!(opt.steps(), 100);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_bitwise() {
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.0,
                weight_decay: 0.1,
                ..AdamConfig::default()
            },
            &[3],
        );
        let before = [0.1, -2.5, 1e-300];
        let mut p = before;
        opt.step(&mut [&mut p], &[Some(&[1.0, -4.0, 9.0])]).unwrap();
        assert_eq!(p.map(f64::to_bits), before.map(f64::to_bits));
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let mut opt = Adam::new(AdamConfig::default(), &[2]);
        let mut p = [0.0; 3];
        assert!(opt.step(&mut [&mut p], &[None]).is_err());
    }
}
