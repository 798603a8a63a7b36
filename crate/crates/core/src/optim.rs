//! Adam over any parameter set that can expose itself as flat blocks.

use crate::error::{Error, Result};

/// A parameter container viewed as an ordered list of contiguous blocks.
pub trait Parameters {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
}

impl Parameters for Vec<f64> {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
        AdamState {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &P, learning_rate: f64) -> Result<()> {
        let grads = grads.blocks();
        let mut params = params.blocks_mut();
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::Dimension("optimizer state does not match parameters".into()));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(&grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(&p);
        st.step(&mut p, &vec![0.0, 0.0], 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_lr_over_one_plus_eps() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(&p);
        let lr = 1e-3;
        st.step(&mut p, &vec![1.0], lr).unwrap();
        // m̂ = v̂ = 1 after bias correction.
        assert_eq!(p[0], -lr * (1.0 / (1.0 + 1e-8)));
    }

    #[test]
    fn constant_gradient_approaches_sign_step() {
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(&p);
        let lr = 0.01;
        let g = vec![3.0, -0.5];
        let mut prev = p.clone();
        for _ in 0..500 {
            prev.clone_from(&p);
            st.step(&mut p, &g, lr).unwrap();
        }
        assert!(((p[0] - prev[0]) + lr).abs() < 1e-6);
        assert!(((p[1] - prev[1]) - lr).abs() < 1e-6);
    }

    #[test]
    fn mismatched_state_is_an_error() {
        let mut st = AdamState::new(&vec![0.0; 3]);
        assert!(st.step(&mut vec![0.0; 2], &vec![0.0; 2], 1e-3).is_err());
    }
}
