//! Adam with decoupled weight decay.

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Per step, for every parameter θ with gradient g:
///
/// ```text
/// θ ← θ·(1 − lr·wd)
/// m ← β₁m + (1 − β₁)g,   v ← β₂v + (1 − β₂)g²
/// θ ← θ − lr·m̂ / (√v̂ + ε),   m̂ = m/(1 − β₁ᵗ), v̂ = v/(1 − β₂ᵗ)
/// ```
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(CoreError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(CoreError::Config("Adam betas must be in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(CoreError::Config(
                "weight decay must be >= 0 and eps > 0".into(),
            ));
        }
        Ok(())
    }
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(CoreError::invalid(
                "parameter and gradient buffers do not match",
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(CoreError::invalid(
                "parameter layout changed between Adam steps",
            ));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let decay = 1.0 - lr * weight_decay;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i] as f64;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                p[i] = (p[i] as f64 * decay - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_on_quadratic() {
        // f(θ) = ½·θ², g = θ; first Adam step moves by lr·sign(g) after decay.
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let mut theta = vec![2.0f32, -0.5];
        let grad = theta.clone();
        adam.step(&mut [&mut theta], &[&grad]).unwrap();
        let want =
            |t: f64| t * (1.0 - 0.01 * 1e-4) - 0.01 * t.signum() * (t.abs() / (t.abs() + 1e-8));
        assert!((theta[0] as f64 - want(2.0)).abs() <= 1e-6);
        assert!((theta[1] as f64 - want(-0.5)).abs() <= 1e-6);
    }

    #[test]
    fn second_step_uses_moments() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg).unwrap();
        let mut theta = vec![1.0f32];
        adam.step(&mut [&mut theta], &[&[1.0]]).unwrap();
        adam.step(&mut [&mut theta], &[&[3.0]]).unwrap();
        let m = 0.9 * 0.1 + 0.1 * 3.0;
        let v = 0.999 * 0.001 + 0.001 * 9.0;
        let mh = m / (1.0 - 0.81);
        let vh = v / (1.0 - 0.999f64.powi(2));
        let want = 1.0 - 0.01 - 0.01 * mh / (vh.sqrt() + 1e-8);
        assert!((theta[0] as f64 - want).abs() <= 1e-6);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let mut theta = vec![3.0f32];
        adam.step(&mut [&mut theta], &[&[0.0]]).unwrap();
        assert!((theta[0] as f64 - 3.0 * (1.0 - 1e-6)).abs() <= 1e-6);
    }

    #[test]
    fn rejects_bad_config_and_layout() {
        assert!(Adam::new(AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        })
        .is_err());
        assert!(Adam::new(AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        })
        .is_err());
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let mut p = vec![0.0f32; 2];
        assert!(adam.step(&mut [&mut p], &[&[1.0]]).is_err());
        adam.step(&mut [&mut p], &[&[1.0, 1.0]]).unwrap();
        let mut q = vec![0.0f32; 3];
        assert!(adam.step(&mut [&mut q], &[&[1.0, 1.0, 1.0]]).is_err());
    }
}
