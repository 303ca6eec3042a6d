use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Learning-rate schedule: `base_lr * decay_rate^(epoch / decay_every)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            base_lr: 1e-3,
            decay_rate: 0.9,
            decay_every: 2000,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!(
                "decay_rate must lie in (0, 1], got {}",
                self.decay_rate
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay_every must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let periods = (epoch / self.decay_every) as i32;
        self.base_lr * self.decay_rate.powi(periods)
    }
}

/// Adam moments for one set of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Ok(AdamState {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        })
    }

    /// One Adam update. Rejects the step, leaving params and moments
    /// untouched, when a gradient entry is not finite.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G, epoch: usize) -> Result<()>
    where
        P: Parameters + ?Sized,
        G: Parameters + ?Sized,
    {
        let grads = grads.tensors();
        let mut tensors = params.tensors_mut();
        if grads.len() != tensors.len() || tensors.len() != self.first_moment.len() {
            return Err(Error::Shape {
                context: "adam tensor count",
                expected: self.first_moment.len(),
                actual: grads.len().min(tensors.len()),
            });
        }
        for ((g, p), m) in grads.iter().zip(&tensors).zip(&self.first_moment) {
            if g.len() != p.len() || p.len() != m.len() {
                return Err(Error::Shape {
                    context: "adam tensor",
                    expected: m.len(),
                    actual: g.len(),
                });
            }
        }
        for (k, g) in grads.iter().enumerate() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient tensor {k} entry {i} is {}; update rejected",
                    g[i]
                )));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = self.config.learning_rate(epoch);
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, g), m), v) in tensors
            .iter_mut()
            .zip(&grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
