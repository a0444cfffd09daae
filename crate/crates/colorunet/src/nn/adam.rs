//! Adam with bias correction. Moment buffers live in the tensor scalar
//! type; the update arithmetic runs in f64.

use super::{Elem, ParamRef};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T: Elem> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Elem> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter. The first call fixes the
    /// parameter count and sizes; later calls must match. A non-finite
    /// gradient aborts before any parameter of that call is touched.
    pub fn step(&mut self, lr: f64, params: &mut [ParamRef<'_, T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, step got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.value.len() != m.len() {
                return Err(Error::Shape(format!(
                    "parameter {} changed size: {} vs {}",
                    p.name,
                    p.value.len(),
                    m.len()
                )));
            }
            if let Some(bad) = p.grad.iter().find(|g| !g.to_wide().is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {bad} in {}",
                    p.name
                )));
            }
        }

        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (pi, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            for j in 0..p.value.len() {
                let g = p.grad[j].to_wide();
                let mj = b1 * m[j].to_wide() + (1.0 - b1) * g;
                let vj = b2 * v[j].to_wide() + (1.0 - b2) * g * g;
                m[j] = T::from_wide(mj);
                v[j] = T::from_wide(vj);
                let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + self.cfg.epsilon);
                p.value[j] = T::from_wide(p.value[j].to_wide() - update);
            }
        }
        Ok(())
    }

    /// Moment buffers and step counter, for checkpointing.
    pub fn snapshot(&self) -> (u64, &[Vec<T>], &[Vec<T>]) {
        (self.t, &self.m, &self.v)
    }

    /// Restores a snapshot taken by [`Adam::snapshot`].
    pub fn restore(&mut self, t: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<()> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Shape("optimizer moment buffers disagree".into()));
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
