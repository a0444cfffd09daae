//! Batch normalization over NCHW activations, normalizing each channel
//! across batch and space. Batch statistics use biased variance and f64
//! accumulation; running statistics follow
//! `running = momentum * running + (1 - momentum) * batch`.
//!
//! Evaluation mode needs running statistics, so an eval forward before the
//! first training forward is an error rather than a silent pass-through.

use ndarray::{Array1, Array4, Axis};

use super::{Elem, ParamRef, StateRef};
use crate::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Elem> {
    gamma: Array1<T>,
    beta: Array1<T>,
    dgamma: Array1<T>,
    dbeta: Array1<T>,
    running_mean: Array1<T>,
    running_var: Array1<T>,
    momentum: f64,
    eps: f64,
    initialized: bool,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    xhat: Array4<T>,
    inv_std: Vec<f64>,
}

impl<T: Elem> BatchNorm2d<T> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            dgamma: Array1::zeros(channels),
            dbeta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum,
            eps,
            initialized: false,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Result<Array4<T>> {
        let (n, c, h, w) = x.dim();
        if c != self.gamma.len() {
            return Err(Error::Shape(format!(
                "batchnorm over {} channels got input with {c}",
                self.gamma.len()
            )));
        }
        if train {
            let m = (n * h * w) as f64;
            if m < 2.0 {
                return Err(Error::Data(
                    "batchnorm needs at least two values per channel".into(),
                ));
            }
            let mut y = Array4::<T>::zeros(x.dim());
            let mut xhat = Array4::<T>::zeros(x.dim());
            let mut inv_std = vec![0.0f64; c];
            for ci in 0..c {
                let xc = x.index_axis(Axis(1), ci);
                let mean = xc.iter().map(|v| v.to_wide()).sum::<f64>() / m;
                let var = xc
                    .iter()
                    .map(|v| {
                        let d = v.to_wide() - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / m;
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[ci] = istd;
                let g = self.gamma[ci].to_wide();
                let b = self.beta[ci].to_wide();
                let mut xh = xhat.index_axis_mut(Axis(1), ci);
                let mut yc = y.index_axis_mut(Axis(1), ci);
                for ((xi, xhi), yi) in xc.iter().zip(xh.iter_mut()).zip(yc.iter_mut()) {
                    let norm = (xi.to_wide() - mean) * istd;
                    *xhi = T::from_wide(norm);
                    *yi = T::from_wide(g * norm + b);
                }
                let rm = self.running_mean[ci].to_wide();
                let rv = self.running_var[ci].to_wide();
                self.running_mean[ci] =
                    T::from_wide(self.momentum * rm + (1.0 - self.momentum) * mean);
                self.running_var[ci] =
                    T::from_wide(self.momentum * rv + (1.0 - self.momentum) * var);
            }
            self.initialized = true;
            self.cache = Some(Cache { xhat, inv_std });
            Ok(y)
        } else {
            if !self.initialized {
                return Err(Error::Numeric(
                    "batchnorm evaluated before any training batch established statistics".into(),
                ));
            }
            let mut y = Array4::<T>::zeros(x.dim());
            for ci in 0..c {
                let mean = self.running_mean[ci].to_wide();
                let istd = 1.0 / (self.running_var[ci].to_wide() + self.eps).sqrt();
                let g = self.gamma[ci].to_wide();
                let b = self.beta[ci].to_wide();
                let xc = x.index_axis(Axis(1), ci);
                let mut yc = y.index_axis_mut(Axis(1), ci);
                for (xi, yi) in xc.iter().zip(yc.iter_mut()) {
                    *yi = T::from_wide(g * (xi.to_wide() - mean) * istd + b);
                }
            }
            Ok(y)
        }
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let Cache { xhat, inv_std } = self
            .cache
            .take()
            .ok_or_else(|| Error::Shape("batchnorm backward without cached forward".into()))?;
        if dy.dim() != xhat.dim() {
            return Err(Error::Shape(format!(
                "batchnorm backward shape {:?} does not match forward {:?}",
                dy.dim(),
                xhat.dim()
            )));
        }
        let (n, c, h, w) = dy.dim();
        let m = (n * h * w) as f64;
        let mut dx = Array4::<T>::zeros(dy.dim());
        for ci in 0..c {
            let dyc = dy.index_axis(Axis(1), ci);
            let xhc = xhat.index_axis(Axis(1), ci);
            let sum_dy = dyc.iter().map(|v| v.to_wide()).sum::<f64>();
            let sum_dy_xhat = dyc
                .iter()
                .zip(xhc.iter())
                .map(|(d, x)| d.to_wide() * x.to_wide())
                .sum::<f64>();
            self.dgamma[ci] = T::from_wide(self.dgamma[ci].to_wide() + sum_dy_xhat);
            self.dbeta[ci] = T::from_wide(self.dbeta[ci].to_wide() + sum_dy);
            let scale = self.gamma[ci].to_wide() * inv_std[ci] / m;
            let mut dxc = dx.index_axis_mut(Axis(1), ci);
            for ((d, x), o) in dyc.iter().zip(xhc.iter()).zip(dxc.iter_mut()) {
                *o = T::from_wide(
                    scale * (m * d.to_wide() - sum_dy - x.to_wide() * sum_dy_xhat),
                );
            }
        }
        Ok(dx)
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: format!("{prefix}.gamma"),
            dims: vec![self.gamma.len()],
            value: self.gamma.as_slice_mut().unwrap(),
            grad: self.dgamma.as_slice_mut().unwrap(),
        });
        out.push(ParamRef {
            name: format!("{prefix}.beta"),
            dims: vec![self.beta.len()],
            value: self.beta.as_slice_mut().unwrap(),
            grad: self.dbeta.as_slice_mut().unwrap(),
        });
    }

    pub fn states_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<StateRef<'a, T>>) {
        out.push(StateRef {
            name: format!("{prefix}.running_mean"),
            dims: vec![self.running_mean.len()],
            value: self.running_mean.as_slice_mut().unwrap(),
        });
        out.push(StateRef {
            name: format!("{prefix}.running_var"),
            dims: vec![self.running_var.len()],
            value: self.running_var.as_slice_mut().unwrap(),
        });
    }

    pub fn zero_grad(&mut self) {
        self.dgamma.fill(T::zero());
        self.dbeta.fill(T::zero());
    }

    pub fn initialized(&self) -> bool {
        self.initialized
    }

    pub fn set_initialized(&mut self, v: bool) {
        self.initialized = v;
    }
}
