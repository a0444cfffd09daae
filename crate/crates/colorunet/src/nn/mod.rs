//! Minimal layer-wise neural network engine on `ndarray` tensors.
//!
//! There is no autograd tape: each layer caches what its own backward pass
//! needs during a training-mode forward, and `backward` consumes that
//! cache. Layers are generic over the scalar type so the same code runs in
//! f32 for training and in f64 for finite-difference gradient checks.
//!
//! Activation layout is NCHW throughout.

mod adam;
pub mod batchnorm;
pub mod checkpoint;
mod conv;
mod loss;
mod pool;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::BatchNorm2d;
pub use conv::{conv2d_forward, Conv2d, ConvTranspose2d};
pub use loss::{softmax_channels, weighted_masked_cross_entropy};
pub use pool::MaxPool2;

use ndarray::{Array4, LinalgScalar};
use num_traits::Float;
use rand::Rng;

/// Scalar type the engine runs on. `LinalgScalar` routes matrix products
/// through the tuned f32/f64 kernels; the f64 bridge lets loss and
/// statistics accumulate in wide precision regardless of the tensor type.
pub trait Elem:
    LinalgScalar + Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Infallible cast from the wide accumulator type. Distinct names keep
    /// these from clashing with the `Option`-returning `num_traits` casts.
    fn from_wide(v: f64) -> Self;
    fn to_wide(self) -> f64;
}

impl Elem for f32 {
    fn from_wide(v: f64) -> Self {
        v as f32
    }
    fn to_wide(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    fn from_wide(v: f64) -> Self {
        v
    }
    fn to_wide(self) -> f64 {
        self
    }
}

/// A parameter tensor paired with its gradient accumulator, exposed to the
/// optimizer and the checkpoint writer under a stable name.
pub struct ParamRef<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: &'a mut [T],
    pub grad: &'a mut [T],
}

/// Non-trainable model state (batchnorm running statistics): checkpointed
/// but never touched by the optimizer.
pub struct StateRef<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: &'a mut [T],
}

/// Uniform init scaled by fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub(crate) fn fan_in_uniform<T: Elem>(rng: &mut impl Rng, fan_in: usize, out: &mut [T]) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for w in out {
        *w = T::from_wide(rng.random_range(-bound..bound));
    }
}

/// Rectifier with cached mask. Stateless in eval mode.
#[derive(Debug, Clone)]
pub struct Relu {
    mask: Option<ndarray::Array4<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward<T: Elem>(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        if train {
            self.mask = Some(x.mapv(|v| v > T::zero()));
        }
        x.mapv(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn backward<T: Elem>(&mut self, dy: &Array4<T>) -> crate::Result<Array4<T>> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| crate::Error::Shape("relu backward without cached forward".into()))?;
        if mask.dim() != dy.dim() {
            return Err(crate::Error::Shape(format!(
                "relu backward shape {:?} does not match forward {:?}",
                dy.dim(),
                mask.dim()
            )));
        }
        let mut dx = dy.clone();
        dx.zip_mut_with(&mask, |d, &m| {
            if !m {
                *d = T::zero();
            }
        });
        Ok(dx)
    }
}

impl Default for Relu {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Finite-difference oracle used by the layer tests. Central
    //! differences in f64 with a relative-error criterion.

    /// Relative error between a numeric and an analytic derivative.
    pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
        (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8)
    }

    /// Checks d(loss)/d(x[i]) for every i against `analytic`, where `loss`
    /// re-runs the full forward pass on a perturbed copy of `x`.
    pub fn check_grads(
        x: &[f64],
        analytic: &[f64],
        epsilon: f64,
        tol: f64,
        mut loss: impl FnMut(&[f64]) -> f64,
        what: &str,
    ) {
        assert_eq!(x.len(), analytic.len(), "{what}: gradient length");
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            probe[i] = x[i] + epsilon;
            let up = loss(&probe);
            probe[i] = x[i] - epsilon;
            let down = loss(&probe);
            probe[i] = x[i];
            let numeric = (up - down) / (2.0 * epsilon);
            let err = relative_error(numeric, analytic[i]);
            assert!(
                err < tol,
                "{what}[{i}]: numeric {numeric:.8e} vs analytic {:.8e} (rel err {err:.3e})",
                analytic[i]
            );
        }
    }
}
