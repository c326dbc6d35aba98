//! Minimal deterministic neural-network kernels.
//!
//! Everything the U-Net and the autoencoders need: same-padding (transposed)
//! convolutions, batch normalization, leaky ReLU, inverted dropout, dense
//! layers, pooling/upsampling, softmax cross-entropy, MSE and Adam. Layers
//! are generic over `f32`/`f64`; training runs in f32, while gradient checks
//! instantiate f64.
//!
//! Activations use channels-last layout: `[batch, h, w, c]`, `[batch, len, c]`
//! or `[batch, c]`. All kernels are deterministic given the RNG handed in.

mod conv;
mod layers;

pub use conv::{Conv1d, Conv1dCache, Conv2d, Conv2dCache};
pub use layers::{
    concat_channels, dropout_backward, dropout_forward, leaky_relu_backward, leaky_relu_forward,
    maxpool1d_backward, maxpool1d_forward, maxpool2d_backward, maxpool2d_forward, mse_loss,
    softmax_ce, softmax_rows, split_channels, upsample1d_backward, upsample1d_forward,
    upsample2d_backward, upsample2d_forward, BatchNorm, BnCache, Dense,
};

use ndarray::{ArrayD, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

/// Element type the kernels run on.
pub trait Scalar:
    ndarray::LinalgScalar
    + Float
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + std::ops::AddAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn fl<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 -> scalar")
}

#[inline]
pub fn fl64<F: Scalar>(x: F) -> f64 {
    x.to_f64().expect("scalar -> f64")
}

/// Adam hyperparameters (Keras defaults except the learning rate, which the
/// experiments set explicitly).
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    moment1: ArrayD<F>,
    moment2: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let zeros = ArrayD::zeros(value.raw_dim());
        Param {
            grad: zeros.clone(),
            moment1: zeros.clone(),
            moment2: zeros,
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    /// One Adam update from the accumulated gradient; `step` is 1-based.
    pub fn adam_step(&mut self, opt: &AdamConfig, step: u64) {
        let b1: F = fl(opt.beta1);
        let b2: F = fl(opt.beta2);
        let one = F::one();
        let corr1: F = fl(1.0 - opt.beta1.powi(step as i32));
        let corr2: F = fl(1.0 - opt.beta2.powi(step as i32));
        let lr: F = fl(opt.lr);
        let eps: F = fl(opt.eps);
        ndarray::Zip::from(&mut self.value)
            .and(&mut self.moment1)
            .and(&mut self.moment2)
            .and(&self.grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / corr1;
                let vhat = *v / corr2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            });
    }
}

/// Glorot-uniform initialization: U(-sqrt(6/(fan_in+fan_out)), +...).
/// Elements are drawn in row-major order, so layouts reproduce exactly.
pub fn glorot_uniform<F: Scalar, R: Rng>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> ArrayD<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut arr = ArrayD::zeros(ndarray::IxDyn(shape));
    for v in arr.iter_mut() {
        *v = fl(rng.random_range(-limit..limit));
    }
    arr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    #[test]
    fn adam_moves_against_gradient() {
        let mut p: Param<f64> = Param::new(ArrayD::zeros(ndarray::IxDyn(&[3])));
        p.grad.fill(1.0);
        let opt = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        p.adam_step(&opt, 1);
        // first step magnitude is ~lr regardless of gradient scale
        for &v in p.value.iter() {
            assert!((v + 0.1).abs() < 1e-6, "got {v}");
        }
    }

    #[test]
    fn glorot_is_deterministic_and_bounded() {
        let mut a = seeds::rng(9);
        let mut b = seeds::rng(9);
        let wa: ArrayD<f32> = glorot_uniform(&[3, 4], 3, 4, &mut a);
        let wb: ArrayD<f32> = glorot_uniform(&[3, 4], 3, 4, &mut b);
        assert_eq!(wa, wb);
        let limit = (6.0f32 / 7.0).sqrt();
        assert!(wa.iter().all(|v| v.abs() <= limit));
    }
}
