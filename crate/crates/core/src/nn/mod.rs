//! Numerical kernels with hand-written reverse-mode gradients.
//!
//! Every layer works on `channels × time` matrices (row-major, one row per
//! channel). Forward functions are generic over [`Real`] so the same code path
//! serves double-precision training and single-precision inference; backward
//! functions accumulate into a gradient structure of the same shape as the
//! parameters, so gradients of independent sequences merge by summation.

mod act;
mod adam;
mod conv;
mod dense;
mod fastmath;
mod gradcheck;
mod lstm;
mod norm;
mod params;
mod pool;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use act::{prelu, prelu_backward, relu, relu_backward, sigmoid, PRelu};
pub use adam::{adam_step, Adam, AdamConfig};
pub use conv::{
    depthwise_conv1d, depthwise_conv1d_backward, pointwise_conv, ConvHistory, DepthwiseConv,
    Padding,
};
pub use dense::{dense, dense_backward, Dense};
pub use gradcheck::{grad_check, GradReport};
pub use lstm::{lstm_sequence, Lstm, LstmCache, LstmState};
pub use norm::{channel_norm, channel_norm_backward, ChannelNorm, NormCache, NormMode, NormStream};
pub use params::{copy_params, count_params, fill_params, param_vector, set_param_vector, Params};
pub(crate) use params::{join, visit_seq, visit_seq_mut};
pub use pool::{avg_pool_time, avg_pool_time_backward, PoolMode};

/// Floating point scalar usable by every kernel in this crate.
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    /// Logistic function applied in place.
    fn sigmoid_slice(v: &mut [Self]) {
        v.iter_mut().for_each(|x| *x = act::sigmoid(*x));
    }

    fn tanh_slice(v: &mut [Self]) {
        v.iter_mut().for_each(|x| *x = x.tanh());
    }
}

/// Single precision is the inference type and uses vectorizable
/// approximations of the activations.
impl Real for f32 {
    fn sigmoid_slice(v: &mut [Self]) {
        fastmath::sigmoid_slice_f32(v);
    }

    fn tanh_slice(v: &mut [Self]) {
        fastmath::tanh_slice_f32(v);
    }
}

impl Real for f64 {}
