//! Layers and differentiable kernels used by the network.

mod activation;
mod channel;
mod conv;
mod dropblock;
mod gemm;
mod linear;
mod loss;
mod norm;
mod param;
mod pool;

use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rayon::prelude::*;

pub use activation::Activation;
pub use channel::{channel_shuffle, concat_channels, shuffle_index, split_half, ChannelShuffleSpec};
pub use conv::{conv2d, conv_out_size, Conv2dLayer, ConvSpec};
pub use dropblock::{dropblock_gamma, DropBlockLayer};
pub use linear::{linear, LinearLayer};
pub use loss::{softmax, softmax_cross_entropy};
pub use norm::{BatchNormLayer, BN_EPS, BN_MOMENTUM};
pub use param::{count_parameters, join, parameters, zero_grads, Buffer, Module, Param, Slot};
pub use pool::{adaptive_avgpool_1x1, avgpool2d, maxpool2d};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

static INTRA_OP_PARALLEL: AtomicBool = AtomicBool::new(false);

/// Lets kernels split work across the rayon pool by batch image. Outputs
/// are bitwise identical either way; off by default.
pub fn set_intra_op_parallel(enabled: bool) {
    INTRA_OP_PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn intra_op_parallel() -> bool {
    INTRA_OP_PARALLEL.load(Ordering::Relaxed)
}

pub(crate) fn for_each_image<T: Scalar>(
    out: &mut [T],
    per_image: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    if intra_op_parallel() && out.len() > per_image {
        out.par_chunks_mut(per_image)
            .enumerate()
            .for_each(|(n, chunk)| f(n, chunk));
    } else {
        for (n, chunk) in out.chunks_mut(per_image).enumerate() {
            f(n, chunk);
        }
    }
}

/// Uniform in `±sqrt(6 / fan_in)`.
pub(crate) fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}
