//! Neural-network primitives: forward and backward kernels over [`Tensor`].
//!
//! All convolutions are cross-correlations (no kernel flip) with zero
//! padding. Backward kernels are exercised against central finite
//! differences in the test suites.

mod conv;
mod deform;
mod elementwise;
mod shuffle;

pub use conv::{conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, ConvGrads, ConvSpec};
pub use deform::{deform_conv2d, deform_conv2d_backward, DeformGrads};
pub use elementwise::{add, concat, concat_backward, relu, relu_backward};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};

use crate::tensor::Tensor;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::rng::SplitMix64;
    use crate::tensor::{Shape, Tensor};

    /// Uniform random tensor in [-1, 1).
    pub fn random_tensor(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = SplitMix64::stream(seed, 0);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }
}

/// Helper shared by the conv kernels: accumulate bias into a fresh output.
pub(crate) fn bias_filled<T: crate::tensor::Scalar>(
    shape: crate::tensor::Shape,
    bias: Option<&Tensor<T>>,
) -> Tensor<T> {
    let mut out = Tensor::zeros(shape);
    if let Some(b) = bias {
        let [n, c, h, w] = shape;
        for ni in 0..n {
            for ci in 0..c {
                let bv = b.data()[ci];
                for yi in 0..h {
                    for xi in 0..w {
                        *out.at_mut(ni, ci, yi, xi) = bv;
                    }
                }
            }
        }
    }
    out
}
