use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// ReLU: max(0, x).
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU; passes where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip(grad_out, "relu backward", |v, g| {
        if v > T::zero() {
            g
        } else {
            T::zero()
        }
    })
}

/// Elementwise sum of two same-shape tensors.
pub fn add<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip(y, "add", |a, b| a + b)
}

/// Stack along the channel axis in argument order.
pub fn concat<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let [n, _, h, w] = first.shape();
    let mut total_c = 0;
    for x in xs {
        let [xn, xc, xh, xw] = x.shape();
        if xn != n || xh != h || xw != w {
            return Err(Error::ShapeMismatch {
                context: "concat non-channel extents".into(),
                expected: first.shape(),
                actual: x.shape(),
            });
        }
        total_c += xc;
    }
    let mut out = Tensor::zeros([n, total_c, h, w]);
    let mut base = 0;
    for x in xs {
        let c = x.channels();
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        *out.at_mut(ni, base + ci, y, xx) = x.at(ni, ci, y, xx);
                    }
                }
            }
        }
        base += c;
    }
    Ok(out)
}

/// Split a concat gradient back into per-input slices.
pub fn concat_backward<T: Scalar>(
    input_channels: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let [n, c, h, w] = grad_out.shape();
    if input_channels.iter().sum::<usize>() != c {
        return Err(Error::InvalidArgument(
            "concat_backward channel counts do not sum to gradient channels".into(),
        ));
    }
    let mut grads = Vec::with_capacity(input_channels.len());
    let mut base = 0;
    for &ci in input_channels {
        let mut g = Tensor::zeros([n, ci, h, w]);
        for ni in 0..n {
            for cc in 0..ci {
                for y in 0..h {
                    for xx in 0..w {
                        *g.at_mut(ni, cc, y, xx) = grad_out.at(ni, base + cc, y, xx);
                    }
                }
            }
        }
        base += ci;
        grads.push(g);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testutil::random_tensor;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f64>::from_f64_slice([1, 1, 1, 3], &[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn concat_shape_law() {
        let a = Tensor::<f64>::zeros([1, 2, 3, 3]);
        let b = Tensor::<f64>::zeros([1, 3, 3, 3]);
        assert_eq!(concat(&[&a, &b]).unwrap().shape(), [1, 5, 3, 3]);
    }

    #[test]
    fn concat_extent_mismatch_rejected() {
        let a = Tensor::<f64>::zeros([1, 2, 3, 3]);
        let b = Tensor::<f64>::zeros([1, 3, 4, 3]);
        assert!(concat(&[&a, &b]).is_err());
    }

    #[test]
    fn add_zero_is_identity() {
        let x = random_tensor([2, 3, 4, 4], 13);
        let z = Tensor::<f64>::zeros([2, 3, 4, 4]);
        assert_eq!(add(&x, &z).unwrap(), x);
    }

    #[test]
    fn concat_roundtrips_through_backward() {
        let a = random_tensor([1, 2, 3, 3], 1);
        let b = random_tensor([1, 3, 3, 3], 2);
        let joined = concat(&[&a, &b]).unwrap();
        let parts = concat_backward(&[2, 3], &joined).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
