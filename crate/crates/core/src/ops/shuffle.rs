use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Rearrange (N, C, H, W) -> (N, C/r^2, H*r, W*r).
///
/// Index law: out(n, c, h*r+dy, w*r+dx) = in(n, c*r^2 + dy*r + dx, h, w).
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(Error::InvalidArgument("pixel_shuffle factor must be positive".into()));
    }
    let [n, c, h, w] = x.shape();
    if c % (r * r) != 0 {
        return Err(Error::InvalidArgument(format!(
            "pixel_shuffle: {} channels not divisible by r^2 = {}",
            c,
            r * r
        )));
    }
    let oc = c / (r * r);
    let mut out = Tensor::zeros([n, oc, h * r, w * r]);
    for ni in 0..n {
        for co in 0..oc {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = co * r * r + dy * r + dx;
                    for y in 0..h {
                        for xx in 0..w {
                            *out.at_mut(ni, co, y * r + dy, xx * r + dx) = x.at(ni, ci, y, xx);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`pixel_shuffle`]: (N, C, H, W) -> (N, C*r^2, H/r, W/r).
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(Error::InvalidArgument("pixel_unshuffle factor must be positive".into()));
    }
    let [n, c, h, w] = x.shape();
    if h % r != 0 || w % r != 0 {
        return Err(Error::InvalidArgument(format!(
            "pixel_unshuffle: spatial extent {}x{} not divisible by r = {}",
            h, w, r
        )));
    }
    let (oh, ow) = (h / r, w / r);
    let mut out = Tensor::zeros([n, c * r * r, oh, ow]);
    for ni in 0..n {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let co = ci * r * r + dy * r + dx;
                    for y in 0..oh {
                        for xx in 0..ow {
                            *out.at_mut(ni, co, y, xx) = x.at(ni, ci, y * r + dy, xx * r + dx);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testutil::random_tensor;
    use proptest::prelude::*;

    #[test]
    fn shuffle_shape_law() {
        let x = Tensor::<f64>::zeros([1, 4, 2, 2]);
        assert_eq!(pixel_shuffle(&x, 2).unwrap().shape(), [1, 1, 4, 4]);
        let y = Tensor::<f64>::zeros([1, 1, 4, 4]);
        assert_eq!(pixel_unshuffle(&y, 2).unwrap().shape(), [1, 4, 2, 2]);
    }

    #[test]
    fn r1_is_identity() {
        let x = random_tensor([2, 3, 4, 5], 8);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert_eq!(pixel_unshuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn indivisible_inputs_rejected() {
        let x = Tensor::<f64>::zeros([1, 3, 2, 2]);
        assert!(pixel_shuffle(&x, 2).is_err());
        let y = Tensor::<f64>::zeros([1, 1, 3, 4]);
        assert!(pixel_unshuffle(&y, 2).is_err());
    }

    #[test]
    fn index_law_spot_check() {
        // in(n, c*r^2 + dy*r + dx, h, w) lands at out(n, c, h*r+dy, w*r+dx)
        let mut x = Tensor::<f64>::zeros([1, 4, 2, 2]);
        for c in 0..4 {
            for y in 0..2 {
                for xx in 0..2 {
                    *x.at_mut(0, c, y, xx) = (c * 4 + y * 2 + xx) as f64;
                }
            }
        }
        let out = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(out.at(0, 0, 0, 0), x.at(0, 0, 0, 0));
        assert_eq!(out.at(0, 0, 0, 1), x.at(0, 1, 0, 0));
        assert_eq!(out.at(0, 0, 1, 0), x.at(0, 2, 0, 0));
        assert_eq!(out.at(0, 0, 3, 3), x.at(0, 3, 1, 1));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(seed in 0u64..1000, c in 1usize..4, h in 1usize..5, w in 1usize..5) {
            let x = random_tensor([1, c * 4, h, w], seed);
            let back = pixel_unshuffle(&pixel_shuffle(&x, 2).unwrap(), 2).unwrap();
            prop_assert_eq!(back, x);
        }
    }
}
