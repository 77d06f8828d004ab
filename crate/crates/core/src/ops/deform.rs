use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::tensor::{Scalar, Tensor};

// Offsets are interleaved per kernel tap t = ky*kw + kx:
// channel 2t holds dy, channel 2t+1 holds dx.

#[inline]
fn read_padded<T: Scalar>(x: &Tensor<T>, n: usize, c: usize, y: isize, xx: isize) -> T {
    if y < 0 || xx < 0 || y >= x.height() as isize || xx >= x.width() as isize {
        T::zero()
    } else {
        x.at(n, c, y as usize, xx as usize)
    }
}

/// Bilinear sample with zero outside the input.
#[inline]
fn bilinear<T: Scalar>(x: &Tensor<T>, n: usize, c: usize, py: f64, px: f64) -> T {
    let y0 = py.floor();
    let x0 = px.floor();
    let wy = T::from_f64(py - y0);
    let wx = T::from_f64(px - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let one = T::one();
    let v00 = read_padded(x, n, c, y0, x0);
    let v01 = read_padded(x, n, c, y0, x0 + 1);
    let v10 = read_padded(x, n, c, y0 + 1, x0);
    let v11 = read_padded(x, n, c, y0 + 1, x0 + 1);
    (one - wy) * ((one - wx) * v00 + wx * v01) + wy * ((one - wx) * v10 + wx * v11)
}

fn check_offsets<T: Scalar>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(usize, usize)> {
    let (kh, kw) = spec.kernel;
    let (oh, ow) = spec.output_hw(x.height(), x.width())?;
    let expected = [x.batch(), 2 * kh * kw, oh, ow];
    if offsets.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "deform_conv2d offsets".into(),
            expected,
            actual: offsets.shape(),
        });
    }
    Ok((oh, ow))
}

/// Deformable convolution (offset-only formulation).
///
/// Each kernel tap is displaced by a learned per-location (dy, dx) and the
/// input is read with bilinear interpolation, zero outside its bounds.
pub fn deform_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    offsets: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (kh, kw) = spec.kernel;
    let w_shape = [spec.out_channels, spec.in_channels, kh, kw];
    if w.shape() != w_shape {
        return Err(Error::ShapeMismatch {
            context: "deform_conv2d weight".into(),
            expected: w_shape,
            actual: w.shape(),
        });
    }
    if x.channels() != spec.in_channels {
        return Err(Error::ShapeMismatch {
            context: "deform_conv2d input channels".into(),
            expected: [x.batch(), spec.in_channels, x.height(), x.width()],
            actual: x.shape(),
        });
    }
    let (oh, ow) = check_offsets(x, offsets, spec)?;
    let n = x.batch();
    let mut out = super::bias_filled([n, spec.out_channels, oh, ow], b);
    let pad = spec.padding as isize;
    let mut samples = vec![T::zero(); spec.in_channels];
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let t = ky * kw + kx;
                        let dy = offsets.at(ni, 2 * t, oy, ox).to_f64();
                        let dx = offsets.at(ni, 2 * t + 1, oy, ox).to_f64();
                        let py = (oy * spec.stride) as f64 + (ky as isize - pad) as f64 + dy;
                        let px = (ox * spec.stride) as f64 + (kx as isize - pad) as f64 + dx;
                        for (ic, s) in samples.iter_mut().enumerate() {
                            *s = bilinear(x, ni, ic, py, px);
                        }
                        for oc in 0..spec.out_channels {
                            let mut acc = out.at(ni, oc, oy, ox);
                            for (ic, &s) in samples.iter().enumerate() {
                                acc += w.at(oc, ic, ky, kx) * s;
                            }
                            *out.at_mut(ni, oc, oy, ox) = acc;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`deform_conv2d`] with respect to all four operands.
#[derive(Debug)]
pub struct DeformGrads<T: Scalar> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub doffsets: Tensor<T>,
    pub db: Option<Tensor<T>>,
}

pub fn deform_conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    offsets: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<DeformGrads<T>> {
    let (kh, kw) = spec.kernel;
    let (oh, ow) = check_offsets(x, offsets, spec)?;
    let n = x.batch();
    let expected = [n, spec.out_channels, oh, ow];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "deform_conv2d grad_out".into(),
            expected,
            actual: grad_out.shape(),
        });
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut doff = Tensor::zeros(offsets.shape());
    let mut db = spec.bias.then(|| Tensor::zeros([1, spec.out_channels, 1, 1]));
    let pad = spec.padding as isize;
    let one = T::one();
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                if let Some(db) = db.as_mut() {
                    for oc in 0..spec.out_channels {
                        *db.at_mut(0, oc, 0, 0) += grad_out.at(ni, oc, oy, ox);
                    }
                }
                for ky in 0..kh {
                    for kx in 0..kw {
                        let t = ky * kw + kx;
                        let dyv = offsets.at(ni, 2 * t, oy, ox).to_f64();
                        let dxv = offsets.at(ni, 2 * t + 1, oy, ox).to_f64();
                        let py = (oy * spec.stride) as f64 + (ky as isize - pad) as f64 + dyv;
                        let px = (ox * spec.stride) as f64 + (kx as isize - pad) as f64 + dxv;
                        let y0f = py.floor();
                        let x0f = px.floor();
                        let wy = T::from_f64(py - y0f);
                        let wx = T::from_f64(px - x0f);
                        let (y0, x0) = (y0f as isize, x0f as isize);
                        for ic in 0..spec.in_channels {
                            let v00 = read_padded(x, ni, ic, y0, x0);
                            let v01 = read_padded(x, ni, ic, y0, x0 + 1);
                            let v10 = read_padded(x, ni, ic, y0 + 1, x0);
                            let v11 = read_padded(x, ni, ic, y0 + 1, x0 + 1);
                            let sample = (one - wy) * ((one - wx) * v00 + wx * v01)
                                + wy * ((one - wx) * v10 + wx * v11);
                            // d sample / d py and / d px at this tap.
                            let dsdy = (one - wx) * (v10 - v00) + wx * (v11 - v01);
                            let dsdx = (one - wy) * (v01 - v00) + wy * (v11 - v10);
                            // Sum of grad_out * w over output channels.
                            let mut gw = T::zero();
                            for oc in 0..spec.out_channels {
                                let g = grad_out.at(ni, oc, oy, ox);
                                *dw.at_mut(oc, ic, ky, kx) += g * sample;
                                gw += g * w.at(oc, ic, ky, kx);
                            }
                            *doff.at_mut(ni, 2 * t, oy, ox) += gw * dsdy;
                            *doff.at_mut(ni, 2 * t + 1, oy, ox) += gw * dsdx;
                            // Scatter into dx through the four corners.
                            let mut scatter = |yy: isize, xx: isize, weight: T| {
                                if yy >= 0
                                    && xx >= 0
                                    && yy < x.height() as isize
                                    && xx < x.width() as isize
                                {
                                    *dx.at_mut(ni, ic, yy as usize, xx as usize) += gw * weight;
                                }
                            };
                            scatter(y0, x0, (one - wy) * (one - wx));
                            scatter(y0, x0 + 1, (one - wy) * wx);
                            scatter(y0 + 1, x0, wy * (one - wx));
                            scatter(y0 + 1, x0 + 1, wy * wx);
                        }
                    }
                }
            }
        }
    }
    Ok(DeformGrads {
        dx,
        dw,
        doffsets: doff,
        db,
    })
}
