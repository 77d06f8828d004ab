use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride-1 "same" convolution: padding = kh / 2.
    pub fn same(in_channels: usize, out_channels: usize, kh: usize, kw: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kh, kw),
            stride: 1,
            padding: kh / 2,
            bias: true,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument("conv channel counts must be positive".into()));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument("conv kernel/stride must be positive".into()));
        }
        Ok(())
    }

    /// Output spatial extents for an (H, W) input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if kh > ph || kw > pw {
            return Err(Error::InvalidArgument(format!(
                "kernel {}x{} larger than padded input {}x{}",
                kh, kw, ph, pw
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

fn check_conv_inputs<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
    w_shape: Shape,
) -> Result<(usize, usize)> {
    spec.validate()?;
    if w.shape() != w_shape {
        return Err(Error::ShapeMismatch {
            context: "conv weight".into(),
            expected: w_shape,
            actual: w.shape(),
        });
    }
    if x.channels() != spec.in_channels {
        return Err(Error::ShapeMismatch {
            context: "conv input channels".into(),
            expected: [x.batch(), spec.in_channels, x.height(), x.width()],
            actual: x.shape(),
        });
    }
    if let Some(b) = b {
        if b.numel() != spec.out_channels {
            return Err(Error::ShapeMismatch {
                context: "conv bias".into(),
                expected: [1, spec.out_channels, 1, 1],
                actual: b.shape(),
            });
        }
    }
    spec.output_hw(x.height(), x.width())
}

/// Standard 2-D cross-correlation with zero padding.
///
/// `w` has shape (out_c, in_c, kh, kw).
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (kh, kw) = spec.kernel;
    let (oh, ow) = check_conv_inputs(x, w, b, spec, [spec.out_channels, spec.in_channels, kh, kw])?;
    let (n, h, wid) = (x.batch(), x.height(), x.width());
    let mut out = super::bias_filled([n, spec.out_channels, oh, ow], b);
    if spec.stride == 1 {
        for ni in 0..n {
            for oc in 0..spec.out_channels {
                let out_base = out.index(ni, oc, 0, 0);
                for ic in 0..spec.in_channels {
                    let x_base = x.index(ni, ic, 0, 0);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = w.at(oc, ic, ky, kx);
                            accumulate_rows(
                                out.data_mut(),
                                out_base,
                                x.data(),
                                x_base,
                                Geometry { oh, ow, h, w: wid, pad: spec.padding, ky, kx },
                                wv,
                            );
                        }
                    }
                }
            }
        }
        return Ok(out);
    }
    let pad = spec.padding as isize;
    for ni in 0..n {
        for oc in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = out.at(ni, oc, oy, ox);
                    for ic in 0..spec.in_channels {
                        for ky in 0..kh {
                            let iy = (oy * spec.stride) as isize - pad + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * spec.stride) as isize - pad + kx as isize;
                                if ix < 0 || ix >= wid as isize {
                                    continue;
                                }
                                acc += w.at(oc, ic, ky, kx) * x.at(ni, ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    *out.at_mut(ni, oc, oy, ox) = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Valid output index ranges for one kernel tap at stride 1.
#[derive(Clone, Copy)]
struct Geometry {
    oh: usize,
    ow: usize,
    h: usize,
    w: usize,
    pad: usize,
    ky: usize,
    kx: usize,
}

impl Geometry {
    /// (oy range, ox range, row shifts) such that iy = oy + dy and
    /// ix = ox + dx stay inside the input.
    fn ranges(&self) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>, isize, isize)> {
        let dy = self.ky as isize - self.pad as isize;
        let dx = self.kx as isize - self.pad as isize;
        let oy0 = (-dy).max(0) as usize;
        let oy1 = (self.h as isize - dy).clamp(0, self.oh as isize) as usize;
        let ox0 = (-dx).max(0) as usize;
        let ox1 = (self.w as isize - dx).clamp(0, self.ow as isize) as usize;
        (oy0 < oy1 && ox0 < ox1).then_some((oy0..oy1, ox0..ox1, dy, dx))
    }
}

/// out[oy, ox] += wv * x[oy + dy, ox + dx] over the valid window.
fn accumulate_rows<T: Scalar>(
    out: &mut [T],
    out_base: usize,
    x: &[T],
    x_base: usize,
    geo: Geometry,
    wv: T,
) {
    let Some((oys, oxs, dy, dx)) = geo.ranges() else { return };
    for oy in oys {
        let iy = (oy as isize + dy) as usize;
        let ix0 = (oxs.start as isize + dx) as usize;
        let orow = &mut out[out_base + oy * geo.ow + oxs.start..out_base + oy * geo.ow + oxs.end];
        let xrow = &x[x_base + iy * geo.w + ix0..x_base + iy * geo.w + ix0 + orow.len()];
        for (o, &xv) in orow.iter_mut().zip(xrow) {
            *o += wv * xv;
        }
    }
}

/// Sum over the valid window of g[oy, ox] * x[oy + dy, ox + dx].
fn dot_rows<T: Scalar>(g: &[T], g_base: usize, x: &[T], x_base: usize, geo: Geometry) -> T {
    let mut acc = T::zero();
    let Some((oys, oxs, dy, dx)) = geo.ranges() else { return acc };
    for oy in oys {
        let iy = (oy as isize + dy) as usize;
        let ix0 = (oxs.start as isize + dx) as usize;
        let grow = &g[g_base + oy * geo.ow + oxs.start..g_base + oy * geo.ow + oxs.end];
        let xrow = &x[x_base + iy * geo.w + ix0..x_base + iy * geo.w + ix0 + grow.len()];
        for (&gv, &xv) in grow.iter().zip(xrow) {
            acc += gv * xv;
        }
    }
    acc
}

/// dx[oy + dy, ox + dx] += wv * g[oy, ox] over the valid window.
fn scatter_rows<T: Scalar>(
    dx: &mut [T],
    dx_base: usize,
    g: &[T],
    g_base: usize,
    geo: Geometry,
    wv: T,
) {
    let Some((oys, oxs, dy, ddx)) = geo.ranges() else { return };
    for oy in oys {
        let iy = (oy as isize + dy) as usize;
        let ix0 = (oxs.start as isize + ddx) as usize;
        let grow = &g[g_base + oy * geo.ow + oxs.start..g_base + oy * geo.ow + oxs.end];
        let xrow = &mut dx[dx_base + iy * geo.w + ix0..dx_base + iy * geo.w + ix0 + grow.len()];
        for (x, &gv) in xrow.iter_mut().zip(grow) {
            *x += wv * gv;
        }
    }
}

/// Gradients of a convolution with respect to its operands.
#[derive(Debug)]
pub struct ConvGrads<T: Scalar> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (kh, kw) = spec.kernel;
    let (oh, ow) = check_conv_inputs(x, w, None, spec, [spec.out_channels, spec.in_channels, kh, kw])?;
    let expected = [x.batch(), spec.out_channels, oh, ow];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "conv grad_out".into(),
            expected,
            actual: grad_out.shape(),
        });
    }
    let (n, h, wid) = (x.batch(), x.height(), x.width());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = spec.bias.then(|| Tensor::zeros([1, spec.out_channels, 1, 1]));
    if spec.stride == 1 {
        for ni in 0..n {
            for oc in 0..spec.out_channels {
                let g_base = grad_out.index(ni, oc, 0, 0);
                if let Some(db) = db.as_mut() {
                    let plane = &grad_out.data()[g_base..g_base + oh * ow];
                    let mut sum = T::zero();
                    for &g in plane {
                        sum += g;
                    }
                    *db.at_mut(0, oc, 0, 0) += sum;
                }
                for ic in 0..spec.in_channels {
                    let x_base = x.index(ni, ic, 0, 0);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let geo = Geometry { oh, ow, h, w: wid, pad: spec.padding, ky, kx };
                            *dw.at_mut(oc, ic, ky, kx) +=
                                dot_rows(grad_out.data(), g_base, x.data(), x_base, geo);
                            scatter_rows(
                                dx.data_mut(),
                                x_base,
                                grad_out.data(),
                                g_base,
                                geo,
                                w.at(oc, ic, ky, kx),
                            );
                        }
                    }
                }
            }
        }
        return Ok(ConvGrads { dx, dw, db });
    }
    let pad = spec.padding as isize;
    for ni in 0..n {
        for oc in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad_out.at(ni, oc, oy, ox);
                    if let Some(db) = db.as_mut() {
                        *db.at_mut(0, oc, 0, 0) += g;
                    }
                    for ic in 0..spec.in_channels {
                        for ky in 0..kh {
                            let iy = (oy * spec.stride) as isize - pad + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * spec.stride) as isize - pad + kx as isize;
                                if ix < 0 || ix >= wid as isize {
                                    continue;
                                }
                                *dw.at_mut(oc, ic, ky, kx) += g * x.at(ni, ic, iy as usize, ix as usize);
                                *dx.at_mut(ni, ic, iy as usize, ix as usize) += g * w.at(oc, ic, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// Depthwise convolution: one (kh, kw) filter per channel, `w` shaped
/// (C, 1, kh, kw); output channel c depends only on input channel c.
pub fn depthwise_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (kh, kw) = spec.kernel;
    if spec.out_channels != spec.in_channels {
        return Err(Error::InvalidArgument(
            "depthwise conv requires out_channels == in_channels".into(),
        ));
    }
    let (oh, ow) = check_conv_inputs(x, w, b, spec, [spec.in_channels, 1, kh, kw])?;
    let (n, c, h, wid) = (x.batch(), x.channels(), x.height(), x.width());
    let mut out = super::bias_filled([n, c, oh, ow], b);
    if spec.stride == 1 {
        for ni in 0..n {
            for ci in 0..c {
                let out_base = out.index(ni, ci, 0, 0);
                let x_base = x.index(ni, ci, 0, 0);
                for ky in 0..kh {
                    for kx in 0..kw {
                        accumulate_rows(
                            out.data_mut(),
                            out_base,
                            x.data(),
                            x_base,
                            Geometry { oh, ow, h, w: wid, pad: spec.padding, ky, kx },
                            w.at(ci, 0, ky, kx),
                        );
                    }
                }
            }
        }
        return Ok(out);
    }
    let pad = spec.padding as isize;
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = out.at(ni, ci, oy, ox);
                    for ky in 0..kh {
                        let iy = (oy * spec.stride) as isize - pad + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * spec.stride) as isize - pad + kx as isize;
                            if ix < 0 || ix >= wid as isize {
                                continue;
                            }
                            acc += w.at(ci, 0, ky, kx) * x.at(ni, ci, iy as usize, ix as usize);
                        }
                    }
                    *out.at_mut(ni, ci, oy, ox) = acc;
                }
            }
        }
    }
    Ok(out)
}

pub fn depthwise_conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (kh, kw) = spec.kernel;
    let (oh, ow) = check_conv_inputs(x, w, None, spec, [spec.in_channels, 1, kh, kw])?;
    let expected = [x.batch(), spec.in_channels, oh, ow];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "depthwise grad_out".into(),
            expected,
            actual: grad_out.shape(),
        });
    }
    let (n, c, h, wid) = (x.batch(), x.channels(), x.height(), x.width());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = spec.bias.then(|| Tensor::zeros([1, c, 1, 1]));
    if spec.stride == 1 {
        for ni in 0..n {
            for ci in 0..c {
                let g_base = grad_out.index(ni, ci, 0, 0);
                let x_base = x.index(ni, ci, 0, 0);
                if let Some(db) = db.as_mut() {
                    let plane = &grad_out.data()[g_base..g_base + oh * ow];
                    let mut sum = T::zero();
                    for &g in plane {
                        sum += g;
                    }
                    *db.at_mut(0, ci, 0, 0) += sum;
                }
                for ky in 0..kh {
                    for kx in 0..kw {
                        let geo = Geometry { oh, ow, h, w: wid, pad: spec.padding, ky, kx };
                        *dw.at_mut(ci, 0, ky, kx) +=
                            dot_rows(grad_out.data(), g_base, x.data(), x_base, geo);
                        scatter_rows(
                            dx.data_mut(),
                            x_base,
                            grad_out.data(),
                            g_base,
                            geo,
                            w.at(ci, 0, ky, kx),
                        );
                    }
                }
            }
        }
        return Ok(ConvGrads { dx, dw, db });
    }
    let pad = spec.padding as isize;
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad_out.at(ni, ci, oy, ox);
                    if let Some(db) = db.as_mut() {
                        *db.at_mut(0, ci, 0, 0) += g;
                    }
                    for ky in 0..kh {
                        let iy = (oy * spec.stride) as isize - pad + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * spec.stride) as isize - pad + kx as isize;
                            if ix < 0 || ix >= wid as isize {
                                continue;
                            }
                            *dw.at_mut(ci, 0, ky, kx) += g * x.at(ni, ci, iy as usize, ix as usize);
                            *dx.at_mut(ni, ci, iy as usize, ix as usize) += g * w.at(ci, 0, ky, kx);
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testutil::random_tensor;

    /// Direct six-loop reference convolution, kept deliberately separate
    /// from the production kernel.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, spec: &ConvSpec) -> Tensor<f64> {
        let (kh, kw) = spec.kernel;
        let (oh, ow) = spec.output_hw(x.height(), x.width()).unwrap();
        let mut out = Tensor::zeros([x.batch(), spec.out_channels, oh, ow]);
        for n in 0..x.batch() {
            for o in 0..spec.out_channels {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b.data()[o]);
                        for c in 0..spec.in_channels {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * spec.stride) as isize - spec.padding as isize + i as isize;
                                    let ix = (xo * spec.stride) as isize - spec.padding as isize + j as isize;
                                    let v = if iy >= 0
                                        && ix >= 0
                                        && (iy as usize) < x.height()
                                        && (ix as usize) < x.width()
                                    {
                                        x.at(n, c, iy as usize, ix as usize)
                                    } else {
                                        0.0
                                    };
                                    acc += w.at(o, c, i, j) * v;
                                }
                            }
                        }
                        *out.at_mut(n, o, y, xo) = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_overlap_counts() {
        let x = Tensor::full([1, 1, 3, 3], 1.0f64);
        let w = Tensor::full([1, 1, 3, 3], 1.0f64);
        let spec = ConvSpec::same(1, 1, 3, 3).with_bias(false);
        let out = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(out.at(0, 0, 1, 1), 9.0);
        assert_eq!(out.at(0, 0, 0, 0), 4.0);
        assert_eq!(out.at(0, 0, 0, 2), 4.0);
        assert_eq!(out.at(0, 0, 2, 2), 4.0);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = random_tensor([2, 3, 5, 5], 11);
        let mut w = Tensor::<f64>::zeros([3, 3, 3, 3]);
        for c in 0..3 {
            *w.at_mut(c, c, 1, 1) = 1.0;
        }
        let spec = ConvSpec::same(3, 3, 3, 3).with_bias(false);
        let out = conv2d(&x, &w, None, &spec).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_reference() {
        for seed in 0..5u64 {
            let x = random_tensor([2, 3, 8, 8], seed);
            let w = random_tensor([4, 3, 3, 3], seed + 100);
            let b = random_tensor([1, 4, 1, 1], seed + 200);
            let spec = ConvSpec::same(3, 4, 3, 3);
            let got = conv2d(&x, &w, Some(&b), &spec).unwrap();
            let want = naive_conv(&x, &w, Some(&b), &spec);
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f64>::zeros([1, 2, 4, 4]);
        let w = Tensor::<f64>::zeros([1, 3, 3, 3]);
        let spec = ConvSpec::same(3, 1, 3, 3);
        assert!(conv2d(&x, &w, None, &spec).is_err());
    }

    #[test]
    fn kernel_larger_than_padded_input_rejected() {
        let x = Tensor::<f64>::zeros([1, 1, 2, 2]);
        let w = Tensor::<f64>::zeros([1, 1, 7, 7]);
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (7, 7),
            stride: 1,
            padding: 1,
            bias: false,
        };
        assert!(conv2d(&x, &w, None, &spec).is_err());
    }

    #[test]
    fn depthwise_single_channel_equals_conv2d() {
        let x = random_tensor([1, 1, 6, 6], 3);
        let w = random_tensor([1, 1, 3, 3], 4);
        let spec = ConvSpec::same(1, 1, 3, 3).with_bias(false);
        let a = depthwise_conv2d(&x, &w, None, &spec).unwrap();
        let b = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn depthwise_identity_kernels() {
        let x = random_tensor([2, 4, 5, 5], 9);
        let mut w = Tensor::<f64>::zeros([4, 1, 3, 3]);
        for c in 0..4 {
            *w.at_mut(c, 0, 1, 1) = 1.0;
        }
        let spec = ConvSpec::same(4, 4, 3, 3).with_bias(false);
        let out = depthwise_conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn depthwise_matches_per_channel_naive() {
        let x = random_tensor([2, 3, 7, 7], 21);
        let w = random_tensor([3, 1, 3, 3], 22);
        let spec = ConvSpec::same(3, 3, 3, 3).with_bias(false);
        let got = depthwise_conv2d(&x, &w, None, &spec).unwrap();
        // Per-channel naive loop: run each channel through a 1-channel conv.
        for c in 0..3 {
            let xc = {
                let mut t = Tensor::<f64>::zeros([2, 1, 7, 7]);
                for n in 0..2 {
                    for y in 0..7 {
                        for xx in 0..7 {
                            *t.at_mut(n, 0, y, xx) = x.at(n, c, y, xx);
                        }
                    }
                }
                t
            };
            let wc = {
                let mut t = Tensor::<f64>::zeros([1, 1, 3, 3]);
                for i in 0..3 {
                    for j in 0..3 {
                        *t.at_mut(0, 0, i, j) = w.at(c, 0, i, j);
                    }
                }
                t
            };
            let want = naive_conv(&xc, &wc, None, &ConvSpec::same(1, 1, 3, 3).with_bias(false));
            for n in 0..2 {
                for y in 0..7 {
                    for xx in 0..7 {
                        assert!((got.at(n, c, y, xx) - want.at(n, 0, y, xx)).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn depthwise_channel_isolation() {
        // Perturbing channel 0 must not change output channel 1.
        let x = random_tensor([1, 2, 6, 6], 31);
        let w = random_tensor([2, 1, 3, 3], 32);
        let spec = ConvSpec::same(2, 2, 3, 3).with_bias(false);
        let base = depthwise_conv2d(&x, &w, None, &spec).unwrap();
        let mut x2 = x.clone();
        for y in 0..6 {
            for xx in 0..6 {
                *x2.at_mut(0, 0, y, xx) += 0.7;
            }
        }
        let perturbed = depthwise_conv2d(&x2, &w, None, &spec).unwrap();
        for y in 0..6 {
            for xx in 0..6 {
                assert_eq!(base.at(0, 1, y, xx), perturbed.at(0, 1, y, xx));
            }
        }
    }
}
