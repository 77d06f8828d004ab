//! 8-bit raster images and their conversion to normalized tensors.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Decoded 8-bit raster, interleaved by pixel (HWC order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedImage(format!(
                "{channels} channels (only 1 or 3 supported)"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "image data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn pixel_index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    /// Normalized tensor in [0, 1], shape (1, C, H, W).
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let mut t = Tensor::zeros([1, self.channels, self.height, self.width]);
        for y in 0..self.height {
            for x in 0..self.width {
                let base = self.pixel_index(x, y);
                for c in 0..self.channels {
                    *t.at_mut(0, c, y, x) = T::from_f64(self.data[base + c] as f64 / 255.0);
                }
            }
        }
        t
    }

    /// Quantize a (1, C, H, W) tensor in [0, 1] back to 8 bits, clamping.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 {
            return Err(Error::InvalidArgument(format!(
                "from_tensor expects batch 1, got {n}"
            )));
        }
        let mut data = vec![0u8; w * h * c];
        for y in 0..h {
            for x in 0..w {
                for ci in 0..c {
                    let v = t.at(0, ci, y, x).to_f64().clamp(0.0, 1.0);
                    data[(y * w + x) * c + ci] = (v * 255.0).round() as u8;
                }
            }
        }
        Image::new(w, h, c, data)
    }

    /// Box-average downscale by an integer factor (both extents must divide).
    pub fn downscale_box(&self, factor: usize) -> Result<Image> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "extent {}x{} not divisible by downscale factor {factor}",
                self.width, self.height
            )));
        }
        let (ow, oh) = (self.width / factor, self.height / factor);
        let mut data = vec![0u8; ow * oh * self.channels];
        let area = (factor * factor) as f64;
        for y in 0..oh {
            for x in 0..ow {
                for c in 0..self.channels {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += self.data
                                [self.pixel_index(x * factor + dx, y * factor + dy) + c]
                                as f64;
                        }
                    }
                    data[(y * ow + x) * self.channels + c] = (acc / area).round() as u8;
                }
            }
        }
        Image::new(ow, oh, self.channels, data)
    }

    /// Copy a (w, h) region with top-left corner (x0, y0).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument("crop exceeds image bounds".into()));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in 0..h {
            let base = self.pixel_index(x0, y0 + y);
            data.extend_from_slice(&self.data[base..base + w * self.channels]);
        }
        Image::new(w, h, self.channels, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip_is_exact_for_8bit() {
        let img = Image::new(3, 2, 1, vec![0, 10, 128, 200, 254, 255]).unwrap();
        let t: Tensor<f64> = img.to_tensor();
        let back = Image::from_tensor(&t).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn from_tensor_clamps() {
        let t = Tensor::<f64>::from_f64_slice([1, 1, 1, 2], &[-0.5, 1.5]).unwrap();
        let img = Image::from_tensor(&t).unwrap();
        assert_eq!(img.data(), &[0, 255]);
    }

    #[test]
    fn box_downscale_averages() {
        let img = Image::new(2, 2, 1, vec![0, 100, 100, 200]).unwrap();
        let small = img.downscale_box(2).unwrap();
        assert_eq!(small.data(), &[100]);
    }

    #[test]
    fn crop_extracts_region() {
        let img = Image::new(3, 3, 1, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[5, 6, 8, 9]);
    }
}
