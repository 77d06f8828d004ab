//! Image file I/O: 8-bit PNG (gray/RGB) and binary PGM/PPM.

use std::io::Write;
use std::path::Path;

use image::{ColorType, DynamicImage};

use crate::error::{Error, Result};
use crate::image::Image;

/// Decode a PNG/PGM/PPM file. Anything but 8-bit gray or RGB is rejected.
pub fn load_image(path: &Path) -> Result<Image> {
    let decoded = image::open(path)?;
    match decoded {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Image::new(w as usize, h as usize, 1, buf.into_raw())
        }
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            Image::new(w as usize, h as usize, 3, buf.into_raw())
        }
        other => Err(Error::UnsupportedImage(format!(
            "{}: only 8-bit gray/RGB supported, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Encode as PNG or binary PGM/PPM depending on the file extension.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => {
            let color = if img.channels() == 1 {
                ColorType::L8
            } else {
                ColorType::Rgb8
            };
            image::save_buffer(
                path,
                img.data(),
                img.width() as u32,
                img.height() as u32,
                color,
            )?;
            Ok(())
        }
        "pgm" | "ppm" => {
            let magic = match (ext.as_str(), img.channels()) {
                ("pgm", 1) => "P5",
                ("ppm", 3) => "P6",
                _ => {
                    return Err(Error::UnsupportedImage(format!(
                        "{} channels do not fit a .{ext} file",
                        img.channels()
                    )))
                }
            };
            let mut file = std::fs::File::create(path)?;
            write!(file, "{magic}\n{} {}\n255\n", img.width(), img.height())?;
            file.write_all(img.data())?;
            Ok(())
        }
        _ => Err(Error::UnsupportedImage(format!(
            "unsupported output format '.{ext}' (use .png, .pgm, or .ppm)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::stream(seed, 0);
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.next_below(256) as u8).collect()).unwrap()
    }

    #[test]
    fn png_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (c, seed) in [(1usize, 1u64), (3, 2)] {
            let img = random_image(13, 9, c, seed);
            let path = dir.path().join(format!("t{c}.png"));
            save_image(&path, &img).unwrap();
            assert_eq!(load_image(&path).unwrap(), img);
        }
    }

    #[test]
    fn pnm_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let gray = random_image(8, 6, 1, 3);
        let p = dir.path().join("t.pgm");
        save_image(&p, &gray).unwrap();
        assert_eq!(load_image(&p).unwrap(), gray);

        let rgb = random_image(8, 6, 3, 4);
        let p = dir.path().join("t.ppm");
        save_image(&p, &rgb).unwrap();
        assert_eq!(load_image(&p).unwrap(), rgb);
    }

    #[test]
    fn sixteen_bit_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let buf: Vec<u16> = vec![1000; 4 * 4];
        let bytes: Vec<u8> = buf.iter().flat_map(|v| v.to_be_bytes()).collect();
        image::save_buffer(&path, &bytes, 4, 4, ColorType::L16).unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(matches!(err, Error::UnsupportedImage(_)));
    }

    #[test]
    fn pgm_maxval_65535_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.pgm");
        let mut file = std::fs::File::create(&path).unwrap();
        write!(file, "P5\n2 2\n65535\n").unwrap();
        file.write_all(&[0u8; 8]).unwrap();
        drop(file);
        assert!(load_image(&path).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.pgm");
        std::fs::write(&path, b"P5\n10 10\n255\nxx").unwrap();
        assert!(load_image(&path).is_err());
    }
}
