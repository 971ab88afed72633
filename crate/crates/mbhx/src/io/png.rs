//! PNG image codec.
//!
//! RGB buffers map to 8-bit RGB PNG, alpha buffers to 16-bit grayscale
//! PNG. Values quantize by `round(v * (2^bits - 1))`, so a write→read
//! round trip moves each element by at most `0.5 / (2^bits - 1)`. Other
//! PNG variants (palette, RGBA, 8-bit gray, ...) are rejected rather than
//! silently converted.

use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::compositing::ImageBuffer;
use crate::error::{Error, Result};

pub fn write_image(path: &Path, buffer: &ImageBuffer) -> Result<()> {
    let (h, w) = buffer.extent();
    match buffer.channels() {
        3 => {
            let mut bytes = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        bytes.push((buffer.get(y, x, c) * 255.0).round() as u8);
                    }
                }
            }
            let img = image::RgbImage::from_raw(w as u32, h as u32, bytes)
                .expect("raw buffer length matches extents");
            img.save_with_format(path, ImageFormat::Png)
                .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))
        }
        1 => {
            let mut pixels = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    pixels.push((buffer.get(y, x, 0) * 65535.0).round() as u16);
                }
            }
            let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, pixels)
                .expect("raw buffer length matches extents");
            img.save_with_format(path, ImageFormat::Png)
                .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))
        }
        other => Err(Error::Contract(format!(
            "cannot encode {other}-channel buffer"
        ))),
    }
}

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Format(format!("decoding {}: {e}", path.display())))?;
    match img {
        DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.into_raw();
            let mut data = vec![0.0; h * w * 3];
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        data[(c * h + y) * w + x] = raw[(y * w + x) * 3 + c] as f64 / 255.0;
                    }
                }
            }
            ImageBuffer::new(h, w, 3, data)
        }
        DynamicImage::ImageLuma16(gray) => {
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            let raw = gray.into_raw();
            let data: Vec<f64> = raw.iter().map(|&q| q as f64 / 65535.0).collect();
            ImageBuffer::new(h, w, 1, data)
        }
        other => Err(Error::Format(format!(
            "unsupported PNG variant {:?} in {} (expected 8-bit RGB or 16-bit grayscale)",
            other.color(),
            path.display()
        ))),
    }
}
