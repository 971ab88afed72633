//! Alpha-compositing arithmetic.
//!
//! An observed image decomposes as `I = α·F + (1-α)·B` per pixel and
//! channel, with opacity `α` in `[0, 1]`. The motion-blurred hand itself is
//! `α·F`; multiplying the observed image instead (`α·I`) leaks background
//! into every semi-transparent pixel — the difference is exactly
//! `α·(1-α)·(B-F)`, which [`extraction_residual`] exposes for tests and
//! demos.
//!
//! All math runs in 64-bit on stored channel values as-is (no color-space
//! conversion). Out-of-range inputs are rejected, never clamped.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A height × width × channels image of unit-interval intensities,
/// planar channel layout. Channels are 1 (alpha) or 3 (RGB).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<ImageBuffer> {
        if height == 0 || width == 0 {
            return Err(Error::Contract(format!(
                "image extents must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Contract(format!(
                "channels must be 1 (alpha) or 3 (RGB), got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Contract(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!(
                "image element {bad} outside [0, 1]"
            )));
        }
        Ok(ImageBuffer {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<ImageBuffer> {
        ImageBuffer::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Internal constructor for values already proven in range.
    pub(crate) fn from_parts(height: usize, width: usize, channels: usize, data: Vec<f64>) -> ImageBuffer {
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        debug_assert_eq!(data.len(), height * width * channels);
        ImageBuffer {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// View as a `[1, c, h, w]` tensor (shared data copy).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_op(
            vec![1, self.channels, self.height, self.width],
            self.data.clone(),
        )
    }

    /// Build from a `[1, c, h, w]` or `[c, h, w]` tensor whose values must
    /// already lie in `[0, 1]`.
    pub fn from_tensor(tensor: &Tensor) -> Result<ImageBuffer> {
        let shape = tensor.shape();
        let (c, h, w) = match shape {
            [1, c, h, w] => (*c, *h, *w),
            [c, h, w] => (*c, *h, *w),
            _ => {
                return Err(Error::Contract(format!(
                    "expected [1, c, h, w] or [c, h, w] tensor, got {shape:?}"
                )))
            }
        };
        ImageBuffer::new(h, w, c, tensor.data().to_vec())
    }

    fn check_extent(&self, other: &ImageBuffer, op: &str) -> Result<()> {
        if self.extent() != other.extent() {
            return Err(Error::Contract(format!(
                "{op}: extent mismatch {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    fn check_channels(&self, expected: usize, op: &str) -> Result<()> {
        if self.channels != expected {
            return Err(Error::Contract(format!(
                "{op}: expected {expected} channels, got {}",
                self.channels
            )));
        }
        Ok(())
    }
}

/// Per pixel and channel: `I = α·F + (1-α)·B`. Inputs in range imply the
/// output is in range; nothing is clamped.
pub fn composite(fg: &ImageBuffer, bg: &ImageBuffer, alpha: &ImageBuffer) -> Result<ImageBuffer> {
    fg.check_channels(3, "composite foreground")?;
    bg.check_channels(3, "composite background")?;
    alpha.check_channels(1, "composite alpha")?;
    fg.check_extent(bg, "composite")?;
    fg.check_extent(alpha, "composite")?;

    let plane = fg.height * fg.width;
    let mut data = Vec::with_capacity(3 * plane);
    for c in 0..3 {
        for i in 0..plane {
            let a = alpha.data[i];
            data.push(a * fg.data[c * plane + i] + (1.0 - a) * bg.data[c * plane + i]);
        }
    }
    Ok(ImageBuffer::from_parts(fg.height, fg.width, 3, data))
}

/// The extracted hand image `α·F`.
pub fn extract_hand(alpha: &ImageBuffer, fg: &ImageBuffer) -> Result<ImageBuffer> {
    alpha.check_channels(1, "extract_hand alpha")?;
    fg.check_channels(3, "extract_hand foreground")?;
    alpha.check_extent(fg, "extract_hand")?;
    let plane = fg.height * fg.width;
    let mut data = Vec::with_capacity(3 * plane);
    for c in 0..3 {
        for i in 0..plane {
            data.push(alpha.data[i] * fg.data[c * plane + i]);
        }
    }
    Ok(ImageBuffer::from_parts(fg.height, fg.width, 3, data))
}

/// The naive extraction `α·I` that multiplies the observed image: in
/// semi-transparent areas its result still contains background.
pub fn extract_naive(alpha: &ImageBuffer, image: &ImageBuffer) -> Result<ImageBuffer> {
    extract_hand(alpha, image)
}

/// Composite the extracted hand onto a replacement background:
/// `composite(F, new_bg, α)`.
pub fn recompose_onto(
    alpha: &ImageBuffer,
    fg: &ImageBuffer,
    new_bg: &ImageBuffer,
) -> Result<ImageBuffer> {
    composite(fg, new_bg, alpha)
}

/// Per-pixel difference `extract_naive(α, composite(F,B,α)) -
/// extract_hand(α, F)`, which expands symbolically to `α·(1-α)·(B-F)`.
/// Returned as raw signed values (not an [`ImageBuffer`]; range is
/// `[-1, 1]`), channel-planar.
pub fn extraction_residual(
    alpha: &ImageBuffer,
    fg: &ImageBuffer,
    bg: &ImageBuffer,
) -> Result<Vec<f64>> {
    alpha.check_channels(1, "extraction_residual alpha")?;
    fg.check_channels(3, "extraction_residual foreground")?;
    bg.check_channels(3, "extraction_residual background")?;
    alpha.check_extent(fg, "extraction_residual")?;
    alpha.check_extent(bg, "extraction_residual")?;
    let plane = fg.height * fg.width;
    let mut out = Vec::with_capacity(3 * plane);
    for c in 0..3 {
        for i in 0..plane {
            let a = alpha.data[i];
            out.push(a * (1.0 - a) * (bg.data[c * plane + i] - fg.data[c * plane + i]));
        }
    }
    Ok(out)
}
