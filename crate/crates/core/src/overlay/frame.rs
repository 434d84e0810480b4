use alloc::vec::Vec;

use super::{OverlayError, Rgb};

/// Default square canvas the overlays are designed for.
pub const DEFAULT_CANVAS_SIZE: u32 = 336;

/// Row-major RGB8 raster.
#[derive(Clone, PartialEq, Eq)]
pub struct FrameImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl core::fmt::Debug for FrameImage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("FrameImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl FrameImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, OverlayError> {
        let expected = (width as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(3));
        if width == 0 || height == 0 || expected != Some(pixels.len()) {
            return Err(OverlayError::InvalidImage {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, OverlayError> {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&[color.r, color.g, color.b]);
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub(crate) fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let i = self.offset(x, y);
        &mut self.pixels[i..i + 3]
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        (y as usize * self.width as usize + x as usize) * 3
    }
}

/// Horizontal or vertical bilinear tap: two source indices and the weight of
/// the second one.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src: u32, dst: u32) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    let max = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            // Pixel centers are aligned (half-pixel offset), then clamped to the edge.
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s as usize;
            let hi = (lo + 1).min(src as usize - 1);
            Tap {
                lo,
                hi,
                frac: s - lo as f64,
            }
        })
        .collect()
}

/// Resizes `image` to a `canvas_size` square with bilinear interpolation.
///
/// The aspect ratio is not preserved. Sample positions use aligned pixel
/// centers, `src = (dst + 0.5) * src_len / dst_len - 0.5`, clamped to the
/// image; each channel is rounded half-up. An image that already has the
/// target size is returned unchanged.
pub fn normalize_frame(image: &FrameImage, canvas_size: u32) -> Result<FrameImage, OverlayError> {
    if canvas_size == 0 {
        return Err(OverlayError::InvalidImage {
            width: 0,
            height: 0,
            len: 0,
        });
    }
    if image.width == canvas_size && image.height == canvas_size {
        return Ok(image.clone());
    }

    let xs = taps(image.width, canvas_size);
    let ys = taps(image.height, canvas_size);
    let stride = image.width as usize * 3;
    let src = &image.pixels;
    let mut out = Vec::with_capacity(canvas_size as usize * canvas_size as usize * 3);

    for ty in &ys {
        let row_lo = ty.lo * stride;
        let row_hi = ty.hi * stride;
        for tx in &xs {
            for c in 0..3 {
                let p00 = src[row_lo + tx.lo * 3 + c] as f64;
                let p10 = src[row_lo + tx.hi * 3 + c] as f64;
                let p01 = src[row_hi + tx.lo * 3 + c] as f64;
                let p11 = src[row_hi + tx.hi * 3 + c] as f64;
                let top = p00 + (p10 - p00) * tx.frac;
                let bottom = p01 + (p11 - p01) * tx.frac;
                let v = top + (bottom - top) * ty.frac;
                out.push((v + 0.5).clamp(0.0, 255.0) as u8);
            }
        }
    }

    FrameImage::new(canvas_size, canvas_size, out)
}
