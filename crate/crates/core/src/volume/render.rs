use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

use super::ScalarSlice;

/// Linear display mapping: `level` is the centre, `window` the width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowLevel {
    pub window: f64,
    pub level: f64,
}

impl WindowLevel {
    /// The window spanning `(min, max)`; `None` when the range is degenerate.
    pub fn full_range((lo, hi): (f32, f32)) -> Option<Self> {
        let window = hi as f64 - lo as f64;
        (window > 0.0).then(|| WindowLevel {
            window,
            level: (hi as f64 + lo as f64) / 2.0,
        })
    }
}

/// 8-bit grayscale rendering of a slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl SliceImage {
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        PngEncoder::new(&mut out)
            .write_image(&self.pixels, self.cols as u32, self.rows as u32, ExtendedColorType::L8)
            .expect("encoding PNG into memory");
        out
    }
}

fn map_value(v: f32, lo: f64, window: f64) -> u8 {
    if !v.is_finite() {
        return 0;
    }
    let x = ((v as f64 - lo) / window * 255.0).round();
    x.clamp(0.0, 255.0) as u8
}

/// Applies the window/level mapping with round-half-away-from-zero.
pub fn render_slice(slice: &ScalarSlice, window: f64, level: f64) -> Result<SliceImage> {
    if !window.is_finite() || window <= 0.0 {
        return Err(Error::NonPositiveWindow(window));
    }
    let lo = level - window / 2.0;
    let mut pixels = vec![0u8; slice.values.len()];
    let cols = slice.cols.max(1);
    par::fill_chunks(&mut pixels, cols * 64, |ci, chunk| {
        let start = ci * cols * 64;
        for (p, &v) in chunk.iter_mut().zip(&slice.values[start..]) {
            *p = map_value(v, lo, window);
        }
    });
    Ok(SliceImage {
        rows: slice.rows,
        cols: slice.cols,
        pixels,
    })
}

/// Renders with the window covering `range`; a degenerate range renders to
/// all zeros.
pub fn render_slice_default(slice: &ScalarSlice, range: (f32, f32)) -> SliceImage {
    match WindowLevel::full_range(range) {
        Some(wl) => render_slice(slice, wl.window, wl.level).expect("window is positive"),
        None => SliceImage {
            rows: slice.rows,
            cols: slice.cols,
            pixels: vec![0; slice.values.len()],
        },
    }
}
