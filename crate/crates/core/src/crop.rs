//! Square crops resampled from frames, as standardized network input.

use sgdvit_tensor::{Element, Tensor};

use crate::error::{CoreError, Result};
use crate::geometry::CropWindow;
use crate::image::Image;

pub const PIXEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const PIXEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone)]
pub struct Crop<T> {
    /// `[1, 3, size, size]`, standardized.
    pub tensor: Tensor<T>,
    pub window: CropWindow,
    /// Fraction of crop pixels whose centre falls outside the frame and
    /// took the frame's mean colour.
    pub padded_fraction: f64,
}

/// Cuts `window` out of `frame` with bilinear sampling. Samples outside the
/// frame take the per-channel frame mean.
pub fn crop<T: Element>(frame: &Image, window: CropWindow) -> Result<Crop<T>> {
    if !(window.side > 0.0) || window.size == 0 {
        return Err(CoreError::data(format!("degenerate crop window {window:?}")));
    }
    let mean = frame.channel_means();
    let n = window.size;
    let (fw, fh) = (frame.width as f64, frame.height as f64);
    let mut planes = vec![0.0f64; 3 * n * n];
    let mut padded = 0usize;
    for i in 0..n {
        for j in 0..n {
            let (x, y) = window.to_frame(j as f64 + 0.5, i as f64 + 0.5);
            let rgb = if x < 0.0 || y < 0.0 || x > fw || y > fh {
                padded += 1;
                mean
            } else {
                sample(frame, x - 0.5, y - 0.5)
            };
            for c in 0..3 {
                planes[(c * n + i) * n + j] = (rgb[c] / 255.0 - PIXEL_MEAN[c]) / PIXEL_STD[c];
            }
        }
    }
    Ok(Crop {
        tensor: Tensor::from_f64([1, 3, n, n], &planes)?,
        window,
        padded_fraction: padded as f64 / (n * n) as f64,
    })
}

/// Bilinear read at pixel-index coordinates, edge pixels repeated.
fn sample(frame: &Image, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (frame.width as isize, frame.height as isize);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: isize, yi: isize| frame.pixel(xi.clamp(0, w - 1) as usize, yi.clamp(0, h - 1) as usize);
    let (xi, yi) = (x0 as isize, y0 as isize);
    let (p00, p01, p10, p11) = (at(xi, yi), at(xi + 1, yi), at(xi, yi + 1), at(xi + 1, yi + 1));
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
        let bottom = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}
