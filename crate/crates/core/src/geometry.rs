//! Boxes and the coordinate frames: frame pixels, crop pixels, grid cells.
//!
//! Continuous coordinates throughout: pixel `i` covers `[i, i + 1)` and has
//! its centre at `i + 0.5`.

use crate::backbone::{Backbone, FeatureGeometry};
use crate::error::{CoreError, Result};

/// Axis-aligned box by centre and size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    /// From the top-left corner form `x, y, w, h`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { cx: x + w / 2.0, cy: y + h / 2.0, w, h }
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h]
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { cx: (x1 + x2) / 2.0, cy: (y1 + y2) / 2.0, w: x2 - x1, h: y2 - y1 }
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite())
    }

    /// Shrinks the box to the frame `[0, width] x [0, height]`, keeping at
    /// least `min_side` pixels per side.
    pub fn clamp_to(&self, width: f64, height: f64, min_side: f64) -> BBox {
        let w = self.w.clamp(min_side, width);
        let h = self.h.clamp(min_side, height);
        let cx = self.cx.clamp(w / 2.0, width - w / 2.0);
        let cy = self.cy.clamp(h / 2.0, height - h / 2.0);
        BBox { cx, cy, w, h }
    }

    /// Square context side: `sqrt((w + p)(h + p))` with `p = (w + h) / 2`.
    pub fn context_side(&self) -> f64 {
        let p = (self.w + self.h) / 2.0;
        ((self.w + p) * (self.h + p)).sqrt()
    }
}

/// Mapping between a square crop and the frame it was cut from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub cx: f64,
    pub cy: f64,
    /// Side of the crop in frame pixels.
    pub side: f64,
    /// Side of the crop in crop pixels.
    pub size: usize,
}

impl CropWindow {
    pub fn scale(&self) -> f64 {
        self.side / self.size as f64
    }

    pub fn to_frame(&self, u: f64, v: f64) -> (f64, f64) {
        let half = self.size as f64 / 2.0;
        (self.cx + (u - half) * self.scale(), self.cy + (v - half) * self.scale())
    }

    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        let half = self.size as f64 / 2.0;
        ((x - self.cx) / self.scale() + half, (y - self.cy) / self.scale() + half)
    }

    pub fn box_to_frame(&self, b: &BBox) -> BBox {
        let (cx, cy) = self.to_frame(b.cx, b.cy);
        BBox { cx, cy, w: b.w * self.scale(), h: b.h * self.scale() }
    }

    pub fn box_to_crop(&self, b: &BBox) -> BBox {
        let (cx, cy) = self.to_crop(b.cx, b.cy);
        BBox { cx, cy, w: b.w / self.scale(), h: b.h / self.scale() }
    }
}

/// Sizes along the pipeline and the grid <-> search-crop mapping.
///
/// The similarity map cell `i` lies at search-feature position
/// `i + (T - 1) / 2`; the `G x G` grid spans the similarity map corner to
/// corner, so every grid-level map shares one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub feat: FeatureGeometry,
    pub template_size: usize,
    pub search_size: usize,
    pub template_feat: usize,
    pub search_feat: usize,
    pub sim: usize,
    pub grid: usize,
}

impl GridGeometry {
    pub fn new(backbone: &Backbone, grid: usize) -> Result<Self> {
        let tf = backbone.out_side(backbone.template_size);
        let sf = backbone.out_side(backbone.search_size);
        let (Some(template_feat), Some(search_feat)) = (tf, sf) else {
            return Err(CoreError::config("model", "backbone cannot process the crop sizes"));
        };
        if template_feat > search_feat {
            return Err(CoreError::config("model.template_size", "template features larger than search features"));
        }
        if grid < 2 {
            return Err(CoreError::config("model.grid", format!("grid must be at least 2, got {grid}")));
        }
        Ok(GridGeometry {
            feat: backbone.geometry(),
            template_size: backbone.template_size,
            search_size: backbone.search_size,
            template_feat,
            search_feat,
            sim: search_feat - template_feat + 1,
            grid,
        })
    }

    /// Search-feature coordinates of the first and last grid samples.
    pub fn roi(&self) -> (f64, f64) {
        let lo = (self.template_feat - 1) as f64 / 2.0;
        (lo, lo + (self.sim - 1) as f64)
    }

    /// Crop pixels between neighbouring grid cells.
    pub fn cell_step(&self) -> f64 {
        self.feat.stride * (self.sim - 1) as f64 / (self.grid - 1) as f64
    }

    pub fn grid_to_crop(&self, g: f64) -> f64 {
        0.5 + self.feat.offset + self.feat.stride * self.roi().0 + g * self.cell_step()
    }

    pub fn crop_to_grid(&self, u: f64) -> f64 {
        (u - 0.5 - self.feat.offset - self.feat.stride * self.roi().0) / self.cell_step()
    }

    /// Grid coordinate of template feature cell `i`, assuming template and
    /// search crops share their centre and pixel scale.
    pub fn template_cell_to_grid(&self, i: f64) -> f64 {
        let u = 0.5 + self.feat.offset + self.feat.stride * i;
        let delta = u - self.template_size as f64 / 2.0;
        self.crop_to_grid(self.search_size as f64 / 2.0 + delta)
    }

    /// Search crop side for a template context side, at equal pixel scale.
    pub fn search_side(&self, template_side: f64) -> f64 {
        template_side * self.search_size as f64 / self.template_size as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_and_centre_forms_agree() {
        let b = BBox::from_xywh(10.0, 20.0, 30.0, 40.0);
        assert_eq!((b.cx, b.cy), (25.0, 40.0));
        assert_eq!(b.to_xywh(), [10.0, 20.0, 30.0, 40.0]);
        assert_eq!(BBox::from_corners(10.0, 20.0, 40.0, 60.0), b);
    }

    #[test]
    fn clamp_keeps_box_inside() {
        let b = BBox::new(-5.0, 50.0, 20.0, 300.0).clamp_to(100.0, 200.0, 2.0);
        let [x1, y1, x2, y2] = b.corners();
        assert!(x1 >= 0.0 && y1 >= 0.0 && x2 <= 100.0 && y2 <= 200.0);
        assert_eq!(b.h, 200.0);
    }

    #[test]
    fn crop_window_round_trip() {
        let c = CropWindow { cx: 100.0, cy: 80.0, side: 181.0, size: 287 };
        let (u, v) = c.to_crop(37.25, 140.5);
        let (x, y) = c.to_frame(u, v);
        assert!((x - 37.25).abs() < 1e-12 && (y - 140.5).abs() < 1e-12);
        assert_eq!(c.to_frame(143.5, 143.5), (100.0, 80.0));
    }
}
