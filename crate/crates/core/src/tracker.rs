//! Per-sequence tracking loop: crop, forward, decode, update.

use sgdvit_tensor::{Element, ParamStore, Tape};

use crate::crop::crop;
use crate::embedding::MaskMode;
use crate::error::{CoreError, Result};
use crate::geometry::{BBox, CropWindow};
use crate::image::Image;
use crate::model::{Model, Sampling, TemplateTensors};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Blend weight of the cosine window against the objectness score.
    pub penalty: f64,
    /// Weight of the previous size in the size update.
    pub ema: f64,
    /// Smallest box side kept after clamping, in pixels.
    pub min_side: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { penalty: 0.3, ema: 0.7, min_side: 2.0 }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.penalty) {
            return Err(CoreError::config("tracker.penalty", format!("must lie in [0, 1], got {}", self.penalty)));
        }
        if !(0.0..=1.0).contains(&self.ema) {
            return Err(CoreError::config("tracker.ema", format!("must lie in [0, 1], got {}", self.ema)));
        }
        if !(self.min_side > 0.0) {
            return Err(CoreError::config("tracker.min_side", "must be positive"));
        }
        Ok(())
    }
}

/// Symmetric `G x G` Hann window, row-major, peak 1 at the centre.
pub fn hann_window(g: usize) -> Vec<f64> {
    let h: Vec<f64> = (0..g)
        .map(|i| if g == 1 { 1.0 } else { 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (g - 1) as f64).cos() })
        .collect();
    (0..g * g).map(|k| h[k / g] * h[k % g]).collect()
}

/// `(1 - penalty) * sigmoid(cls) + penalty * window`.
pub fn penalized_scores(cls: &[f64], window: &[f64], penalty: f64) -> Vec<f64> {
    cls.iter().zip(window).map(|(&z, &w)| (1.0 - penalty) * sigmoid(z) + penalty * w).collect()
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone)]
pub struct TrackerState<T> {
    pub template: TemplateTensors<T>,
    pub bbox: BBox,
    pub frame_index: usize,
    pub window: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameResult {
    pub bbox: BBox,
    pub confidence: f64,
    /// Chosen grid cell `(row, col)`.
    pub cell: (usize, usize),
    pub tokens: usize,
}

pub struct Tracker<'a, T> {
    pub model: &'a Model,
    pub store: &'a ParamStore<T>,
    pub cfg: TrackerConfig,
    pub state: Option<TrackerState<T>>,
}

impl<'a, T: Element> Tracker<'a, T> {
    pub fn new(model: &'a Model, store: &'a ParamStore<T>, cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker { model, store, cfg, state: None })
    }

    /// Template crop window: square context around the box at template size.
    pub fn template_window(&self, b: &BBox) -> CropWindow {
        CropWindow { cx: b.cx, cy: b.cy, side: b.context_side(), size: self.model.cfg.template_size }
    }

    /// Search crop window centred on the previous box, same pixel scale as
    /// the template crop.
    pub fn search_window(&self, b: &BBox) -> CropWindow {
        let side = self.model.geom.search_side(b.context_side());
        CropWindow { cx: b.cx, cy: b.cy, side, size: self.model.cfg.search_size }
    }

    pub fn init(&mut self, frame: &Image, gt: BBox) -> Result<()> {
        if !gt.is_valid() {
            return Err(CoreError::data(format!("degenerate initial box {gt:?}")));
        }
        let (fw, fh) = (frame.width as f64, frame.height as f64);
        if gt.cx < 0.0 || gt.cy < 0.0 || gt.cx > fw || gt.cy > fh {
            return Err(CoreError::data(format!("initial box centre outside the {fw}x{fh} frame")));
        }
        let z = crop::<T>(frame, self.template_window(&gt))?;
        let mut t = Tape::inference();
        let zv = t.constant(z.tensor);
        let tv = self.model.template(&mut t, self.store, zv)?;
        self.state = Some(TrackerState {
            template: TemplateTensors::capture(&t, &tv),
            bbox: gt,
            frame_index: 0,
            window: hann_window(self.model.cfg.grid),
        });
        Ok(())
    }

    pub fn track(&mut self, frame: &Image) -> Result<FrameResult> {
        let state = self.state.as_ref().ok_or_else(|| CoreError::data("tracker used before init"))?;
        let prev = state.bbox;
        let window = self.search_window(&prev);
        let x = crop::<T>(frame, window)?;
        let mut t = Tape::inference();
        t.flops_mut().set_enabled(false);
        let tmpl = state.template.replay(&mut t);
        let xv = t.constant(x.tensor);
        // deterministic masks draw no noise; the stream only satisfies the API
        let mut r = rng::stream(0, "track");
        let out = self.model.search(
            &mut t,
            self.store,
            &tmpl,
            xv,
            Sampling { mode: MaskMode::Deterministic, force_fine: None, rng: &mut r },
        )?;
        let g = self.model.cfg.grid;
        let cls: Vec<f64> = t.data(out.heads.cls).iter().map(|v| v.f64()).collect();
        let reg: Vec<f64> = t.data(out.heads.reg).iter().map(|v| v.f64()).collect();
        if cls.iter().chain(&reg).any(|v| !v.is_finite()) {
            return Err(CoreError::Numerical(format!("non-finite head output at frame {}", state.frame_index + 1)));
        }
        let scores = penalized_scores(&cls, &state.window, self.cfg.penalty);
        let k = argmax(&scores);
        let (i, j) = (k / g, k % g);
        let d = |c: usize| reg[c * g * g + k];
        let grid_box = BBox::from_corners(j as f64 - d(0), i as f64 - d(1), j as f64 + d(2), i as f64 + d(3));

        let geom = &self.model.geom;
        let step = geom.cell_step();
        let crop_box = BBox::new(geom.grid_to_crop(grid_box.cx), geom.grid_to_crop(grid_box.cy), grid_box.w * step, grid_box.h * step);
        let pred = window.box_to_frame(&crop_box);
        let a = self.cfg.ema;
        let w = a * prev.w + (1.0 - a) * pred.w;
        let h = a * prev.h + (1.0 - a) * pred.h;
        let bbox = BBox::new(pred.cx, pred.cy, w, h).clamp_to(frame.width as f64, frame.height as f64, self.cfg.min_side);

        let tokens = out.layout.as_ref().map_or(0, |l| l.len());
        let state = self.state.as_mut().expect("checked above");
        state.bbox = bbox;
        state.frame_index += 1;
        Ok(FrameResult { bbox, confidence: sigmoid(cls[k]), cell: (i, j), tokens })
    }
}
