//! Simplified training loss: balanced BCE on objectness plus an IoU loss on
//! the distance regression at positive cells.

use sgdvit_tensor::{Element, Tape, Tensor, TensorError, Var};

use crate::error::Result;
use crate::geometry::{BBox, CropWindow, GridGeometry};
use crate::heads::HeadOutputs;

/// Positive cells lie inside the ellipse with these fractions of the box
/// half-extents as semi-axes.
pub const POSITIVE_RADIUS: f64 = 0.3;
pub const REG_WEIGHT: f64 = 2.0;

/// Ground-truth box in grid units: cell `(i, j)` has centre `(j, i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridTarget {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub grid: usize,
}

impl GridTarget {
    pub fn new(b: BBox, grid: usize) -> Self {
        GridTarget { cx: b.cx, cy: b.cy, w: b.w, h: b.h, grid }
    }

    /// Maps a frame box through the search crop `window` onto the grid.
    pub fn from_frame(b: &BBox, window: &CropWindow, geom: &GridGeometry) -> Self {
        let c = window.box_to_crop(b);
        let step = geom.cell_step();
        GridTarget {
            cx: geom.crop_to_grid(c.cx),
            cy: geom.crop_to_grid(c.cy),
            w: c.w / step,
            h: c.h / step,
            grid: geom.grid,
        }
    }

    /// Row-major indices of the positive cells.
    pub fn positives(&self) -> Vec<usize> {
        let g = self.grid;
        let (rx, ry) = (POSITIVE_RADIUS * self.w / 2.0, POSITIVE_RADIUS * self.h / 2.0);
        let mut cells: Vec<usize> = (0..g * g)
            .filter(|&k| {
                let (dx, dy) = ((k % g) as f64 - self.cx, (k / g) as f64 - self.cy);
                (dx / rx).powi(2) + (dy / ry).powi(2) <= 1.0
            })
            .collect();
        let limit = -0.5..g as f64 - 0.5;
        if limit.contains(&self.cx) && limit.contains(&self.cy) {
            let nearest = self.cy.round() as usize * g + self.cx.round() as usize;
            if !cells.contains(&nearest) {
                cells.push(nearest);
                cells.sort_unstable();
            }
        }
        cells
    }

    /// `(l, t, r, b)` distances from cell `k` to the box edges.
    pub fn distances(&self, k: usize) -> [f64; 4] {
        let (x, y) = ((k % self.grid) as f64, (k / self.grid) as f64);
        [
            x - (self.cx - self.w / 2.0),
            y - (self.cy - self.h / 2.0),
            self.cx + self.w / 2.0 - x,
            self.cy + self.h / 2.0 - y,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ToyLoss {
    pub total: Var,
    pub cls: Var,
    pub reg: Option<Var>,
    pub positives: usize,
    /// Set when no cell is positive and only the cls term applies.
    pub flagged: bool,
}

/// `cls + 2 * reg`, with cls the class-balanced mean of
/// `softplus(z) - y z` and reg the mean `1 - IoU` over positive cells.
pub fn toy_loss<T: Element>(t: &mut Tape<T>, out: &HeadOutputs, target: &GridTarget) -> Result<ToyLoss> {
    let g = target.grid;
    if t.shape(out.cls) != [1, 1, g, g] {
        return Err(TensorError::mismatch("toy_loss", t.shape(out.cls), &[1, 1, g, g]).into());
    }
    if t.shape(out.reg) != [1, 4, g, g] {
        return Err(TensorError::mismatch("toy_loss", t.shape(out.reg), &[1, 4, g, g]).into());
    }
    let pos = target.positives();
    let n = g * g;
    let mut labels = vec![0.0; n];
    for &k in &pos {
        labels[k] = 1.0;
    }
    let (np, nn) = (pos.len(), n - pos.len());
    let weights: Vec<f64> = labels
        .iter()
        .map(|&y| if y > 0.0 { 0.5 / np as f64 } else if np == 0 { 1.0 / nn as f64 } else { 0.5 / nn as f64 })
        .collect();

    let z = t.reshape(out.cls, &[n])?;
    let y = t.constant(Tensor::from_f64([n], &labels)?);
    let wv = t.constant(Tensor::from_f64([n], &weights)?);
    let sp = t.softplus(z);
    let yz = t.mul(y, z)?;
    let bce = t.sub(sp, yz)?;
    let bce = t.mul(bce, wv)?;
    let cls = t.sum(bce);

    if pos.is_empty() {
        return Ok(ToyLoss { total: cls, cls, reg: None, positives: 0, flagged: true });
    }

    let reg = t.reshape(out.reg, &[4, n])?;
    let reg = t.transpose(reg)?;
    let pred = t.index_select(reg, &pos)?;
    let gt: Vec<f64> = pos.iter().flat_map(|&k| target.distances(k).map(|d| d.max(0.0))).collect();
    let gt = t.constant(Tensor::from_f64([np, 4], &gt)?);
    let iou = anchored_iou(t, pred, gt)?;
    let reg = t.mean(iou);
    let reg = t.neg(reg);
    let reg = t.offset(reg, 1.0);
    let weighted = t.scale(reg, REG_WEIGHT);
    let total = t.add(cls, weighted)?;
    Ok(ToyLoss { total, cls, reg: Some(reg), positives: np, flagged: false })
}

/// IoU of box pairs given as `(l, t, r, b)` distances from a shared point.
fn anchored_iou<T: Element>(t: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var> {
    let col = |t: &mut Tape<T>, x: Var, i: usize| t.slice(x, 1, i, 1);
    let (pl, pt, pr, pb) = (col(t, pred, 0)?, col(t, pred, 1)?, col(t, pred, 2)?, col(t, pred, 3)?);
    let (gl, gtp, gr, gb) = (col(t, gt, 0)?, col(t, gt, 1)?, col(t, gt, 2)?, col(t, gt, 3)?);
    let pw = t.add(pl, pr)?;
    let ph = t.add(pt, pb)?;
    let gw = t.add(gl, gr)?;
    let gh = t.add(gtp, gb)?;
    let pa = t.mul(pw, ph)?;
    let ga = t.mul(gw, gh)?;
    let ml = t.minimum(pl, gl)?;
    let mr = t.minimum(pr, gr)?;
    let mt = t.minimum(pt, gtp)?;
    let mb = t.minimum(pb, gb)?;
    let iw = t.add(ml, mr)?;
    let ih = t.add(mt, mb)?;
    let inter = t.mul(iw, ih)?;
    let union = t.add(pa, ga)?;
    let union = t.sub(union, inter)?;
    let union = t.offset(union, 1e-9);
    Ok(t.div(inter, union)?)
}
