//! One-pass evaluation metrics: centre location error, precision,
//! normalized precision and success (IoU) curves.
//!
//! Conventions: a frame passes a CLE threshold when `cle < t` and an IoU
//! threshold when `iou > t`, except that the final threshold `t = 1` is
//! passed by `iou >= 1`, so perfect tracking scores 1. Areas under curves
//! use the trapezoid rule over the threshold grid, divided by its span.

use std::fmt::Write as _;

use crate::error::{CoreError, Result};
use crate::geometry::BBox;

pub const PRECISION_THRESHOLD: f64 = 20.0;
/// CLE thresholds `0, 1, ..., 50` pixels.
pub const PRECISION_STEPS: usize = 50;
/// IoU thresholds `0, 0.01, ..., 1`.
pub const SUCCESS_STEPS: usize = 100;
/// Normalized CLE thresholds `0, 0.005, ..., 0.5`.
pub const NORM_STEPS: usize = 100;
pub const NORM_MAX: f64 = 0.5;

pub fn cle(pred: &BBox, gt: &BBox) -> f64 {
    (pred.cx - gt.cx).hypot(pred.cy - gt.cy)
}

/// Centre distance with each axis divided by the ground-truth extent.
pub fn normalized_cle(pred: &BBox, gt: &BBox) -> f64 {
    ((pred.cx - gt.cx) / gt.w).hypot((pred.cy - gt.cy) / gt.h)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    // areas from the same corners as the overlap, so identical boxes give
    // exactly 1 after any round trip through text
    let area_a = (ax2 - ax1) * (ay2 - ay1);
    let area_b = (bx2 - bx1) * (by2 - by1);
    inter / (area_a + area_b - inter)
}

pub fn thresholds(max: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| max * i as f64 / steps as f64).collect()
}

/// Fraction of `values` below each threshold.
pub fn below_curve(values: &[f64], ts: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    ts.iter().map(|&t| values.iter().filter(|&&v| v < t).count() as f64 / n).collect()
}

/// Fraction of IoUs above each threshold, with `>= 1` at `t = 1`.
pub fn success_curve(ious: &[f64], ts: &[f64]) -> Vec<f64> {
    let n = ious.len() as f64;
    ts.iter()
        .map(|&t| ious.iter().filter(|&&v| if t >= 1.0 { v >= 1.0 } else { v > t }).count() as f64 / n)
        .collect()
}

/// Trapezoid area under `curve` on an evenly spaced grid, normalized by
/// the grid span.
pub fn auc(curve: &[f64]) -> f64 {
    match curve.len() {
        0 => 0.0,
        1 => curve[0],
        n => {
            let inner: f64 = curve[1..n - 1].iter().sum();
            (inner + (curve[0] + curve[n - 1]) / 2.0) / (n - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cle: Vec<f64>,
    pub iou: Vec<f64>,
    pub precision_curve: Vec<f64>,
    pub norm_precision_curve: Vec<f64>,
    pub success_curve: Vec<f64>,
    pub precision20: f64,
    pub norm_precision: f64,
    pub success_auc: f64,
    pub mean_iou: f64,
}

pub fn report(preds: &[BBox], gts: &[BBox]) -> Result<MetricReport> {
    if preds.is_empty() {
        return Err(CoreError::data("no frames to evaluate"));
    }
    if preds.len() != gts.len() {
        return Err(CoreError::data(format!("{} predictions for {} ground-truth boxes", preds.len(), gts.len())));
    }
    if let Some(i) = gts.iter().position(|b| !b.is_valid()) {
        return Err(CoreError::data(format!("invalid ground-truth box at frame {}", i + 1)));
    }
    let cle: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| cle(p, g)).collect();
    let ncle: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| normalized_cle(p, g)).collect();
    let iou: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| if p.is_valid() { iou(p, g) } else { 0.0 }).collect();
    let precision_curve = below_curve(&cle, &thresholds(PRECISION_STEPS as f64, PRECISION_STEPS));
    let norm_precision_curve = below_curve(&ncle, &thresholds(NORM_MAX, NORM_STEPS));
    let success_curve = success_curve(&iou, &thresholds(1.0, SUCCESS_STEPS));
    let n = cle.len() as f64;
    Ok(MetricReport {
        precision20: cle.iter().filter(|&&c| c < PRECISION_THRESHOLD).count() as f64 / n,
        norm_precision: auc(&norm_precision_curve),
        success_auc: auc(&success_curve),
        mean_iou: iou.iter().sum::<f64>() / n,
        cle,
        iou,
        precision_curve,
        norm_precision_curve,
        success_curve,
    })
}

const HEADER: &str = "# precision: fraction of frames with cle < 20 px; \
norm_precision: trapezoid AUC over t in [0, 0.5] step 0.005 of the fraction with \
sqrt(((px - gx) / gw)^2 + ((py - gy) / gh)^2) < t, divided by 0.5; \
success_auc: trapezoid AUC over t in [0, 1] step 0.01 of the fraction with iou > t (iou >= 1 at t = 1)\n";

impl MetricReport {
    pub fn frames_csv(&self) -> String {
        let mut s = String::from("frame,cle,iou\n");
        for (i, (c, u)) in self.cle.iter().zip(&self.iou).enumerate() {
            let _ = writeln!(s, "{},{c:.4},{u:.6}", i + 1);
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "{HEADER}precision20,norm_precision,success_auc,mean_iou,frames\n{:.6},{:.6},{:.6},{:.6},{}\n",
            self.precision20,
            self.norm_precision,
            self.success_auc,
            self.mean_iou,
            self.cle.len()
        )
    }
}
