mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use sgdvit_core::geometry::BBox;
use sgdvit_core::metrics::{cle, iou, report};

/// Overlap of two `x, y, w, h` boxes by direct interval arithmetic.
fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ox = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let oy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ox <= 0.0 || oy <= 0.0 {
        return 0.0;
    }
    ox * oy / (a[2] * a[3] + b[2] * b[3] - ox * oy)
}

/// Threshold sweep: pass fraction at every threshold, then the trapezoid
/// area over the sweep divided by its span.
fn sweep_auc(values: &[f64], max: f64, steps: usize, pass: impl Fn(f64, f64) -> bool) -> (f64, f64) {
    let mut fractions = Vec::new();
    for i in 0..=steps {
        let t = max * i as f64 / steps as f64;
        let mut hits = 0;
        for &v in values {
            if pass(v, t) {
                hits += 1;
            }
        }
        fractions.push(hits as f64 / values.len() as f64);
    }
    let mut area = 0.0;
    for i in 0..steps {
        area += (fractions[i] + fractions[i + 1]) / 2.0 * (max / steps as f64);
    }
    (area / max, fractions.iter().sum::<f64>() / fractions.len() as f64)
}

fn iou_pass(v: f64, t: f64) -> bool {
    if t >= 1.0 {
        v >= 1.0
    } else {
        v > t
    }
}

#[test]
fn hand_cases() {
    assert_eq!(cle(&BBox::new(0.0, 0.0, 2.0, 2.0), &BBox::new(3.0, 4.0, 2.0, 2.0)), 5.0);
    let unit = BBox::from_xywh(0.0, 0.0, 1.0, 1.0);
    assert_eq!(iou(&unit, &unit), 1.0);
    assert_eq!(iou(&unit, &BBox::from_xywh(0.5, 0.0, 1.0, 1.0)), 0.5 / 1.5);
    assert_eq!(iou(&unit, &BBox::from_xywh(2.0, 0.0, 1.0, 1.0)), 0.0);
    assert_eq!(iou(&unit, &BBox::from_xywh(1.0, 0.0, 1.0, 1.0)), 0.0);
}

#[test]
fn identity_and_disjoint_reports() {
    let gts: Vec<BBox> = (0..10).map(|i| BBox::from_xywh(10.0 * i as f64, 5.0, 30.0, 20.0)).collect();
    let r = report(&gts, &gts).unwrap();
    assert_eq!((r.precision20, r.success_auc, r.mean_iou), (1.0, 1.0, 1.0));
    // strict `<` fails the zero threshold, which costs half a trapezoid step
    assert!((r.norm_precision - 0.995).abs() < 1e-12);
    let far: Vec<BBox> = gts.iter().map(|b| BBox::new(b.cx + 100.0, b.cy, b.w, b.h)).collect();
    let r = report(&far, &gts).unwrap();
    assert_eq!((r.precision20, r.success_auc, r.mean_iou), (0.0, 0.0, 0.0));
    assert!(r.precision_curve.iter().all(|&v| v == 0.0));
    assert!(report(&[], &[]).is_err());
    assert!(report(&gts[..2], &gts[..3]).is_err());
}

#[test]
fn four_frame_sweep() {
    let gt = BBox::from_xywh(0.0, 0.0, 10.0, 10.0);
    let preds: Vec<BBox> = [0.0, 10.0 / 3.0, 6.0, 20.0].iter().map(|&d| BBox::from_xywh(d, 0.0, 10.0, 10.0)).collect();
    let r = report(&preds, &[gt; 4]).unwrap();
    let want = [1.0, 0.5, 0.25, 0.0];
    for (a, b) in r.iou.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    let (auc, mean_fraction) = sweep_auc(&want, 1.0, 100, iou_pass);
    assert!((r.success_auc - auc).abs() < 1e-12);
    assert!((r.success_auc - 0.4375).abs() <= 0.005);
    assert!((mean_fraction - 0.4375).abs() <= 0.005);
}

#[test]
fn randomized_sets_match_the_sweep() {
    let mut r = rng(2024);
    for _ in 0..50 {
        let n = r.random_range(1..40);
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..n {
            let g = [r.random_range(0.0..300.0), r.random_range(0.0..200.0), r.random_range(5.0..80.0), r.random_range(5.0..80.0)];
            let spread = r.random_range(0.0..60.0);
            let p = [
                g[0] + r.random_range(-spread..=spread),
                g[1] + r.random_range(-spread..=spread),
                g[2] * r.random_range(0.5..1.5),
                g[3] * r.random_range(0.5..1.5),
            ];
            gts.push(g);
            preds.push(p);
        }
        let to_box = |v: &[f64; 4]| BBox::from_xywh(v[0], v[1], v[2], v[3]);
        let rep = report(&preds.iter().map(to_box).collect::<Vec<_>>(), &gts.iter().map(to_box).collect::<Vec<_>>()).unwrap();
        let ious: Vec<f64> = preds.iter().zip(&gts).map(|(p, g)| oracle_iou(*p, *g)).collect();
        let cles: Vec<f64> = preds
            .iter()
            .zip(&gts)
            .map(|(p, g)| ((p[0] + p[2] / 2.0) - (g[0] + g[2] / 2.0)).hypot((p[1] + p[3] / 2.0) - (g[1] + g[3] / 2.0)))
            .collect();
        let ncles: Vec<f64> = preds
            .iter()
            .zip(&gts)
            .map(|(p, g)| (((p[0] + p[2] / 2.0) - (g[0] + g[2] / 2.0)) / g[2]).hypot(((p[1] + p[3] / 2.0) - (g[1] + g[3] / 2.0)) / g[3]))
            .collect();
        let mean_iou = ious.iter().sum::<f64>() / n as f64;
        let (auc, mean_fraction) = sweep_auc(&ious, 1.0, 100, iou_pass);
        let (nauc, _) = sweep_auc(&ncles, 0.5, 100, |v, t| v < t);
        let p20 = cles.iter().filter(|&&c| c < 20.0).count() as f64 / n as f64;
        assert!((rep.success_auc - auc).abs() < 0.005);
        assert!((rep.success_auc - mean_fraction).abs() < 0.005);
        assert!((rep.success_auc - mean_iou).abs() <= 0.005 + 1e-12);
        assert!((rep.norm_precision - nauc).abs() < 0.005);
        assert!((rep.precision20 - p20).abs() < 1e-12);
        assert!((rep.mean_iou - mean_iou).abs() < 1e-9);
    }
}

#[test]
fn csv_outputs_state_the_conventions() {
    let gt = [BBox::from_xywh(0.0, 0.0, 10.0, 10.0); 2];
    let r = report(&gt, &gt).unwrap();
    let s = r.summary_csv();
    assert!(s.starts_with('#') && s.contains("cle < 20") && s.contains("iou > t"));
    assert!(s.contains("precision20,norm_precision,success_auc"));
    assert_eq!(r.frames_csv().lines().count(), 3);
}

fn boxes() -> impl Strategy<Value = [f64; 4]> {
    (-100.0f64..100.0, -100.0f64..100.0, 1.0f64..50.0, 1.0f64..50.0).prop_map(|(x, y, w, h)| [x, y, w, h])
}

proptest! {
    #[test]
    fn iou_symmetry_and_invariances(a in boxes(), b in boxes(), dx in -50.0f64..50.0, dy in -50.0f64..50.0, s in 0.1f64..10.0) {
        let (ba, bb) = (BBox::from_xywh(a[0], a[1], a[2], a[3]), BBox::from_xywh(b[0], b[1], b[2], b[3]));
        let v = iou(&ba, &bb);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&bb, &ba));
        prop_assert!((v - oracle_iou(a, b)).abs() < 1e-9);
        let t = |x: &BBox| BBox::new(x.cx + dx, x.cy + dy, x.w, x.h);
        prop_assert!((iou(&t(&ba), &t(&bb)) - v).abs() < 1e-9);
        let sc = |x: &BBox| BBox::new(x.cx * s, x.cy * s, x.w * s, x.h * s);
        prop_assert!((iou(&sc(&ba), &sc(&bb)) - v).abs() < 1e-9);
    }

    #[test]
    fn curves_are_monotone_and_auc_tracks_mean_iou(pairs in prop::collection::vec((boxes(), -30.0f64..30.0, 0.5f64..2.0), 1..30)) {
        let gts: Vec<BBox> = pairs.iter().map(|(g, _, _)| BBox::from_xywh(g[0], g[1], g[2], g[3])).collect();
        let preds: Vec<BBox> = pairs.iter().zip(&gts).map(|((_, d, s), g)| BBox::new(g.cx + d, g.cy - d / 2.0, g.w * s, g.h)).collect();
        let r = report(&preds, &gts).unwrap();
        prop_assert!(r.precision_curve.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.norm_precision_curve.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.success_curve.windows(2).all(|w| w[0] >= w[1]));
        for v in [r.precision20, r.norm_precision, r.success_auc, r.mean_iou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((r.success_auc - r.mean_iou).abs() <= 0.005 + 1e-12);
    }
}

#[test]
fn boxes_read_back_from_text_still_score_perfectly() {
    use sgdvit_core::sequence::{format_boxes, parse_boxes};
    let mut r = rng(31);
    let gts: Vec<BBox> = (0..200)
        .map(|_| BBox::from_xywh(r.random_range(0.0..300.0), r.random_range(0.0..200.0), r.random_range(1.0..90.0), r.random_range(1.0..90.0)))
        .collect();
    let back = parse_boxes(&format_boxes(&gts, None)).unwrap();
    let rep = report(&back, &gts).unwrap();
    assert_eq!(rep.success_auc, 1.0);
    assert!(rep.iou.iter().all(|&v| v == 1.0));
}
