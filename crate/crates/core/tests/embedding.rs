mod common;

use common::{max_abs_diff, random, rng};
use proptest::prelude::*;
use sgdvit_core::embedding::{
    decide, detokenize, gumbel_binarize, token_count, window_means, Embedding, Level, MaskMode, TokenLayout,
};
use sgdvit_core::rng::stream;
use sgdvit_tensor::{ParamStore, Tape, Tensor};

fn constant_map(t: &mut Tape<f64>, g: usize, v: f64) -> sgdvit_tensor::Var {
    t.constant(Tensor::full([1, 1, g, g], v).unwrap())
}

#[test]
fn strong_logits_keep_every_cell() {
    let mut r = stream(1, "gumbel");
    let (mut ones, mut total) = (0usize, 0usize);
    for _ in 0..400 {
        let mut t = Tape::new();
        let m = constant_map(&mut t, 16, 10.0);
        let mask = gumbel_binarize(&mut t, m, 0.1, MaskMode::Sample, &mut r).unwrap();
        ones += mask.values.iter().filter(|&&v| v == 1.0).count();
        total += mask.values.len();
    }
    assert!(total >= 100_000);
    assert!(ones as f64 / total as f64 > 0.999);
}

#[test]
fn zero_logits_keep_half_the_cells() {
    let mut r = stream(2, "gumbel");
    let (mut ones, mut total) = (0usize, 0usize);
    for _ in 0..40 {
        let mut t = Tape::new();
        let m = constant_map(&mut t, 16, 0.0);
        let mask = gumbel_binarize(&mut t, m, 1.0, MaskMode::Sample, &mut r).unwrap();
        ones += mask.values.iter().filter(|&&v| v == 1.0).count();
        total += mask.values.len();
    }
    assert!(total >= 10_000);
    let rate = ones as f64 / total as f64;
    assert!((rate - 0.5).abs() < 0.02, "{rate}");
}

#[test]
fn masks_are_binary_reproducible_and_carry_gradient() {
    let m = random(&[1, 1, 16, 16], &mut rng(3));
    let draw = |seed| {
        let mut t = Tape::new();
        let mv = t.input(m.clone());
        let mask = gumbel_binarize(&mut t, mv, 0.7, MaskMode::Sample, &mut stream(seed, "gumbel")).unwrap();
        assert_eq!(t.data(mask.p), mask.values.as_slice());
        assert!(t.data(mask.soft).iter().all(|&p| p > 0.0 && p < 1.0));
        let w = t.constant(random(&[1, 1, 16, 16], &mut rng(4)));
        let l = t.mul(mask.p, w).unwrap();
        let l = t.sum(l);
        t.backward(l).unwrap();
        let g = t.grad(mv).unwrap().to_vec();
        (mask.values, g)
    };
    let (a, ga) = draw(9);
    let (b, _) = draw(9);
    let (c, _) = draw(10);
    assert!(a.iter().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(ga.iter().any(|&g| g != 0.0));
}

#[test]
fn deterministic_mode_thresholds_the_logit() {
    let vals: Vec<f64> = (0..16).map(|k| k as f64 - 7.5).collect();
    let mut t = Tape::<f64>::new();
    let m = t.constant(Tensor::from_f64([1, 1, 4, 4], &vals).unwrap());
    let mask = gumbel_binarize(&mut t, m, 1.0, MaskMode::Deterministic, &mut stream(0, "g")).unwrap();
    let want: Vec<f64> = vals.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    assert_eq!(mask.values, want);
}

#[test]
fn window_decisions() {
    let (g, w) = (16, 4);
    assert!(decide(&window_means(&vec![0.0; 256], g, w).unwrap(), 0.5).iter().all(|&f| !f));
    assert!(decide(&window_means(&vec![1.0; 256], g, w).unwrap(), 0.5).iter().all(|&f| f));
    let block: Vec<f64> = (0..256).map(|k| if k / 16 < 4 && k % 16 < 4 { 1.0 } else { 0.0 }).collect();
    let fine = decide(&window_means(&block, g, w).unwrap(), 0.5);
    assert_eq!(fine.iter().filter(|&&f| f).count(), 1);
    assert!(fine[0]);
    // mean exactly at the threshold counts as fine
    let half: Vec<f64> = (0..256).map(|k| if k % 16 % 4 < 2 { 1.0 } else { 0.0 }).collect();
    assert!(decide(&window_means(&half, g, w).unwrap(), 0.5).iter().all(|&f| f));
}

#[test]
fn token_count_law_for_every_k() {
    for k in 0..=16 {
        let fine: Vec<bool> = (0..16).map(|i| i < k).collect();
        let layout = TokenLayout::new(16, 4, &fine).unwrap();
        assert_eq!(layout.len(), 16 + 3 * k);
        assert_eq!(token_count(16, k), 16 + 3 * k);
        layout.owners().unwrap();
    }
    let fine: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
    assert_eq!(TokenLayout::new(16, 4, &fine).unwrap().len(), 10 + 6 * 4);
}

#[test]
fn tokens_are_ordered_by_window_then_sub_index() {
    let fine = [false, true, false, false];
    let layout = TokenLayout::new(8, 4, &fine).unwrap();
    let order: Vec<(usize, Level, usize)> = layout.origins.iter().map(|o| (o.window, o.level, o.sub)).collect();
    assert_eq!(
        order,
        vec![
            (0, Level::Coarse, 0),
            (1, Level::Fine, 0),
            (1, Level::Fine, 1),
            (1, Level::Fine, 2),
            (1, Level::Fine, 3),
            (2, Level::Coarse, 0),
            (3, Level::Coarse, 0)
        ]
    );
    assert_eq!(layout.centers()[2], (0.5, 6.5));
}

#[test]
fn detokenize_broadcasts_and_tiles() {
    let fine: Vec<bool> = (0..16).map(|i| i % 5 == 1).collect();
    let layout = TokenLayout::new(16, 4, &fine).unwrap();
    let n = layout.len();
    let mut t = Tape::<f64>::new();
    let v = [0.25, -1.5, 3.0];
    let tokens: Vec<f64> = (0..n).flat_map(|_| v).collect();
    let tv = t.constant(Tensor::from_f64([n, 3], &tokens).unwrap());
    let map = detokenize(&mut t, tv, &layout).unwrap();
    for (c, plane) in t.data(map).chunks(256).enumerate() {
        assert!(plane.iter().all(|&x| x == v[c]));
    }
    let ones = t.constant(Tensor::ones([n, 1]).unwrap());
    let map = detokenize(&mut t, ones, &layout).unwrap();
    assert_eq!(t.data(map).iter().sum::<f64>(), 256.0);
    let inv: Vec<f64> = layout.origins.iter().map(|o| 1.0 / layout.cells(o).len() as f64).collect();
    let inv = t.constant(Tensor::from_f64([n, 1], &inv).unwrap());
    let map = detokenize(&mut t, inv, &layout).unwrap();
    assert!((t.data(map).iter().sum::<f64>() - n as f64).abs() < 1e-9);
}

#[test]
fn broken_tilings_are_errors() {
    let mut layout = TokenLayout::new(8, 4, &[false; 4]).unwrap();
    layout.origins[1] = layout.origins[0];
    assert!(layout.owners().is_err());
    let mut t = Tape::<f64>::new();
    let tv = t.constant(Tensor::zeros([4, 2]).unwrap());
    assert!(detokenize(&mut t, tv, &layout).is_err());
    layout.origins.pop();
    assert!(layout.owners().is_err());
}

/// Projections that average each channel over the token footprint.
fn averaging_embedding(c: usize, window: usize) -> (Embedding, ParamStore<f64>) {
    let mut s = ParamStore::new();
    let e = Embedding::new(&mut s, c, window, &mut stream(0, "init")).unwrap();
    for (proj, side) in [(&e.coarse, window), (&e.fine, window / 2)] {
        let cells = side * side;
        let mut w = vec![0.0; cells * c * c];
        for cell in 0..cells {
            for ch in 0..c {
                w[(cell * c + ch) * c + ch] = 1.0 / cells as f64;
            }
        }
        *s.get_mut(proj.weight) = Tensor::from_f64([cells * c, c], &w).unwrap();
    }
    (e, s)
}

#[test]
fn window_constant_features_survive_embed_and_detokenize() {
    let (c, g, w) = (3, 8, 4);
    let (e, s) = averaging_embedding(c, w);
    let value = |ch: usize, cell: usize| (ch * 10 + (cell / g / w) * 2 + (cell % g) / w) as f64;
    let feat: Vec<f64> = (0..c).flat_map(|ch| (0..g * g).map(move |cell| value(ch, cell))).collect();
    for fine in [[false; 4], [true; 4], [true, false, false, true]] {
        let layout = TokenLayout::new(g, w, &fine).unwrap();
        let mut t = Tape::new();
        let f = t.constant(Tensor::from_f64([1, c, g, g], &feat).unwrap());
        let tokens = e.forward(&mut t, &s, f, &layout, None, None).unwrap();
        assert_eq!(t.shape(tokens), [layout.len(), c]);
        let back = detokenize(&mut t, tokens, &layout).unwrap();
        assert!(max_abs_diff(t.data(back), &feat) < 1e-12);
    }
}

#[test]
fn embedding_is_deterministic_given_mask_and_seed() {
    let (c, g, w) = (4, 16, 4);
    let mut s = ParamStore::<f64>::new();
    let e = Embedding::new(&mut s, c, w, &mut stream(1, "init")).unwrap();
    let feat = random(&[1, c, g, g], &mut rng(5));
    let m = random(&[1, 1, g, g], &mut rng(6));
    let run = || {
        let mut t = Tape::new();
        let mv = t.constant(m.clone());
        let mask = gumbel_binarize(&mut t, mv, 1.0, MaskMode::Sample, &mut stream(3, "g")).unwrap();
        let fine = decide(&window_means(&mask.values, g, w).unwrap(), 0.5);
        let layout = TokenLayout::new(g, w, &fine).unwrap();
        let f = t.constant(feat.clone());
        let tok = e.forward(&mut t, &s, f, &layout, Some(mask.p), Some(32.0)).unwrap();
        (layout, t.value(tok).clone())
    };
    let (la, ta) = run();
    let (lb, tb) = run();
    assert_eq!(la, lb);
    assert_eq!(ta.data(), tb.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn footprints_partition_the_grid(bits in any::<u64>(), pick in 0usize..3) {
        let (g, w) = [(16, 4), (8, 2), (12, 4)][pick];
        let n = (g / w) * (g / w);
        let fine: Vec<bool> = (0..n).map(|i| bits >> (i % 64) & 1 == 1).collect();
        let layout = TokenLayout::new(g, w, &fine).unwrap();
        let mut cover = vec![0u32; g * g];
        for o in &layout.origins {
            for cell in layout.cells(o) {
                cover[cell] += 1;
            }
        }
        prop_assert!(cover.iter().all(|&c| c == 1));
        let k = fine.iter().filter(|&&f| f).count();
        prop_assert_eq!(layout.len(), n + 3 * k);
    }
}
