#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sgdvit_core::model::{ModelConfig, Variant};
use sgdvit_tensor::Tensor;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut Xoshiro256PlusPlus) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape.to_vec(), &v).unwrap()
}

/// Quadruple-loop convolution of `x: [cin, h, w]` with `w: [cout, cin, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    cin: usize,
    h: usize,
    wd: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b[o];
                for c in 0..cin {
                    for u in 0..k {
                        for v in 0..k {
                            let (y, xx) = ((i * stride + u) as isize - pad as isize, (j * stride + v) as isize - pad as isize);
                            if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                acc += x[(c * h + y as usize) * wd + xx as usize] * w[((o * cin + c) * k + u) * k + v];
                            }
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    (out, oh, ow)
}

/// Per-channel sliding inner product of `s: [c, sh, sw]` with `t: [c, th, tw]`.
pub fn naive_xcorr(s: &[f64], t: &[f64], c: usize, sh: usize, sw: usize, th: usize, tw: usize) -> Vec<f64> {
    let (oh, ow) = (sh - th + 1, sw - tw + 1);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for u in 0..th {
                    for v in 0..tw {
                        acc += s[(ch * sh + i + u) * sw + j + v] * t[(ch * th + u) * tw + v];
                    }
                }
                out[(ch * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

/// Triple-loop `softmax(q k^T / sqrt(d)) v`, row-major matrices.
#[allow(clippy::too_many_arguments)]
pub fn naive_attention(q: &[f64], k: &[f64], v: &[f64], nq: usize, nk: usize, c: usize, cv: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; nq * cv];
    for i in 0..nq {
        let scores: Vec<f64> =
            (0..nk).map(|j| (0..c).map(|x| q[i * c + x] * k[j * c + x]).sum::<f64>() / (d as f64).sqrt()).collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..nk {
            for x in 0..cv {
                out[i * cv + x] += e[j] / z * v[j * cv + x];
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Narrow network at the real crop sizes, cheap enough for f64 checks.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig { variant, backbone: [4, 6, 8, 8], channels: 12, heads: 2, ffn_mult: 2, ..ModelConfig::default() }
}

/// Unwraps the tensor error inside a core error, for closures handed to
/// the finite-difference checker.
pub fn te(e: sgdvit_core::CoreError) -> sgdvit_tensor::TensorError {
    match e {
        sgdvit_core::CoreError::Tensor(e) => e,
        e => panic!("unexpected error: {e}"),
    }
}

/// Parameter blocks of the full tracking path, by name prefix.
pub const BLOCKS: [&str; 7] = ["backbone.", "adjust.", "mining.", "embed.", "sft.encoder.", "sft.decoder.", "heads."];

pub struct BlockCheck {
    pub block: &'static str,
    pub coords: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

/// Loss of the full template + search + heads path with a fixed window
/// layout and the relaxed mask, so the forward is smooth in every parameter.
pub fn full_path_loss(
    model: &sgdvit_core::model::Model,
    store: &sgdvit_tensor::ParamStore<f64>,
    t: &mut sgdvit_tensor::Tape<f64>,
    z: &Tensor<f64>,
    x: &Tensor<f64>,
    fine: &[bool],
) -> sgdvit_tensor::Var {
    use sgdvit_core::embedding::MaskMode;
    use sgdvit_core::geometry::BBox;
    use sgdvit_core::loss::{toy_loss, GridTarget};
    use sgdvit_core::model::Sampling;
    let zv = t.input(z.clone());
    let xv = t.input(x.clone());
    let tmpl = model.template(t, store, zv).unwrap();
    let mut r = sgdvit_core::rng::stream(0, "check");
    let sampling = Sampling { mode: MaskMode::Relaxed, force_fine: Some(fine), rng: &mut r };
    let out = model.search(t, store, &tmpl, xv, sampling).unwrap();
    let target = GridTarget::new(BBox::new(7.3, 8.1, 4.2, 3.1), model.cfg.grid);
    toy_loss(t, &out.heads, &target).unwrap().total
}

/// Central differences on `coords` sampled scalars of every block against
/// one reverse pass.
pub fn check_full_path(
    model: &sgdvit_core::model::Model,
    store: &sgdvit_tensor::ParamStore<f64>,
    z: &Tensor<f64>,
    x: &Tensor<f64>,
    fine: &[bool],
    coords: usize,
    step: f64,
) -> Vec<BlockCheck> {
    use sgdvit_tensor::Tape;
    let mut grads = store.clone();
    grads.zero_grads();
    let mut t = Tape::new();
    let loss = full_path_loss(model, &grads, &mut t, z, x, fine);
    t.backward_into(loss, &mut grads).unwrap();
    let eval = |s: &sgdvit_tensor::ParamStore<f64>| {
        let mut t = Tape::new();
        let l = full_path_loss(model, s, &mut t, z, x, fine);
        t.data(l)[0]
    };
    let mut r = rng(0xb10c);
    let mut work = store.clone();
    let mut out = Vec::new();
    for block in BLOCKS {
        let ids: Vec<_> = store.ids().filter(|&id| store.name(id).starts_with(block)).collect();
        if ids.is_empty() {
            continue;
        }
        let total: usize = ids.iter().map(|&id| store.get(id).len()).sum();
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < coords.min(total) {
            picked.insert(r.random_range(0..total));
        }
        let mut check = BlockCheck { block, coords: picked.len(), max_rel_err: 0.0, max_abs_grad: 0.0 };
        for flat in picked {
            let (mut id, mut c) = (ids[0], flat);
            for &i in &ids {
                let n = store.get(i).len();
                if c < n {
                    id = i;
                    break;
                }
                c -= n;
            }
            let analytic = grads.get(id).grad().map_or(0.0, |g| g[c]);
            let x0 = store.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = x0 + step;
            let up = eval(&work);
            work.get_mut(id).data_mut()[c] = x0 - step;
            let down = eval(&work);
            work.get_mut(id).data_mut()[c] = x0;
            let numeric = (up - down) / (2.0 * step);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            check.max_rel_err = check.max_rel_err.max(rel);
            check.max_abs_grad = check.max_abs_grad.max(analytic.abs());
        }
        out.push(check);
    }
    out
}
