mod common;

use common::{max_abs_diff, random, rng, te};
use sgdvit_core::rng::stream;
use sgdvit_core::sft::{Sft, SftConfig};
use sgdvit_tensor::check::{check_inputs, check_params, CheckConfig};
use sgdvit_tensor::flops::kind;
use sgdvit_tensor::{ParamStore, Tape, Tensor};

const C: usize = 8;

fn config() -> SftConfig {
    SftConfig { dim: C, heads: 2, ffn_hidden: 16, encoder_depth: 1, decoder_depth: 1, tie_qk: false }
}

fn build(seed: u64) -> (Sft, ParamStore<f64>) {
    let mut s = ParamStore::new();
    let sft = Sft::new(&mut s, config(), &mut stream(seed, "sft")).unwrap();
    (sft, s)
}

fn zero(s: &mut ParamStore<f64>, name: &str) {
    let id = s.id(name).unwrap();
    let shape = s.get(id).shape().to_vec();
    *s.get_mut(id) = Tensor::zeros(shape).unwrap();
}

/// Row-wise standardization with unit scale and zero shift.
fn norm_rows(x: &[f64], c: usize) -> Vec<f64> {
    x.chunks(c)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            row.iter().map(move |v| (v - mean) / (var + 1e-5).sqrt()).collect::<Vec<_>>()
        })
        .collect()
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|x| a[i * k + x] * b[x * m + j]).sum();
        }
    }
    out
}

#[test]
fn encoder_with_one_key_adds_the_projected_value() {
    let (sft, s) = build(1);
    let mut r = rng(1);
    let (m3, m2) = (random(&[5, C], &mut r), random(&[1, C], &mut r));
    let p = |n: &str| s.by_name(n).unwrap().data().to_vec();
    let cn = C / 2;
    let mut cat = vec![0.0; C];
    for j in 0..2 {
        cat[j * cn..(j + 1) * cn].copy_from_slice(&matmul(m2.data(), &p(&format!("sft.encoder.0.mha.w3.{j}")), 1, C, cn));
    }
    let a = matmul(&cat, &p("sft.encoder.0.mha.wc"), 1, C, C);
    let resid: Vec<f64> = m3.data().iter().enumerate().map(|(i, v)| v + a[i % C]).collect();
    let want = norm_rows(&resid, C);
    let mut t = Tape::new();
    let (q, kv) = (t.constant(m3), t.constant(m2));
    let y = sft.encode(&mut t, &s, q, kv).unwrap();
    assert!(max_abs_diff(t.data(y), &want) < 1e-9);
}

#[test]
fn output_keeps_the_query_token_count() {
    let (sft, s) = build(2);
    let mut r = rng(2);
    let mut t = Tape::new();
    let m3 = t.constant(random(&[31, C], &mut r));
    let m2 = t.constant(random(&[256, C], &mut r));
    let m1 = t.constant(random(&[36, C], &mut r));
    let m4 = sft.encode(&mut t, &s, m3, m2).unwrap();
    let mo = sft.decode(&mut t, &s, m4, m1).unwrap();
    assert_eq!(t.shape(m4), [31, C]);
    assert_eq!(t.shape(mo), [31, C]);
    assert!(t.data(mo).iter().all(|v| v.is_finite()));
}

#[test]
fn zeroed_sublayers_reduce_to_norms() {
    let (sft, mut s) = build(3);
    zero(&mut s, "sft.encoder.0.mha.wc");
    zero(&mut s, "sft.decoder.0.mha.wc");
    zero(&mut s, "sft.decoder.0.ffn.fc2.weight");
    zero(&mut s, "sft.decoder.0.ffn.fc2.bias");
    let mut r = rng(3);
    let (m3, m2, m1) = (random(&[7, C], &mut r), random(&[16, C], &mut r), random(&[9, C], &mut r));
    let mut t = Tape::new();
    let (a, b, c) = (t.constant(m3.clone()), t.constant(m2), t.constant(m1));
    let m4 = sft.encode(&mut t, &s, a, b).unwrap();
    let n1 = norm_rows(m3.data(), C);
    assert!(max_abs_diff(t.data(m4), &n1) < 1e-12);
    let mo = sft.decode(&mut t, &s, m4, c).unwrap();
    let want = norm_rows(&norm_rows(&n1, C), C);
    assert!(max_abs_diff(t.data(mo), &want) < 1e-9);
}

#[test]
fn decoder_ignores_template_token_order() {
    let (sft, s) = build(4);
    let mut r = rng(4);
    let (m4, m1) = (random(&[6, C], &mut r), random(&[9, C], &mut r));
    let perm = [4, 0, 8, 2, 7, 1, 3, 6, 5];
    let shuffled: Vec<f64> = perm.iter().flat_map(|&i| m1.data()[i * C..(i + 1) * C].to_vec()).collect();
    let run = |m1: Tensor<f64>| {
        let mut t = Tape::new();
        let (a, b) = (t.constant(m4.clone()), t.constant(m1));
        let y = sft.decode(&mut t, &s, a, b).unwrap();
        t.data(y).to_vec()
    };
    let shuffled = Tensor::from_f64([9, C], &shuffled).unwrap();
    assert!(max_abs_diff(&run(m1), &run(shuffled)) < 1e-12);
}

#[test]
fn gradients_reach_every_input_and_parameter() {
    let (sft, s) = build(5);
    let mut r = rng(5);
    let inputs = [random(&[5, C], &mut r), random(&[12, C], &mut r), random(&[4, C], &mut r)];
    let w = random(&[5, C], &mut r);
    let loss = |t: &mut Tape<f64>, st: &ParamStore<f64>, v: &[sgdvit_tensor::Var]| {
        let m4 = sft.encode(t, st, v[0], v[1]).map_err(te)?;
        let mo = sft.decode(t, st, m4, v[2]).map_err(te)?;
        let wv = t.constant(w.clone());
        let p = t.mul(mo, wv)?;
        Ok(t.sum(p))
    };
    let cfg = CheckConfig::default();
    let rep = check_inputs(&inputs, &cfg, |t, v| loss(t, &s, v)).unwrap();
    assert!(rep.max_rel_err() < 1e-5, "{:?}", rep.worst);
    assert!(rep.max_abs_grad > 1e-3);
    let names: Vec<String> = s.iter().map(|(n, _)| n.to_string()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let rep = check_params(&s, &names, &cfg, |t, st| {
        let v: Vec<_> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        loss(t, st, &v)
    })
    .unwrap();
    assert!(rep.max_rel_err() < 1e-5, "{:?}", rep.worst);
}

#[test]
fn encoder_has_no_feed_forward() {
    let (_, s) = build(6);
    let enc: Vec<&str> = s.iter().map(|(n, _)| n).filter(|n| n.starts_with("sft.encoder")).collect();
    assert!(!enc.is_empty());
    assert!(enc.iter().all(|n| !n.contains("ffn")));
    assert!(s.iter().any(|(n, _)| n.starts_with("sft.decoder.0.ffn")));
}

#[test]
fn encoder_score_macs_scale_with_queries_times_keys() {
    let (sft, s) = build(7);
    let mut r = rng(7);
    for n_t in [16, 31, 64] {
        let mut t = Tape::new();
        let m3 = t.constant(random(&[n_t, C], &mut r));
        let m2 = t.constant(random(&[256, C], &mut r));
        t.flops_mut().begin("enc");
        sft.encode(&mut t, &s, m3, m2).unwrap();
        let rep = t.flops_mut().end("enc").unwrap();
        assert_eq!(rep.get(kind::ATTN_QK), (n_t * 256 * C) as u64);
        assert_eq!(rep.get(kind::ATTN_AV), (n_t * 256 * C) as u64);
    }
}

#[test]
fn width_must_split_across_heads() {
    let mut s = ParamStore::<f64>::new();
    let cfg = SftConfig { heads: 3, ..config() };
    assert!(Sft::new(&mut s, cfg, &mut stream(0, "sft")).is_err());
}
