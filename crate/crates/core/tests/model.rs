mod common;

use std::collections::BTreeMap;

use common::{check_full_path, random, rng, tiny_config};
use sgdvit_core::checkpoint;
use sgdvit_core::embedding::MaskMode;
use sgdvit_core::model::{Model, Sampling, TemplateTensors, Variant};
use sgdvit_core::rng::stream;
use sgdvit_tensor::flops::kind;
use sgdvit_tensor::{ParamStore, Tape, Tensor};

fn inputs(seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    (random(&[1, 3, 127, 127], &mut r), random(&[1, 3, 287, 287], &mut r))
}

struct Run {
    cls: Vec<f64>,
    reg: Vec<f64>,
    tokens: usize,
    fine: usize,
    encoder_qk: u64,
    attention: u64,
}

fn run(model: &Model, s: &ParamStore<f64>, z: &Tensor<f64>, x: &Tensor<f64>, force: Option<&[bool]>) -> Run {
    let mut t = Tape::new();
    let (zv, xv) = (t.constant(z.clone()), t.constant(x.clone()));
    let tmpl = model.template(&mut t, s, zv).unwrap();
    let mut r = stream(0, "m");
    let out = model
        .search(&mut t, s, &tmpl, xv, Sampling { mode: MaskMode::Deterministic, force_fine: force, rng: &mut r })
        .unwrap();
    Run {
        cls: t.data(out.heads.cls).to_vec(),
        reg: t.data(out.heads.reg).to_vec(),
        tokens: out.tokens.map_or(0, |v| t.shape(v)[0]),
        fine: out.layout.as_ref().map_or(0, |l| l.fine_windows()),
        encoder_qk: out.stage_flops("encoder").get(kind::ATTN_QK),
        attention: out.total_flops().attention(),
    }
}

#[test]
fn heads_have_grid_shapes_for_every_variant() {
    let (z, x) = inputs(1);
    for v in Variant::ALL {
        let (m, s) = Model::new::<f64>(tiny_config(v), 1).unwrap();
        let r = run(&m, &s, &z, &x, None);
        assert_eq!(r.cls.len(), 256, "{v:?}");
        assert_eq!(r.reg.len(), 4 * 256);
        assert!(r.reg.iter().all(|&d| d >= 0.0));
        assert!(r.cls.iter().chain(&r.reg).all(|v| v.is_finite()));
    }
}

#[test]
fn baseline_has_no_attention() {
    let (m, s) = Model::new::<f64>(tiny_config(Variant::Baseline), 1).unwrap();
    assert!(s.iter().all(|(n, _)| !n.starts_with("sft") && !n.starts_with("sit") && !n.starts_with("mining")));
    let (z, x) = inputs(2);
    let r = run(&m, &s, &z, &x, None);
    assert_eq!(r.attention, 0);
    assert_eq!(r.tokens, 0);
}

#[test]
fn static_variant_uses_one_token_per_window() {
    let (m, s) = Model::new::<f64>(tiny_config(Variant::Sat), 1).unwrap();
    let (z, x) = inputs(3);
    let r = run(&m, &s, &z, &x, None);
    assert_eq!(r.tokens, m.cfg.windows());
    assert_eq!(r.fine, 0);
}

#[test]
fn dynamic_variant_follows_the_token_law() {
    let (m, s) = Model::new::<f64>(tiny_config(Variant::SatDyn), 4).unwrap();
    for seed in 0..3 {
        let (z, x) = inputs(10 + seed);
        let r = run(&m, &s, &z, &x, None);
        assert_eq!(r.tokens, m.cfg.windows() + 3 * r.fine);
    }
}

#[test]
fn static_and_dynamic_share_parameter_shapes() {
    let (_, a) = Model::new::<f64>(tiny_config(Variant::Sat), 5).unwrap();
    let (_, b) = Model::new::<f64>(tiny_config(Variant::SatDyn), 5).unwrap();
    let shapes = |s: &ParamStore<f64>| s.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect::<Vec<_>>();
    assert_eq!(shapes(&a), shapes(&b));
}

#[test]
fn all_salient_dynamic_matches_static_forced_fine() {
    let (dy, mut s) = Model::new::<f64>(tiny_config(Variant::SatDyn), 6).unwrap();
    let (st, _) = Model::new::<f64>(tiny_config(Variant::Sat), 6).unwrap();
    // a large bias on the saliency logit makes every cell salient
    let id = s.id("mining.m.bias").unwrap();
    *s.get_mut(id) = Tensor::full([1], 50.0).unwrap();
    let (z, x) = inputs(7);
    let a = run(&dy, &s, &z, &x, None);
    let all = vec![true; st.cfg.windows()];
    let b = run(&st, &s, &z, &x, Some(&all));
    assert_eq!(a.fine, st.cfg.windows());
    assert_eq!(a.tokens, 4 * st.cfg.windows());
    assert_eq!(a.cls, b.cls);
    assert_eq!(a.reg, b.reg);
}

#[test]
fn encoder_cost_grows_with_fine_windows() {
    let (m, s) = Model::new::<f64>(tiny_config(Variant::SatDyn), 8).unwrap();
    let (z, x) = inputs(9);
    let n = m.cfg.windows();
    let macs: Vec<u64> = [0, n / 2, n]
        .iter()
        .map(|&k| {
            let fine: Vec<bool> = (0..n).map(|i| i < k).collect();
            run(&m, &s, &z, &x, Some(&fine)).encoder_qk
        })
        .collect();
    assert!(macs[0] < macs[1] && macs[1] < macs[2]);
    assert_eq!(4 * macs[0], macs[2]);
    let g2 = (m.cfg.grid * m.cfg.grid) as u64;
    assert_eq!(macs[0], n as u64 * g2 * m.cfg.channels as u64);
}

#[test]
fn template_tensors_replay_on_a_new_tape() {
    let (m, s) = Model::new::<f64>(tiny_config(Variant::SatDyn), 10).unwrap();
    let (z, x) = inputs(11);
    let direct = run(&m, &s, &z, &x, None);
    let mut t = Tape::new();
    let zv = t.constant(z);
    let tv = m.template(&mut t, &s, zv).unwrap();
    let cached = TemplateTensors::capture(&t, &tv);
    let mut t = Tape::new();
    let tmpl = cached.replay(&mut t);
    let xv = t.constant(x);
    let out = m
        .search(&mut t, &s, &tmpl, xv, Sampling { mode: MaskMode::Deterministic, force_fine: None, rng: &mut stream(0, "m") })
        .unwrap();
    assert_eq!(t.data(out.heads.cls), direct.cls.as_slice());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let (m, s) = Model::new::<f64>(tiny_config(Variant::SatDyn), 12).unwrap();
    let mut extra = BTreeMap::new();
    extra.insert("note".to_string(), "round trip".to_string());
    checkpoint::save(&path, &m.cfg, &s, &extra).unwrap();
    let loaded = checkpoint::load::<f64>(&path).unwrap();
    assert_eq!(loaded.model.cfg, m.cfg);
    assert_eq!(loaded.meta["note"], "round trip");
    for (name, tensor) in s.iter() {
        assert_eq!(loaded.store.by_name(name).unwrap().data(), tensor.data(), "{name}");
    }
    let (z, x) = inputs(13);
    assert_eq!(run(&m, &s, &z, &x, None).cls, run(&loaded.model, &loaded.store, &z, &x, None).cls);
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(checkpoint::load::<f64>(&dir.path().join("missing.ckpt")).is_err());
    let path = dir.path().join("m.ckpt");
    let (m, _) = Model::new::<f64>(tiny_config(Variant::Sat), 1).unwrap();
    let (_, other) = Model::new::<f64>(tiny_config(Variant::Baseline), 1).unwrap();
    checkpoint::save(&path, &m.cfg, &other, &BTreeMap::new()).unwrap();
    assert!(checkpoint::load::<f64>(&path).is_err());
}

#[test]
fn full_path_gradients_match_finite_differences() {
    let (m, s) = Model::new::<f64>(tiny_config(Variant::SatDyn), 14).unwrap();
    let (z, x) = inputs(15);
    let fine: Vec<bool> = (0..m.cfg.windows()).map(|i| i % 3 == 1).collect();
    let checks = check_full_path(&m, &s, &z, &x, &fine, 20, 1e-5);
    assert_eq!(checks.len(), common::BLOCKS.len());
    for c in &checks {
        assert_eq!(c.coords, 20, "{}", c.block);
        assert!(c.max_rel_err < 1e-4, "{}: {}", c.block, c.max_rel_err);
        assert!(c.max_abs_grad > 0.0, "{}", c.block);
    }
}
