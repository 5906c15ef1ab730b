mod common;

use common::tiny_config;
use sgdvit_core::config::TrainConfig;
use sgdvit_core::model::{Model, Variant};
use sgdvit_core::rng::stream;
use sgdvit_core::synth::{generate, SynthSpec};
use sgdvit_core::train::{jittered, TrainData, Trainer};
use sgdvit_core::CoreError;
use sgdvit_tensor::{log_space_lr, Tensor};

fn data(frames: usize) -> TrainData {
    let seq = generate(&SynthSpec { frames, ..SynthSpec::default() }).unwrap();
    TrainData::new(seq.frames, seq.gt).unwrap()
}

fn short(iterations: usize) -> TrainConfig {
    TrainConfig { iterations, eval_samples: 2, ..TrainConfig::default() }
}

#[test]
fn zero_iterations_leave_parameters_untouched() {
    let d = data(4);
    let (m, init) = Model::new::<f32>(tiny_config(Variant::SatDyn), 1).unwrap();
    let mut store = init.clone();
    let tr = Trainer { model: &m, data: &d, cfg: short(0), seed: 1 };
    let log = tr.run(&mut store, |_| {}).unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(log.initial_eval, log.final_eval);
    for (name, t) in init.iter() {
        assert_eq!(store.by_name(name).unwrap().data(), t.data(), "{name}");
    }
}

#[test]
fn same_seed_gives_identical_logs() {
    let d = data(4);
    let (m, init) = Model::new::<f32>(tiny_config(Variant::SatDyn), 2).unwrap();
    let run = |seed| {
        let mut store = init.clone();
        let tr = Trainer { model: &m, data: &d, cfg: short(3), seed };
        (tr.run(&mut store, |_| {}).unwrap(), store)
    };
    let (a, sa) = run(5);
    let (b, sb) = run(5);
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    for ((_, x), (_, y)) in sa.iter().zip(sb.iter()) {
        assert_eq!(x.data(), y.data());
    }
    let (c, _) = run(6);
    assert_ne!(a.rows, c.rows);
    assert_eq!(a.rows.len(), 3);
    for r in &a.rows {
        assert_eq!(r.lr, log_space_lr(1e-2, 1e-3, r.iteration - 1, 3));
        assert!(r.loss.is_finite() && r.grad_norm > 0.0);
        assert!((r.loss - (r.cls + 2.0 * r.reg)).abs() < 1e-3 * r.loss.max(1.0));
    }
    assert!(a.to_csv().starts_with("iteration,lr,loss,cls,reg,grad_norm\n"));
}

#[test]
fn nan_parameters_stop_training_with_a_numerical_error() {
    let d = data(3);
    let (m, mut store) = Model::new::<f32>(tiny_config(Variant::Sat), 3).unwrap();
    let id = store.id("heads.cls.1.bias").unwrap();
    *store.get_mut(id) = Tensor::full([1], f32::NAN).unwrap();
    let tr = Trainer { model: &m, data: &d, cfg: short(2), seed: 1 };
    let e = tr.run(&mut store, |_| {}).unwrap_err();
    assert!(matches!(e, CoreError::Numerical(_)), "{e}");
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn jitter_stays_within_its_ranges() {
    let d = data(5);
    let (m, _) = Model::new::<f32>(tiny_config(Variant::Sat), 4).unwrap();
    let cfg = TrainConfig::default();
    let mut r = stream(9, "jitter");
    for _ in 0..200 {
        let s = jittered(&m, &d, &cfg, &mut r);
        let b = d.gt[s.frame];
        let ctx = b.context_side();
        assert!((s.window.cx - b.cx).abs() <= cfg.shift * ctx);
        assert!((s.window.cy - b.cy).abs() <= cfg.shift * ctx);
        let ratio = s.window.side / m.geom.search_side(ctx);
        assert!(ratio >= (-cfg.scale).exp() - 1e-12 && ratio <= cfg.scale.exp() + 1e-12);
        assert_eq!(s.window.size, 287);
    }
}

#[test]
fn training_data_is_validated() {
    let seq = generate(&SynthSpec { frames: 3, ..SynthSpec::default() }).unwrap();
    assert!(TrainData::new(vec![], vec![]).is_err());
    assert!(TrainData::new(seq.frames.clone(), seq.gt[..2].to_vec()).is_err());
    let mut gt = seq.gt.clone();
    gt[1].w = 0.0;
    assert!(TrainData::new(seq.frames, gt).is_err());
    assert!(short(1).validate().is_ok());
    assert!(TrainConfig { lr: 0.0, ..short(1) }.validate().is_err());
}
