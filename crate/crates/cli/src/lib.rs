//! Commands behind the `sgdvit` binary. Every command is deterministic
//! given its configuration and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use sgdvit_core::config::RunConfig;
use sgdvit_core::embedding::MaskMode;
use sgdvit_core::geometry::{BBox, CropWindow};
use sgdvit_core::image::Image;
use sgdvit_core::metrics::{report, MetricReport};
use sgdvit_core::model::{Model, ModelConfig, Sampling, Variant};
use sgdvit_core::sequence::{format_boxes, parse_boxes, write_sequence, Sequence};
use sgdvit_core::synth::{generate, SynthSpec};
use sgdvit_core::tracker::{FrameResult, Tracker, TrackerConfig};
use sgdvit_core::train::{LogRow, TrainData, TrainLog, Trainer};
use sgdvit_core::{checkpoint, crop, rng, CoreError, Result};
use sgdvit_tensor::flops::kind;
use sgdvit_tensor::{ParamStore, Tape};

/// Precision of stored parameters and of every forward pass run here.
pub type Store = ParamStore<f32>;

pub const RESULTS_FILE: &str = "results.txt";
pub const CONFIDENCE_FILE: &str = "confidence.csv";
pub const DEFAULT_DENSITIES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CoreError::io(path, e))
}

/// Frames and boxes from `paths.sequence`, or generated from the spec at
/// `paths.synth`.
pub fn load_frames(cfg: &RunConfig) -> Result<(Vec<Image>, Vec<BBox>)> {
    if cfg.paths.sequence.is_some() {
        let seq = Sequence::open(cfg.existing("paths.sequence")?)?;
        if seq.gt.len() < seq.len() {
            return Err(CoreError::data(format!("{} frames but {} ground-truth boxes", seq.len(), seq.gt.len())));
        }
        let frames = (0..seq.len()).map(|i| seq.frame(i)).collect::<Result<Vec<_>>>()?;
        let gt = seq.gt[..frames.len()].to_vec();
        return Ok((frames, gt));
    }
    if cfg.paths.synth.is_some() {
        let spec = SynthSpec::parse(&read(cfg.existing("paths.synth")?)?)?;
        let seq = generate(&spec)?;
        return Ok((seq.frames, seq.gt));
    }
    Err(CoreError::config("paths.sequence", "either paths.sequence or paths.synth is required"))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub log: TrainLog,
    pub params: usize,
}

/// Loss log written next to a checkpoint.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.csv")
}

fn train_model(
    model_cfg: ModelConfig,
    cfg: &RunConfig,
    data: &TrainData,
    on_step: impl FnMut(&LogRow),
) -> Result<(Model, Store, TrainLog)> {
    let (model, mut store) = Model::new::<f32>(model_cfg, cfg.seed)?;
    let trainer = Trainer { model: &model, data, cfg: cfg.train.clone(), seed: cfg.seed };
    let log = trainer.run(&mut store, on_step)?;
    Ok((model, store, log))
}

/// Trains on the configured data and writes the checkpoint plus its loss log.
pub fn train_toy(cfg: &RunConfig, on_step: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    let ckpt = cfg.paths.checkpoint.clone().ok_or_else(|| CoreError::config("paths.checkpoint", "required but not set"))?;
    let (frames, gt) = load_frames(cfg)?;
    let data = TrainData::new(frames, gt)?;
    let (model, store, log) = train_model(cfg.model.clone(), cfg, &data, on_step)?;
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), cfg.seed.to_string());
    meta.insert("train.iterations".to_string(), cfg.train.iterations.to_string());
    meta.insert("train.initial_eval".to_string(), log.initial_eval.to_string());
    meta.insert("train.final_eval".to_string(), log.final_eval.to_string());
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    checkpoint::save(&ckpt, &model.cfg, &store, &meta)?;
    let log_path = log_path(&ckpt);
    write(&log_path, &log.to_csv())?;
    Ok(TrainOutcome { checkpoint: ckpt, log_path, params: store.num_scalars(), log })
}

/// One-pass tracking: initialized on frame 0 with `init`, never reset.
/// The first returned box is `init` itself.
pub fn track_frames(
    model: &Model,
    store: &Store,
    cfg: TrackerConfig,
    frames: &[Image],
    init: BBox,
) -> Result<(Vec<BBox>, Vec<FrameResult>)> {
    let mut tracker = Tracker::new(model, store, cfg)?;
    tracker.init(&frames[0], init)?;
    let mut boxes = vec![init];
    let mut results = Vec::with_capacity(frames.len().saturating_sub(1));
    for f in &frames[1..] {
        let r = tracker.track(f)?;
        boxes.push(r.bbox);
        results.push(r);
    }
    Ok((boxes, results))
}

pub fn confidence_csv(results: &[FrameResult]) -> String {
    let mut s = String::from("frame,confidence,row,col,tokens\n");
    for (i, r) in results.iter().enumerate() {
        let _ = writeln!(s, "{},{:.6},{},{},{}", i + 2, r.confidence, r.cell.0, r.cell.1, r.tokens);
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrackOutcome {
    pub results: PathBuf,
    pub confidence: PathBuf,
    pub boxes: Vec<BBox>,
    /// Present when the sequence has ground truth for every frame.
    pub report: Option<MetricReport>,
}

/// Tracks the sequence in `seq` with the checkpoint at `paths.checkpoint`,
/// writing `results.txt` and `confidence.csv` to `out`.
pub fn track(cfg: &RunConfig, seq: &Path, out: &Path) -> Result<TrackOutcome> {
    let loaded = checkpoint::load::<f32>(cfg.existing("paths.checkpoint")?)?;
    let sequence = Sequence::open(seq)?;
    let frames = (0..sequence.len()).map(|i| sequence.frame(i)).collect::<Result<Vec<_>>>()?;
    let (boxes, results) = track_frames(&loaded.model, &loaded.store, cfg.tracker, &frames, sequence.gt[0])?;
    let results_path = out.join(RESULTS_FILE);
    let confidence_path = out.join(CONFIDENCE_FILE);
    write(&results_path, &format_boxes(&boxes, Some(4)))?;
    write(&confidence_path, &confidence_csv(&results))?;
    let report = if sequence.gt.len() >= boxes.len() { Some(report(&boxes, &sequence.gt[..boxes.len()])?) } else { None };
    Ok(TrackOutcome { results: results_path, confidence: confidence_path, boxes, report })
}

pub const FRAMES_CSV: &str = "frames.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

/// Scores a results file against a ground-truth file of equal length.
pub fn eval(results: &Path, gt: &Path, out: Option<&Path>) -> Result<MetricReport> {
    let parse = |p: &Path| parse_boxes(&read(p)?).map_err(|e| CoreError::data(format!("{}: {e}", p.display())));
    let (preds, gts) = (parse(results)?, parse(gt)?);
    let rep = report(&preds, &gts)?;
    if let Some(dir) = out {
        write(&dir.join(FRAMES_CSV), &rep.frames_csv())?;
        write(&dir.join(SUMMARY_CSV), &rep.summary_csv())?;
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub density: f64,
    pub frame: usize,
    pub k_fine: usize,
    pub n_tokens: usize,
    pub encoder_qk_macs: u64,
    pub encoder_macs: u64,
    pub decoder_macs: u64,
    pub total_macs: u64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("density,frame,k_fine,n_tokens,encoder_qk_macs,encoder_macs,decoder_macs,total_macs\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.density, r.frame, r.k_fine, r.n_tokens, r.encoder_qk_macs, r.encoder_macs, r.decoder_macs, r.total_macs
        );
    }
    s
}

/// Forces `round(d * W_n)` fine windows per density `d`, picked by a seeded
/// permutation, and records the token count and multiply-accumulates of
/// each stage for search frames `1..=frames`.
///
/// The model comes from `paths.checkpoint` when it exists, otherwise it is
/// freshly initialized from the configuration.
pub fn bench_tokens(cfg: &RunConfig, densities: &[f64], frames: usize) -> Result<Vec<BenchRow>> {
    if let Some(d) = densities.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(CoreError::config("densities", format!("densities must lie in [0, 1], got {d}")));
    }
    let (model, store) = match cfg.paths.checkpoint.as_deref().filter(|p| p.exists()) {
        Some(p) => {
            let l = checkpoint::load::<f32>(p)?;
            (l.model, l.store)
        }
        None => Model::new::<f32>(cfg.model.clone(), cfg.seed)?,
    };
    if !matches!(model.cfg.variant, Variant::Sat | Variant::SatDyn) {
        return Err(CoreError::config("model.variant", "token benchmarks need a saliency variant (sat or sat_dyn)"));
    }
    let (images, gt) = if cfg.paths.sequence.is_some() || cfg.paths.synth.is_some() {
        load_frames(cfg)?
    } else {
        let seq = generate(&SynthSpec::default())?;
        (seq.frames, seq.gt)
    };
    if images.len() < 2 {
        return Err(CoreError::data("token benchmarks need at least two frames"));
    }
    let frames = frames.clamp(1, images.len() - 1);

    let windows = model.cfg.windows();
    let mut order: Vec<usize> = (0..windows).collect();
    order.shuffle(&mut rng::stream(cfg.seed, "bench.windows"));

    let b0 = gt[0];
    let zc = crop::crop::<f32>(
        &images[0],
        CropWindow { cx: b0.cx, cy: b0.cy, side: b0.context_side(), size: model.cfg.template_size },
    )?;
    let mut rows = Vec::new();
    for &d in densities {
        let k = (d * windows as f64).round() as usize;
        let mut fine = vec![false; windows];
        for &w in &order[..k] {
            fine[w] = true;
        }
        for f in 1..=frames {
            let b = gt[f];
            let side = model.geom.search_side(b.context_side());
            let xc = crop::crop::<f32>(&images[f], CropWindow { cx: b.cx, cy: b.cy, side, size: model.cfg.search_size })?;
            let mut t = Tape::inference();
            let zv = t.constant(zc.tensor.clone());
            let tmpl = model.template(&mut t, &store, zv)?;
            let xv = t.constant(xc.tensor);
            let mut r = rng::stream(cfg.seed, "bench.mask");
            let out = model.search(
                &mut t,
                &store,
                &tmpl,
                xv,
                Sampling { mode: MaskMode::Deterministic, force_fine: Some(&fine), rng: &mut r },
            )?;
            let encoder = out.stage_flops("encoder");
            rows.push(BenchRow {
                density: d,
                frame: f + 1,
                k_fine: k,
                n_tokens: out.layout.as_ref().map_or(0, |l| l.len()),
                encoder_qk_macs: encoder.get(kind::ATTN_QK),
                encoder_macs: encoder.total(),
                decoder_macs: out.stage_flops("decoder").total(),
                total_macs: out.total_flops().total(),
            });
        }
    }
    Ok(rows)
}

/// Generates the sequence described by the spec file into `out`, together
/// with a normalized copy of the spec.
pub fn synth(spec_path: &Path, out: &Path) -> Result<SynthSpec> {
    let spec = SynthSpec::parse(&read(spec_path)?)?;
    let seq = generate(&spec)?;
    write_sequence(out, &seq.frames, &seq.gt)?;
    write(&out.join("spec.txt"), &spec.serialize())?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub attention_params: usize,
    pub tokens: usize,
    pub attention_macs: u64,
    pub total_macs: u64,
    pub initial_eval: f64,
    pub final_eval: f64,
    pub mean_iou: f64,
    pub precision20: f64,
    pub success_auc: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "variant,params,attention_params,tokens,attention_macs,total_macs,initial_eval,final_eval,mean_iou,precision20,success_auc\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.variant.name(),
            r.params,
            r.attention_params,
            r.tokens,
            r.attention_macs,
            r.total_macs,
            r.initial_eval,
            r.final_eval,
            r.mean_iou,
            r.precision20,
            r.success_auc
        );
    }
    s
}

/// Parameters of the transformer stages.
pub fn is_attention_param(name: &str) -> bool {
    name.starts_with("sft.") || name.starts_with("sit.")
}

/// Trains and tracks every variant on the configured data with identical
/// settings, writing `ablation.csv` to `out`.
pub fn ablate(cfg: &RunConfig, out: &Path, mut progress: impl FnMut(Variant, &LogRow)) -> Result<Vec<AblationRow>> {
    let (frames, gt) = load_frames(cfg)?;
    let data = TrainData::new(frames.clone(), gt.clone())?;
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let (model, store, log) = train_model(ModelConfig { variant: v, ..cfg.model.clone() }, cfg, &data, |r| progress(v, r))?;
        let (boxes, results) = track_frames(&model, &store, cfg.tracker, &frames, gt[0])?;
        let rep = report(&boxes, &gt)?;

        let b = gt[0];
        let zc = crop::crop::<f32>(&frames[0], CropWindow { cx: b.cx, cy: b.cy, side: b.context_side(), size: model.cfg.template_size })?;
        let side = model.geom.search_side(b.context_side());
        let xc = crop::crop::<f32>(&frames[1.min(frames.len() - 1)], CropWindow { cx: b.cx, cy: b.cy, side, size: model.cfg.search_size })?;
        let mut t = Tape::inference();
        let zv = t.constant(zc.tensor);
        let tmpl = model.template(&mut t, &store, zv)?;
        let xv = t.constant(xc.tensor);
        let mut r = rng::stream(cfg.seed, "ablate.mask");
        let o = model.search(&mut t, &store, &tmpl, xv, Sampling { mode: MaskMode::Deterministic, force_fine: None, rng: &mut r })?;
        let flops = o.total_flops();

        rows.push(AblationRow {
            variant: v,
            params: store.num_scalars(),
            attention_params: store.iter().filter(|(n, _)| is_attention_param(n)).map(|(_, t)| t.len()).sum(),
            tokens: results.first().map_or(0, |r| r.tokens),
            attention_macs: flops.attention(),
            total_macs: flops.total(),
            initial_eval: log.initial_eval,
            final_eval: log.final_eval,
            mean_iou: rep.mean_iou,
            precision20: rep.precision20,
            success_auc: rep.success_auc,
        });
    }
    write(&out.join("ablation.csv"), &ablation_csv(&rows))?;
    Ok(rows)
}
