//! Toy-scale training on a single sequence.

use std::fmt::Write as _;

use rand::Rng as _;
use sgdvit_tensor::{log_space_lr, Element, ParamStore, Sgd, Tape};

use crate::config::TrainConfig;
use crate::crop::{crop, Crop};
use crate::embedding::MaskMode;
use crate::error::{CoreError, Result};
use crate::geometry::{BBox, CropWindow};
use crate::image::Image;
use crate::loss::{toy_loss, GridTarget};
use crate::model::{Model, Sampling, TemplateVars};
use crate::rng::{self, Rng};

/// Frames and boxes to train on. Frame 0 provides the template.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub frames: Vec<Image>,
    pub gt: Vec<BBox>,
}

impl TrainData {
    pub fn new(frames: Vec<Image>, gt: Vec<BBox>) -> Result<Self> {
        if frames.is_empty() || gt.len() < frames.len() {
            return Err(CoreError::data(format!("{} frames with {} boxes", frames.len(), gt.len())));
        }
        if let Some(i) = gt.iter().position(|b| !b.is_valid()) {
            return Err(CoreError::data(format!("degenerate box at frame {}", i + 1)));
        }
        Ok(TrainData { frames, gt })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub frame: usize,
    pub window: CropWindow,
}

/// A search window around frame `i`'s box, shifted and rescaled at random.
pub fn jittered(model: &Model, data: &TrainData, cfg: &TrainConfig, rng: &mut Rng) -> Sample {
    let frame = rng.random_range(0..data.frames.len());
    let b = data.gt[frame];
    let ctx = b.context_side();
    let mut u = || 2.0 * rng.random::<f64>() - 1.0;
    let (dx, dy, ds) = (u() * cfg.shift * ctx, u() * cfg.shift * ctx, (u() * cfg.scale).exp());
    let side = model.geom.search_side(ctx * ds);
    Sample { frame, window: CropWindow { cx: b.cx + dx, cy: b.cy + dy, side, size: model.cfg.search_size } }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    pub cls: f64,
    pub reg: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Mean loss over the fixed evaluation samples before training.
    pub initial_eval: f64,
    pub final_eval: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,lr,loss,cls,reg,grad_norm\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6e},{:.6},{:.6},{:.6},{:.6}", r.iteration, r.lr, r.loss, r.cls, r.reg, r.grad_norm);
        }
        s
    }

    pub fn ratio(&self) -> f64 {
        self.final_eval / self.initial_eval
    }
}

pub struct Trainer<'a> {
    pub model: &'a Model,
    pub data: &'a TrainData,
    pub cfg: TrainConfig,
    pub seed: u64,
}

struct Step {
    loss: f64,
    cls: f64,
    reg: f64,
}

impl<'a> Trainer<'a> {
    fn template_crop<T: Element>(&self) -> Result<Crop<T>> {
        let b = self.data.gt[0];
        let w = CropWindow { cx: b.cx, cy: b.cy, side: b.context_side(), size: self.model.cfg.template_size };
        crop(&self.data.frames[0], w)
    }

    /// Forward one sample on `t`, returning the loss variable's parts.
    fn forward<T: Element>(
        &self,
        t: &mut Tape<T>,
        store: &ParamStore<T>,
        z: &Crop<T>,
        s: &Sample,
        mode: MaskMode,
        rng: &mut Rng,
    ) -> Result<(sgdvit_tensor::Var, Step)> {
        let zv = t.constant(z.tensor.clone());
        let tmpl: TemplateVars = self.model.template(t, store, zv)?;
        let x = crop::<T>(&self.data.frames[s.frame], s.window)?;
        let xv = t.constant(x.tensor);
        let out = self.model.search(t, store, &tmpl, xv, Sampling { mode, force_fine: None, rng })?;
        let target = GridTarget::from_frame(&self.data.gt[s.frame], &s.window, &self.model.geom);
        let l = toy_loss(t, &out.heads, &target)?;
        let v = |t: &Tape<T>, x| t.data(x)[0].f64();
        let step = Step { loss: v(t, l.total), cls: v(t, l.cls), reg: l.reg.map_or(0.0, |r| v(t, r)) };
        Ok((l.total, step))
    }

    /// Mean deterministic loss over fixed jittered samples.
    pub fn eval_loss<T: Element>(&self, store: &ParamStore<T>) -> Result<f64> {
        let z = self.template_crop::<T>()?;
        let mut srng = rng::stream(self.seed, "train.eval");
        let mut mrng = rng::stream(self.seed, "train.eval.mask");
        let mut total = 0.0;
        for _ in 0..self.cfg.eval_samples {
            let s = jittered(self.model, self.data, &self.cfg, &mut srng);
            let mut t = Tape::inference();
            t.flops_mut().set_enabled(false);
            let (_, step) = self.forward(&mut t, store, &z, &s, MaskMode::Deterministic, &mut mrng)?;
            total += step.loss;
        }
        Ok(total / self.cfg.eval_samples as f64)
    }

    pub fn run<T: Element>(&self, store: &mut ParamStore<T>, mut on_step: impl FnMut(&LogRow)) -> Result<TrainLog> {
        self.cfg.validate()?;
        let z = self.template_crop::<T>()?;
        let mut log = TrainLog { initial_eval: self.eval_loss(store)?, ..TrainLog::default() };
        let mut sgd = Sgd::<T>::new(self.cfg.lr, self.cfg.momentum)?;
        let mut srng = rng::stream(self.seed, "train.samples");
        let mut grng = rng::stream(self.seed, "train.gumbel");
        let n = self.cfg.iterations;
        for it in 0..n {
            let s = jittered(self.model, self.data, &self.cfg, &mut srng);
            let mut t = Tape::new();
            t.flops_mut().set_enabled(false);
            let (loss, step) = self.forward(&mut t, store, &z, &s, MaskMode::Sample, &mut grng)?;
            if !step.loss.is_finite() {
                return Err(CoreError::Numerical(format!("loss is {} at iteration {}", step.loss, it + 1)));
            }
            store.zero_grads();
            t.backward_into(loss, store)?;
            store.fill_missing_grads();
            let norm = store.grad_norm();
            if !norm.is_finite() {
                return Err(CoreError::Numerical(format!("gradient norm is {norm} at iteration {}", it + 1)));
            }
            if self.cfg.clip > 0.0 && norm > self.cfg.clip {
                store.scale_grads(T::c(self.cfg.clip / norm));
            }
            sgd.learning_rate = log_space_lr(self.cfg.lr, self.cfg.lr_end, it, n);
            sgd.step(store)?;
            let row = LogRow { iteration: it + 1, lr: sgd.learning_rate, loss: step.loss, cls: step.cls, reg: step.reg, grad_norm: norm };
            on_step(&row);
            log.rows.push(row);
        }
        log.final_eval = self.eval_loss(store)?;
        Ok(log)
    }
}
