//! Full tracker network and its ablation variants.

use std::fmt;
use std::str::FromStr;

use sgdvit_tensor::{Element, FlopReport, ParamStore, Tape, Tensor, Var};

use crate::backbone::{resample_square, AdjustNet, Backbone};
use crate::embedding::{decide, detokenize, gumbel_binarize, window_means, Embedding, Mask, MaskMode, TokenLayout};
use crate::error::{CoreError, Result};
use crate::geometry::GridGeometry;
use crate::heads::{HeadOutputs, Heads};
use crate::mining::{cross_correlate, MlpInit, SaliencyArtifacts, SaliencyMining};
use crate::nn::sinusoid_2d;
use crate::rng::{self, Rng};
use crate::sft::{Sft, SftConfig, StandardEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Heads directly on the similarity map.
    Baseline,
    /// Conventional transformer over similarity-map tokens.
    Sit,
    /// Saliency transformer with uniform coarse tokens.
    Sat,
    /// Saliency transformer with dynamic tokens (full model).
    SatDyn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Sit, Variant::Sat, Variant::SatDyn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Sit => "sit",
            Variant::Sat => "sat",
            Variant::SatDyn => "sat_dyn",
        }
    }

    fn uses_saliency(self) -> bool {
        matches!(self, Variant::Sat | Variant::SatDyn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::config("model.variant", format!("unknown variant {s:?} (baseline, sit, sat, sat_dyn)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Widths of the first four backbone convs; the fifth is `channels`.
    pub backbone: [usize; 4],
    pub channels: usize,
    pub heads: usize,
    pub grid: usize,
    pub window: usize,
    pub theta: f64,
    pub tau: f64,
    pub ffn_mult: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub posenc: bool,
    pub pos_temperature: f64,
    pub tie_qk: bool,
    pub mlp_init: MlpInit,
    /// Add the grid-level input map to the detokenized transformer output
    /// before the heads.
    pub head_skip: bool,
    pub cls_bias: f64,
    pub reg_init: f64,
    pub template_size: usize,
    pub search_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::SatDyn,
            backbone: [48, 96, 192, 192],
            channels: 96,
            heads: 4,
            grid: 16,
            window: 4,
            theta: 0.5,
            tau: 1.0,
            ffn_mult: 4,
            encoder_depth: 1,
            decoder_depth: 1,
            posenc: true,
            pos_temperature: 32.0,
            tie_qk: true,
            mlp_init: MlpInit::Identity,
            head_skip: true,
            cls_bias: -2.0,
            reg_init: 3.0,
            template_size: 127,
            search_size: 287,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: String| Err(CoreError::config(key, msg));
        if !(0.0..=1.0).contains(&self.theta) {
            return err("model.theta", format!("must lie in [0, 1], got {}", self.theta));
        }
        if !(self.tau > 0.0) {
            return err("model.tau", format!("must be positive, got {}", self.tau));
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return err("model.heads", format!("{} channels not divisible by {} heads", self.channels, self.heads));
        }
        if self.posenc && !self.channels.is_multiple_of(4) {
            return err("model.channels", format!("positional encoding needs a multiple of 4, got {}", self.channels));
        }
        if self.window == 0 || !self.window.is_multiple_of(2) || !self.grid.is_multiple_of(self.window) {
            return err("model.window", format!("window {} must be even and divide grid {}", self.window, self.grid));
        }
        if self.backbone.contains(&0) || self.channels < 3 {
            return err("model.backbone", "conv widths must be positive and channels at least 3".into());
        }
        if !(self.pos_temperature > 1.0) {
            return err("model.pos_temperature", format!("must exceed 1, got {}", self.pos_temperature));
        }
        Ok(())
    }

    pub fn windows(&self) -> usize {
        (self.grid / self.window).pow(2)
    }
}

/// Template-side results, either live on a tape (training) or replayed
/// from cached tensors (tracking).
#[derive(Debug, Clone, Copy)]
pub struct TemplateVars {
    /// `[1, C, T, T]` backbone features.
    pub feat: Var,
    /// `[T^2, C]` adjusted template tokens, positional encoding included.
    pub tokens: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct TemplateTensors<T> {
    pub feat: Tensor<T>,
    pub tokens: Option<Tensor<T>>,
}

impl<T: Element> TemplateTensors<T> {
    pub fn capture(t: &Tape<T>, v: &TemplateVars) -> Self {
        TemplateTensors { feat: t.value(v.feat).clone(), tokens: v.tokens.map(|x| t.value(x).clone()) }
    }

    pub fn replay(&self, t: &mut Tape<T>) -> TemplateVars {
        TemplateVars { feat: t.constant(self.feat.clone()), tokens: self.tokens.as_ref().map(|x| t.constant(x.clone())) }
    }
}

/// How the mask is drawn and whether window levels are imposed.
pub struct Sampling<'a> {
    pub mode: MaskMode,
    /// Overrides the per-window levels (row-major).
    pub force_fine: Option<&'a [bool]>,
    pub rng: &'a mut Rng,
}

#[derive(Debug, Clone)]
pub struct SearchOutputs {
    pub heads: HeadOutputs,
    /// `[1, C, S, S]` similarity map.
    pub s1: Var,
    pub saliency: Option<SaliencyArtifacts>,
    /// `[1, 1, G, G]` saliency map on the grid.
    pub saliency_grid: Option<Var>,
    pub mask: Option<Mask>,
    pub layout: Option<TokenLayout>,
    pub tokens: Option<Var>,
    pub encoded: Option<Var>,
    pub decoded: Option<Var>,
    /// Multiply-accumulate counts per pipeline stage.
    pub flops: Vec<(&'static str, FlopReport)>,
}

impl SearchOutputs {
    pub fn stage_flops(&self, stage: &str) -> FlopReport {
        self.flops.iter().find(|(s, _)| *s == stage).map(|(_, r)| r.clone()).unwrap_or_default()
    }

    pub fn total_flops(&self) -> FlopReport {
        let mut all = FlopReport::default();
        for (_, r) in &self.flops {
            all.merge(r);
        }
        all
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub geom: GridGeometry,
    pub backbone: Backbone,
    pub adjust: Option<AdjustNet>,
    pub mining: Option<SaliencyMining>,
    pub embed: Option<Embedding>,
    pub sit: Option<StandardEncoder>,
    pub sft: Option<Sft>,
    pub heads: Heads,
}

impl Model {
    /// Builds the network for `cfg` and its freshly initialized parameters.
    pub fn new<T: Element>(cfg: ModelConfig, seed: u64) -> Result<(Model, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = rng::stream(seed, "init");
        let c = cfg.channels;
        let [w1, w2, w3, w4] = cfg.backbone;
        let backbone = Backbone::new(&mut store, [w1, w2, w3, w4, c], cfg.template_size, cfg.search_size, &mut rng)?;
        let geom = GridGeometry::new(&backbone, cfg.grid)?;
        let v = cfg.variant;
        let adjust = if v == Variant::Baseline { None } else { Some(AdjustNet::new(&mut store, c, &mut rng)?) };
        let mining = if v.uses_saliency() {
            Some(SaliencyMining::new(&mut store, geom.sim, c, cfg.mlp_init, &mut rng)?)
        } else {
            None
        };
        let embed = if v.uses_saliency() { Some(Embedding::new(&mut store, c, cfg.window, &mut rng)?) } else { None };
        let sft_cfg = SftConfig {
            dim: c,
            heads: cfg.heads,
            ffn_hidden: cfg.ffn_mult * c,
            encoder_depth: cfg.encoder_depth,
            decoder_depth: cfg.decoder_depth,
            tie_qk: cfg.tie_qk,
        };
        let sit = if v == Variant::Sit { Some(StandardEncoder::new(&mut store, sft_cfg, &mut rng)?) } else { None };
        let sft = match v {
            Variant::Baseline => None,
            Variant::Sit => Some(Sft::new(&mut store, SftConfig { encoder_depth: 0, ..sft_cfg }, &mut rng)?),
            Variant::Sat | Variant::SatDyn => Some(Sft::new(&mut store, sft_cfg, &mut rng)?),
        };
        let heads = Heads::new(&mut store, c, cfg.cls_bias, cfg.reg_init, &mut rng)?;
        Ok((Model { cfg, geom, backbone, adjust, mining, embed, sit, sft, heads }, store))
    }

    fn pos_temperature(&self) -> Option<f64> {
        self.cfg.posenc.then_some(self.cfg.pos_temperature)
    }

    fn add_pos<T: Element>(&self, t: &mut Tape<T>, tokens: Var, coords: &[(f64, f64)]) -> Result<Var> {
        match self.pos_temperature() {
            Some(temp) => {
                let pos = t.constant(sinusoid_2d(coords, self.cfg.channels, temp)?);
                Ok(t.add(tokens, pos)?)
            }
            None => Ok(tokens),
        }
    }

    /// Grid cells in row-major order as `(y, x)` coordinates.
    fn grid_coords(&self) -> Vec<(f64, f64)> {
        let g = self.cfg.grid;
        (0..g * g).map(|i| ((i / g) as f64, (i % g) as f64)).collect()
    }

    /// `[1, C, H, W] -> [H*W, C]`.
    fn to_tokens<T: Element>(t: &mut Tape<T>, map: Var) -> Result<Var> {
        let [1, c, h, w] = *t.shape(map) else {
            return Err(sgdvit_tensor::TensorError::invalid("to_tokens", format!("{:?}", t.shape(map))).into());
        };
        let m = t.reshape(map, &[c, h * w])?;
        Ok(t.transpose(m)?)
    }

    /// `[H*W, C] -> [1, C, H, W]`.
    fn to_map<T: Element>(t: &mut Tape<T>, tokens: Var, side: usize) -> Result<Var> {
        let c = t.shape(tokens)[1];
        let m = t.transpose(tokens)?;
        Ok(t.reshape(m, &[1, c, side, side])?)
    }

    /// Template branch for `z: [1, 3, 127, 127]`.
    pub fn template<T: Element>(&self, t: &mut Tape<T>, s: &ParamStore<T>, z: Var) -> Result<TemplateVars> {
        let feat = self.backbone.forward(t, s, z)?;
        let tokens = match &self.adjust {
            Some(adjust) => {
                let adj = adjust.forward(t, s, feat)?;
                let tokens = Self::to_tokens(t, adj)?;
                let n = self.geom.template_feat;
                let coords: Vec<(f64, f64)> = (0..n * n)
                    .map(|i| {
                        (self.geom.template_cell_to_grid((i / n) as f64), self.geom.template_cell_to_grid((i % n) as f64))
                    })
                    .collect();
                Some(self.add_pos(t, tokens, &coords)?)
            }
            None => None,
        };
        Ok(TemplateVars { feat, tokens })
    }

    /// Search branch for `x: [1, 3, 287, 287]` against a template.
    pub fn search<T: Element>(
        &self,
        t: &mut Tape<T>,
        s: &ParamStore<T>,
        tmpl: &TemplateVars,
        x: Var,
        sampling: Sampling<'_>,
    ) -> Result<SearchOutputs> {
        let (g, sim) = (self.cfg.grid, self.geom.sim);
        let mut flops = Vec::new();
        let mut stage = |t: &mut Tape<T>, name: &'static str, open: bool| -> Result<()> {
            if open {
                t.flops_mut().begin(name);
            } else {
                flops.push((name, t.flops_mut().end(name)?));
            }
            Ok(())
        };

        stage(t, "backbone", true)?;
        let fx = self.backbone.forward(t, s, x)?;
        let s1 = cross_correlate(t, fx, tmpl.feat)?;
        stage(t, "backbone", false)?;
        let last = (sim - 1) as f64;

        let mut out = SearchOutputs {
            heads: HeadOutputs { cls: s1, reg: s1 },
            s1,
            saliency: None,
            saliency_grid: None,
            mask: None,
            layout: None,
            tokens: None,
            encoded: None,
            decoded: None,
            flops: Vec::new(),
        };

        let features = match self.cfg.variant {
            Variant::Baseline => resample_square(t, s1, g, 0.0, last)?,
            Variant::Sit => {
                let (enc, sft) = (self.sit.as_ref().expect("sit encoder"), self.sft.as_ref().expect("decoder"));
                let m1 = tmpl.tokens.ok_or_else(|| CoreError::data("template tokens missing"))?;
                let s1g = resample_square(t, s1, g, 0.0, last)?;
                let tokens = Self::to_tokens(t, s1g)?;
                let tokens = self.add_pos(t, tokens, &self.grid_coords())?;
                stage(t, "encoder", true)?;
                let m4 = enc.forward(t, s, tokens)?;
                stage(t, "encoder", false)?;
                stage(t, "decoder", true)?;
                let mo = sft.decode(t, s, m4, m1)?;
                stage(t, "decoder", false)?;
                let map = Self::to_map(t, mo, g)?;
                out.tokens = Some(tokens);
                out.encoded = Some(m4);
                out.decoded = Some(mo);
                if self.cfg.head_skip {
                    t.add(map, s1g)?
                } else {
                    map
                }
            }
            Variant::Sat | Variant::SatDyn => {
                let mining = self.mining.as_ref().expect("mining");
                let adjust = self.adjust.as_ref().expect("adjust");
                let embed = self.embed.as_ref().expect("embedding");
                let sft = self.sft.as_ref().expect("sft");
                let m1 = tmpl.tokens.ok_or_else(|| CoreError::data("template tokens missing"))?;

                stage(t, "mining", true)?;
                let art = mining.forward(t, s, s1)?;
                stage(t, "mining", false)?;

                stage(t, "embedding", true)?;
                let adj = adjust.forward(t, s, fx)?;
                let (lo, hi) = self.geom.roi();
                let adj_g = resample_square(t, adj, g, lo, hi)?;
                let fl_g = resample_square(t, art.fl, g, 0.0, last)?;
                let m_g = resample_square(t, art.m, g, 0.0, last)?;
                let mask = gumbel_binarize(t, m_g, self.cfg.tau, sampling.mode, sampling.rng)?;
                let fine = match sampling.force_fine {
                    Some(f) => f.to_vec(),
                    None if self.cfg.variant == Variant::Sat => vec![false; self.cfg.windows()],
                    None => decide(&window_means(&mask.values, g, self.cfg.window)?, self.cfg.theta),
                };
                let layout = TokenLayout::new(g, self.cfg.window, &fine)?;
                let tokens = embed.forward(t, s, adj_g, &layout, Some(mask.p), self.pos_temperature())?;
                let m2 = Self::to_tokens(t, fl_g)?;
                let m2 = self.add_pos(t, m2, &self.grid_coords())?;
                stage(t, "embedding", false)?;

                stage(t, "encoder", true)?;
                let m4 = sft.encode(t, s, tokens, m2)?;
                stage(t, "encoder", false)?;
                stage(t, "decoder", true)?;
                let mo = sft.decode(t, s, m4, m1)?;
                stage(t, "decoder", false)?;
                let map = detokenize(t, mo, &layout)?;

                out.saliency = Some(art);
                out.saliency_grid = Some(m_g);
                out.mask = Some(mask);
                out.layout = Some(layout);
                out.tokens = Some(tokens);
                out.encoded = Some(m4);
                out.decoded = Some(mo);
                if self.cfg.head_skip {
                    t.add(map, fl_g)?
                } else {
                    map
                }
            }
        };
        stage(t, "heads", true)?;
        out.heads = self.heads.forward(t, s, features)?;
        stage(t, "heads", false)?;
        out.flops = flops;
        Ok(out)
    }
}
