//! Saliency filtering transformer.
//!
//! Encoder (no FFN): `M4 = Norm(mAtt(M3, M2, M2) + M3)`.
//! Decoder: `M5 = Norm(mAtt(M4, M1, M1) + M4)`, `Mo = Norm(FFN(M5) + M5)`.
//! Norms are post-residual layer norms.

use sgdvit_tensor::{Element, ParamStore, Tape, Var};

use crate::error::{CoreError, Result};
use crate::nn::{LayerNorm, Mlp, MultiHeadAttention};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SftConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub tie_qk: bool,
}

impl SftConfig {
    fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(CoreError::config("model.heads", format!("{} channels not divisible by {} heads", self.dim, self.heads)));
        }
        if self.ffn_hidden == 0 {
            return Err(CoreError::config("model.ffn_mult", "FFN width must be positive"));
        }
        Ok(())
    }
}

/// Attention sublayer with residual and norm: `Norm(mAtt(q, kv, kv) + q)`.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub mha: MultiHeadAttention,
    pub norm: LayerNorm,
}

impl AttentionBlock {
    fn new<T: Element>(store: &mut ParamStore<T>, name: &str, cfg: &SftConfig, rng: &mut Rng) -> Result<Self> {
        Ok(AttentionBlock {
            mha: MultiHeadAttention::new(store, &format!("{name}.mha"), cfg.dim, cfg.heads, cfg.tie_qk, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), cfg.dim)?,
        })
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, s: &ParamStore<T>, q: Var, kv: Var) -> Result<Var> {
        let a = self.mha.forward(t, s, q, kv, kv)?;
        let r = t.add(a, q)?;
        self.norm.forward(t, s, r)
    }
}

/// `Norm(FFN(x) + x)` with a ReLU FFN.
#[derive(Debug, Clone)]
pub struct FfnBlock {
    pub ffn: Mlp,
    pub norm: LayerNorm,
}

impl FfnBlock {
    fn new<T: Element>(store: &mut ParamStore<T>, name: &str, cfg: &SftConfig, rng: &mut Rng) -> Result<Self> {
        Ok(FfnBlock {
            ffn: Mlp::new(store, &format!("{name}.ffn"), cfg.dim, cfg.ffn_hidden, cfg.dim, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), cfg.dim)?,
        })
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.ffn.forward(t, s, x)?;
        let r = t.add(y, x)?;
        self.norm.forward(t, s, r)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub cross: AttentionBlock,
    pub out: FfnBlock,
}

/// FFN-free cross-attention encoder plus template-guided decoder.
#[derive(Debug, Clone)]
pub struct Sft {
    pub cfg: SftConfig,
    pub encoder: Vec<AttentionBlock>,
    pub decoder: Vec<DecoderLayer>,
}

impl Sft {
    pub fn new<T: Element>(store: &mut ParamStore<T>, cfg: SftConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let encoder = (0..cfg.encoder_depth)
            .map(|i| AttentionBlock::new(store, &format!("sft.encoder.{i}"), &cfg, rng))
            .collect::<Result<_>>()?;
        let decoder = (0..cfg.decoder_depth)
            .map(|i| {
                let name = format!("sft.decoder.{i}");
                Ok(DecoderLayer { cross: AttentionBlock::new(store, &name, &cfg, rng)?, out: FfnBlock::new(store, &name, &cfg, rng)? })
            })
            .collect::<Result<_>>()?;
        Ok(Sft { cfg, encoder, decoder })
    }

    /// `m3: [N_t, C]` dynamic tokens as queries, `m2: [N_kv, C]` saliency
    /// features as keys and values.
    pub fn encode<T: Element>(&self, t: &mut Tape<T>, s: &ParamStore<T>, m3: Var, m2: Var) -> Result<Var> {
        self.encoder.iter().try_fold(m3, |x, layer| layer.forward(t, s, x, m2))
    }

    /// `m4: [N_t, C]` encoder output as queries, `m1: [T^2, C]` template
    /// tokens as keys and values.
    pub fn decode<T: Element>(&self, t: &mut Tape<T>, s: &ParamStore<T>, m4: Var, m1: Var) -> Result<Var> {
        self.decoder.iter().try_fold(m4, |x, layer| {
            let m5 = layer.cross.forward(t, s, x, m1)?;
            layer.out.forward(t, s, m5)
        })
    }
}

/// Conventional encoder layer (self-attention then FFN), used when the
/// similarity map is fed to the transformer directly.
#[derive(Debug, Clone)]
pub struct StandardEncoder {
    pub layers: Vec<(AttentionBlock, FfnBlock)>,
}

impl StandardEncoder {
    pub fn new<T: Element>(store: &mut ParamStore<T>, cfg: SftConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.encoder_depth)
            .map(|i| {
                let name = format!("sit.encoder.{i}");
                Ok((AttentionBlock::new(store, &name, &cfg, rng)?, FfnBlock::new(store, &name, &cfg, rng)?))
            })
            .collect::<Result<_>>()?;
        Ok(StandardEncoder { layers })
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        self.layers.iter().try_fold(x, |x, (attn, ffn)| {
            let y = attn.forward(t, s, x, x)?;
            ffn.forward(t, s, y)
        })
    }
}
