//! Saliency mining over the template/search similarity map.
//!
//! `S1 = corr(search, template)`, `S2 = Deconv(ReLU(Conv(MLP(S1))))` with the
//! MLP mixing spatial positions (shared across channels), then two 3x3
//! branches: saliency features `Fl` (C channels) and saliency map `M` (1).

use sgdvit_tensor::{Element, ParamStore, Tape, Tensor, TensorError, Var};

use crate::error::{CoreError, Result};
use crate::nn::{Conv2d, ConvSpec, ConvTranspose2d, Mlp};
use crate::rng::Rng;

/// Depthwise correlation averaged over the template window:
/// `S1[c, y, x] = mean_{u,v} search[c, y+u, x+v] * template[c, u, v]`.
pub fn cross_correlate<T: Element>(t: &mut Tape<T>, search: Var, template: Var) -> Result<Var> {
    let (th, tw) = match *t.shape(template) {
        [_, _, h, w] => (h, w),
        ref s => return Err(TensorError::invalid("cross_correlate", format!("template shape {s:?}")).into()),
    };
    let s1 = t.xcorr_depthwise(search, template)?;
    Ok(t.scale(s1, 1.0 / (th * tw) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpInit {
    /// Random weights.
    Kaiming,
    /// `fc1 = [I, -I]`, `fc2 = [I; -I]`, so the MLP starts as the identity
    /// (`relu(x) - relu(-x) = x`) and keeps the correlation peak in place.
    Identity,
}

#[derive(Debug, Clone)]
pub struct SaliencyMining {
    pub side: usize,
    pub channels: usize,
    pub mlp: Mlp,
    pub conv: Conv2d,
    pub deconv: ConvTranspose2d,
    pub fl: Conv2d,
    pub m: Conv2d,
}

#[derive(Debug, Clone, Copy)]
pub struct SaliencyArtifacts {
    pub s2: Var,
    pub fl: Var,
    pub m: Var,
}

impl SaliencyMining {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        side: usize,
        channels: usize,
        init: MlpInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        if channels < 2 {
            return Err(CoreError::config("model.channels", "mining needs at least 2 channels"));
        }
        let hw = side * side;
        let mlp = Mlp::new(store, "mining.mlp", hw, 2 * hw, hw, rng)?;
        if init == MlpInit::Identity {
            let mut w1 = vec![0.0; hw * 2 * hw];
            let mut w2 = vec![0.0; 2 * hw * hw];
            for i in 0..hw {
                w1[i * 2 * hw + i] = 1.0;
                w1[i * 2 * hw + hw + i] = -1.0;
                w2[i * hw + i] = 1.0;
                w2[(hw + i) * hw + i] = -1.0;
            }
            *store.get_mut(mlp.fc1.weight) = Tensor::from_f64([hw, 2 * hw], &w1)?;
            *store.get_mut(mlp.fc2.weight) = Tensor::from_f64([2 * hw, hw], &w2)?;
        }
        let half = channels / 2;
        let conv = Conv2d::new(store, "mining.conv", ConvSpec::new(channels, half, 3).pad(1), rng)?;
        let deconv = ConvTranspose2d::new(store, "mining.deconv", ConvSpec::new(half, channels, 3).pad(1), rng)?;
        let fl = Conv2d::new(store, "mining.fl", ConvSpec::new(channels, channels, 3).pad(1), rng)?;
        let m = Conv2d::new(store, "mining.m", ConvSpec::new(channels, 1, 3).pad(1), rng)?;
        let this = SaliencyMining { side, channels, mlp, conv, deconv, fl, m };
        let through = this.conv.out_len(side).and_then(|n| this.deconv.out_len(n));
        if through != Some(side) {
            return Err(CoreError::config("model", format!("conv/deconv pair maps {side} to {through:?}")));
        }
        Ok(this)
    }

    /// `s1: [1, C, H, W]` with `H = W = side`.
    pub fn forward<T: Element>(&self, t: &mut Tape<T>, store: &ParamStore<T>, s1: Var) -> Result<SaliencyArtifacts> {
        let (c, hw) = (self.channels, self.side * self.side);
        if t.shape(s1) != [1, c, self.side, self.side] {
            return Err(TensorError::mismatch("mine_saliency", t.shape(s1), &[1, c, self.side, self.side]).into());
        }
        let rows = t.reshape(s1, &[c, hw])?;
        let mixed = self.mlp.forward(t, store, rows)?;
        let mixed = t.reshape(mixed, &[1, c, self.side, self.side])?;
        let squeezed = self.conv.forward(t, store, mixed)?;
        let squeezed = t.relu(squeezed);
        let s2 = self.deconv.forward(t, store, squeezed)?;
        let fl = self.fl.forward(t, store, s2)?;
        let m = self.m.forward(t, store, s2)?;
        Ok(SaliencyArtifacts { s2, fl, m })
    }
}
