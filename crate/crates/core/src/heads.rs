//! Anchor-free classification and regression heads.

use sgdvit_tensor::{Element, ParamStore, Tape, Tensor, Var};

use crate::error::Result;
use crate::nn::{Conv2d, ConvSpec};
use crate::rng::Rng;

/// Per head: 3x3 conv, ReLU, 3x3 conv. `cls` emits one objectness logit per
/// cell; `reg` emits softplus distances `(l, t, r, b)` in grid units.
#[derive(Debug, Clone)]
pub struct Heads {
    pub cls: [Conv2d; 2],
    pub reg: [Conv2d; 2],
}

#[derive(Debug, Clone, Copy)]
pub struct HeadOutputs {
    /// `[1, 1, G, G]` logits.
    pub cls: Var,
    /// `[1, 4, G, G]`, nonnegative.
    pub reg: Var,
}

impl Heads {
    /// `cls_bias` initializes the objectness logit bias; `reg_init` the
    /// distance every cell predicts before training (grid units).
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        channels: usize,
        cls_bias: f64,
        reg_init: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let conv = |store: &mut ParamStore<T>, name: &str, cout, rng: &mut Rng| {
            Conv2d::new(store, name, ConvSpec::new(channels, cout, 3).pad(1), rng)
        };
        let cls = [conv(store, "heads.cls.0", channels, rng)?, conv(store, "heads.cls.1", 1, rng)?];
        let reg = [conv(store, "heads.reg.0", channels, rng)?, conv(store, "heads.reg.1", 4, rng)?];
        *store.get_mut(cls[1].bias) = Tensor::full([1], T::c(cls_bias))?;
        // inverse softplus, so softplus(bias) = reg_init
        let b = if reg_init > 20.0 { reg_init } else { reg_init.exp_m1().ln() };
        *store.get_mut(reg[1].bias) = Tensor::full([4], T::c(b))?;
        Ok(Heads { cls, reg })
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> Result<HeadOutputs> {
        let h = self.cls[0].forward(t, s, x)?;
        let h = t.relu(h);
        let cls = self.cls[1].forward(t, s, h)?;
        let h = self.reg[0].forward(t, s, x)?;
        let h = t.relu(h);
        let reg = self.reg[1].forward(t, s, h)?;
        let reg = t.softplus(reg);
        Ok(HeadOutputs { cls, reg })
    }
}
