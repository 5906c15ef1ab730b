use sgdvit_tensor::{
    conv_out_len, conv_transpose_out_len, Element, ParamId, ParamStore, Tape, Tensor, TensorError, Var,
};

use super::init::kaiming_uniform;
use crate::error::{CoreError, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(cin: usize, cout: usize, kernel: usize) -> Self {
        ConvSpec { cin, cout, kernel, stride: 1, pad: 0, dilation: 1 }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }
}

/// 2-D convolution with bias. Weight `[cout, cin, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec, rng: &mut Rng) -> Result<Self> {
        if spec.cin == 0 || spec.cout == 0 || spec.kernel == 0 || spec.stride == 0 || spec.dilation == 0 {
            return Err(CoreError::config(name, format!("degenerate conv {spec:?}")));
        }
        let k = spec.kernel;
        let w = kaiming_uniform(&[spec.cout, spec.cin, k, k], spec.cin * k * k, rng)?;
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([spec.cout])?)?;
        Ok(Conv2d { spec, weight, bias })
    }

    /// Output side length for input side `n`, `None` when the input is
    /// smaller than the effective kernel.
    pub fn out_len(&self, n: usize) -> Option<usize> {
        let s = &self.spec;
        conv_out_len(n, s.kernel, s.stride, s.pad, s.dilation)
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = t.param(store, self.weight);
        let b = t.param(store, self.bias);
        let s = &self.spec;
        Ok(t.conv2d(x, w, Some(b), s.stride, s.pad, s.dilation)?)
    }
}

/// Transposed convolution with bias. Weight `[cin, cout, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose2d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec, rng: &mut Rng) -> Result<Self> {
        if spec.cin == 0 || spec.cout == 0 || spec.kernel == 0 || spec.stride == 0 || spec.dilation == 0 {
            return Err(CoreError::config(name, format!("degenerate deconv {spec:?}")));
        }
        let k = spec.kernel;
        // each output sees cin * k * k / stride^2 taps on average; use the
        // conv-equivalent fan-in
        let w = kaiming_uniform(&[spec.cin, spec.cout, k, k], spec.cin * k * k / (spec.stride * spec.stride).max(1), rng)?;
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([spec.cout])?)?;
        Ok(ConvTranspose2d { spec, weight, bias })
    }

    pub fn out_len(&self, n: usize) -> Option<usize> {
        let s = &self.spec;
        conv_transpose_out_len(n, s.kernel, s.stride, s.pad, s.dilation)
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = t.param(store, self.weight);
        let b = t.param(store, self.bias);
        let s = &self.spec;
        Ok(t.conv_transpose2d(x, w, Some(b), s.stride, s.pad, s.dilation)?)
    }
}

/// `y = x W + b` over the last axis of a `[n, in]` matrix.
#[derive(Debug, Clone)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = kaiming_uniform(&[fan_in, fan_out], fan_in, rng)?;
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros([fan_out])?)?) } else { None };
        Ok(Linear { fan_in, fan_out, weight, bias })
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = t.shape(x);
        if shape.len() != 2 || shape[1] != self.fan_in {
            return Err(TensorError::mismatch("linear", shape, &[self.fan_in, self.fan_out]).into());
        }
        let w = t.param(store, self.weight);
        let y = t.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = t.param(store, b);
                Ok(t.add(y, b)?)
            }
            None => Ok(y),
        }
    }
}

/// Linear -> ReLU -> Linear on the last axis.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        out: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, out, true, rng)?,
        })
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(t, store, x)?;
        let h = t.relu(h);
        self.fc2.forward(t, store, h)
    }
}

/// Per-row normalization over the last axis with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub dim: usize,
    pub eps: f64,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones([dim])?)?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([dim])?)?;
        Ok(LayerNorm { dim, eps: 1e-5, gamma, beta })
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = t.param(store, self.gamma);
        let b = t.param(store, self.beta);
        Ok(t.layer_norm(x, g, b, self.eps)?)
    }
}
