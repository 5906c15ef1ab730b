//! Siamese feature extractor and the feature adjustment network.

use sgdvit_tensor::{AxisPlan, Element, ParamStore, ResamplePlan, Tape, TensorError, Var};

use crate::error::{CoreError, Result};
use crate::nn::{Conv2d, ConvSpec};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Conv { idx: usize, kernel: usize, stride: usize, relu: bool },
    Pool { kernel: usize, stride: usize },
}

const STAGES: [Stage; 7] = [
    Stage::Conv { idx: 0, kernel: 11, stride: 2, relu: true },
    Stage::Pool { kernel: 3, stride: 2 },
    Stage::Conv { idx: 1, kernel: 5, stride: 1, relu: true },
    Stage::Pool { kernel: 3, stride: 2 },
    Stage::Conv { idx: 2, kernel: 3, stride: 1, relu: true },
    Stage::Conv { idx: 3, kernel: 3, stride: 1, relu: true },
    Stage::Conv { idx: 4, kernel: 3, stride: 1, relu: false },
];

/// Pixel geometry of the feature map: cell `i` is centred on input pixel
/// `offset + stride * i` and sees `receptive` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureGeometry {
    pub stride: f64,
    pub offset: f64,
    pub receptive: usize,
}

/// AlexNet-style five-conv stack (11/2, pool, 5, pool, 3, 3, 3) without
/// padding, shared between template and search crops.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub convs: Vec<Conv2d>,
    pub template_size: usize,
    pub search_size: usize,
}

impl Backbone {
    /// `widths` are the five conv output widths; the last is the feature
    /// dimension `C`.
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        widths: [usize; 5],
        template_size: usize,
        search_size: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut convs = Vec::with_capacity(5);
        let mut cin = 3;
        for stage in STAGES {
            if let Stage::Conv { idx, kernel, stride, .. } = stage {
                let spec = ConvSpec::new(cin, widths[idx], kernel).stride(stride);
                convs.push(Conv2d::new(store, &format!("backbone.conv{}", idx + 1), spec, rng)?);
                cin = widths[idx];
            }
        }
        let b = Backbone { convs, template_size, search_size };
        for size in [template_size, search_size] {
            if b.out_side(size).is_none() {
                return Err(CoreError::config("model.search_size", format!("input side {size} is too small for the backbone")));
            }
        }
        Ok(b)
    }

    pub fn channels(&self) -> usize {
        self.convs[4].spec.cout
    }

    pub fn out_side(&self, n: usize) -> Option<usize> {
        STAGES.iter().try_fold(n, |n, stage| match *stage {
            Stage::Conv { idx, .. } => self.convs[idx].out_len(n),
            Stage::Pool { kernel, stride } => sgdvit_tensor::conv_out_len(n, kernel, stride, 0, 1),
        })
    }

    pub fn geometry(&self) -> FeatureGeometry {
        let (mut jump, mut offset, mut rf) = (1usize, 0.0, 1usize);
        for stage in STAGES {
            let (k, s) = match stage {
                Stage::Conv { kernel, stride, .. } | Stage::Pool { kernel, stride } => (kernel, stride),
            };
            offset += (k - 1) as f64 / 2.0 * jump as f64;
            rf += (k - 1) * jump;
            jump *= s;
        }
        FeatureGeometry { stride: jump as f64, offset, receptive: rf }
    }

    /// `image: [1, 3, S, S]` with `S` the template or search size.
    pub fn forward<T: Element>(&self, t: &mut Tape<T>, store: &ParamStore<T>, image: Var) -> Result<Var> {
        let shape = t.shape(image).to_vec();
        let ok = matches!(shape[..], [1, 3, h, w] if h == w && (h == self.template_size || h == self.search_size));
        if !ok {
            return Err(CoreError::data(format!(
                "backbone input {shape:?} unsupported; expected [1, 3, S, S] with S in {{{}, {}}}",
                self.template_size, self.search_size
            )));
        }
        let mut x = image;
        for stage in STAGES {
            x = match stage {
                Stage::Conv { idx, relu, .. } => {
                    let y = self.convs[idx].forward(t, store, x)?;
                    if relu {
                        t.relu(y)
                    } else {
                        y
                    }
                }
                Stage::Pool { kernel, stride } => t.max_pool2d(x, kernel, stride)?,
            };
        }
        Ok(x)
    }
}

/// Pads `x: [1, C, H, W]` by repeating its border cells `p` times.
pub fn pad_replicate<T: Element>(t: &mut Tape<T>, x: Var, p: usize) -> Result<Var> {
    if p == 0 {
        return Ok(x);
    }
    let [1, c, h, w] = *t.shape(x) else {
        return Err(TensorError::invalid("pad_replicate", format!("expected [1, C, H, W], got {:?}", t.shape(x))).into());
    };
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let clampi = |i: usize, n: usize| i.saturating_sub(p).min(n - 1);
    let index: Vec<usize> =
        (0..ph).flat_map(|y| (0..pw).map(move |xx| clampi(y, h) * w + clampi(xx, w))).collect();
    let cells = t.reshape(x, &[c, h * w])?;
    let cells = t.transpose(cells)?;
    let padded = t.index_select(cells, &index)?;
    let padded = t.transpose(padded)?;
    Ok(t.reshape(padded, &[1, c, ph, pw])?)
}

/// Three parallel branches of one, two and three stacked 3x3 convs
/// (receptive fields 3, 5, 7), edge-padded so spatial size is kept and
/// constant maps stay constant, concatenated back to `C` channels.
#[derive(Debug, Clone)]
pub struct AdjustNet {
    pub branches: Vec<Vec<Conv2d>>,
}

impl AdjustNet {
    pub fn new<T: Element>(store: &mut ParamStore<T>, channels: usize, rng: &mut Rng) -> Result<Self> {
        if channels < 3 {
            return Err(CoreError::config("model.channels", "adjustment needs at least 3 channels"));
        }
        let third = channels / 3;
        let widths = [third, third, channels - 2 * third];
        let mut branches = Vec::new();
        for (b, &width) in widths.iter().enumerate() {
            let mut convs = Vec::new();
            let mut cin = channels;
            for d in 0..=b {
                convs.push(Conv2d::new(store, &format!("adjust.branch{b}.{d}"), ConvSpec::new(cin, width, 3), rng)?);
                cin = width;
            }
            branches.push(convs);
        }
        Ok(AdjustNet { branches })
    }

    pub fn forward<T: Element>(&self, t: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for convs in &self.branches {
            let mut y = x;
            for (d, conv) in convs.iter().enumerate() {
                if d > 0 {
                    y = t.relu(y);
                }
                let padded = pad_replicate(t, y, 1)?;
                y = conv.forward(t, store, padded)?;
            }
            outs.push(y);
        }
        Ok(t.concat(&outs, 1)?)
    }
}

/// Bilinear resampling of `x: [1, C, H, W]` to `out x out` samples spanning
/// source coordinates `[from, to]` on both axes, corners included.
pub fn resample_square<T: Element>(t: &mut Tape<T>, x: Var, out: usize, from: f64, to: f64) -> Result<Var> {
    let (h, w) = match *t.shape(x) {
        [_, _, h, w] => (h, w),
        ref s => return Err(TensorError::invalid("resample", format!("expected rank 4, got {s:?}")).into()),
    };
    let plan = ResamplePlan { y: AxisPlan::new(h, out, from, to)?, x: AxisPlan::new(w, out, from, to)? };
    Ok(t.resample(x, plan)?)
}
