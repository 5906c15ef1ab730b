//! Saliency-adaptive token embedding.
//!
//! The saliency map is binarized with a straight-through Gumbel-Softmax,
//! the grid is cut into `w x w` windows, and each window becomes either one
//! coarse token or, when its mask occupancy reaches the threshold, four
//! fine tokens from its 2x2 sub-patches.

use rand::Rng as _;
use sgdvit_tensor::{Element, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

use crate::error::{CoreError, Result};
use crate::nn::{init, sinusoid_2d, Linear};
use crate::rng::Rng;

/// Sub-patches per window side for fine windows.
pub const SPLIT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Coarse,
    Fine,
}

/// Where a token comes from: its window (row-major index and position) and,
/// for fine tokens, the row-major sub-patch index `0..4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin {
    pub window: usize,
    pub row: usize,
    pub col: usize,
    pub level: Level,
    pub sub: usize,
}

/// Token count for `windows` windows of which `fine` are split.
pub fn token_count(windows: usize, fine: usize) -> usize {
    windows - fine + SPLIT * SPLIT * fine
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLayout {
    pub grid: usize,
    pub window: usize,
    pub origins: Vec<Origin>,
}

impl TokenLayout {
    /// `fine[i]` selects the level of window `i` (row-major).
    pub fn new(grid: usize, window: usize, fine: &[bool]) -> Result<Self> {
        check_windows(grid, window)?;
        let per_side = grid / window;
        if fine.len() != per_side * per_side {
            return Err(CoreError::data(format!("{} window decisions for {} windows", fine.len(), per_side * per_side)));
        }
        let mut origins = Vec::with_capacity(token_count(fine.len(), fine.iter().filter(|&&f| f).count()));
        for (window, &is_fine) in fine.iter().enumerate() {
            let (row, col) = (window / per_side, window % per_side);
            if is_fine {
                origins.extend((0..SPLIT * SPLIT).map(|sub| Origin { window, row, col, level: Level::Fine, sub }));
            } else {
                origins.push(Origin { window, row, col, level: Level::Coarse, sub: 0 });
            }
        }
        Ok(TokenLayout { grid, window, origins })
    }

    pub fn windows(&self) -> usize {
        (self.grid / self.window).pow(2)
    }

    pub fn fine_windows(&self) -> usize {
        self.origins.iter().filter(|o| o.level == Level::Fine && o.sub == 0).count()
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Top-left cell and side length of a token's footprint.
    pub fn footprint(&self, o: &Origin) -> (usize, usize, usize) {
        let (r0, c0) = (o.row * self.window, o.col * self.window);
        match o.level {
            Level::Coarse => (r0, c0, self.window),
            Level::Fine => {
                let s = self.window / SPLIT;
                (r0 + (o.sub / SPLIT) * s, c0 + (o.sub % SPLIT) * s, s)
            }
        }
    }

    /// Row-major grid cells under a token.
    pub fn cells(&self, o: &Origin) -> Vec<usize> {
        let (r0, c0, s) = self.footprint(o);
        (r0..r0 + s).flat_map(|r| (c0..c0 + s).map(move |c| r * self.grid + c)).collect()
    }

    /// Footprint centres in grid coordinates `(y, x)`.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        self.origins
            .iter()
            .map(|o| {
                let (r0, c0, s) = self.footprint(o);
                let half = (s - 1) as f64 / 2.0;
                (r0 as f64 + half, c0 as f64 + half)
            })
            .collect()
    }

    /// Owning token of every grid cell. Fails unless the footprints tile
    /// the grid exactly once.
    pub fn owners(&self) -> Result<Vec<usize>> {
        let mut owner = vec![usize::MAX; self.grid * self.grid];
        for (i, o) in self.origins.iter().enumerate() {
            for cell in self.cells(o) {
                if owner[cell] != usize::MAX {
                    return Err(CoreError::data(format!("token footprints overlap at cell {cell}")));
                }
                owner[cell] = i;
            }
        }
        if let Some(gap) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(CoreError::data(format!("token footprints leave cell {gap} uncovered")));
        }
        Ok(owner)
    }
}

fn check_windows(grid: usize, window: usize) -> Result<()> {
    if window == 0 || !window.is_multiple_of(SPLIT) || !grid.is_multiple_of(window) {
        return Err(CoreError::config(
            "model.window",
            format!("window {window} must be even and divide grid {grid}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Gumbel noise, hard forward, straight-through backward (training).
    Sample,
    /// No noise: `P = [m > 0]`, straight-through backward (inference).
    Deterministic,
    /// Forward the soft keep-probabilities themselves. The forward is then
    /// smooth, which finite-difference checks of the full path need.
    Relaxed,
}

#[derive(Debug, Clone)]
pub struct Mask {
    /// Forward mask values, same shape as the input map.
    pub p: Var,
    /// Soft keep-probabilities carrying the gradient.
    pub soft: Var,
    pub values: Vec<f64>,
}

/// Two-way Gumbel-Softmax over logits `(m, -m)` per cell:
/// `soft = sigmoid((2m + g_keep - g_drop) / tau)`, hard value `[soft > 1/2]`.
pub fn gumbel_binarize<T: Element>(t: &mut Tape<T>, m: Var, tau: f64, mode: MaskMode, rng: &mut Rng) -> Result<Mask> {
    if !(tau > 0.0) {
        return Err(CoreError::config("model.tau", format!("Gumbel temperature must be positive, got {tau}")));
    }
    let shape = t.shape(m).to_vec();
    let n: usize = shape.iter().product();
    let noise: Vec<f64> = match mode {
        MaskMode::Sample => (0..n).map(|_| (gumbel(rng) - gumbel(rng)) / tau).collect(),
        MaskMode::Deterministic | MaskMode::Relaxed => vec![0.0; n],
    };
    let logits = t.scale(m, 2.0 / tau);
    let noise = t.constant(Tensor::from_f64(shape.clone(), &noise)?);
    let logits = t.add(logits, noise)?;
    let soft = t.sigmoid(logits);
    if mode == MaskMode::Relaxed {
        let values = t.data(soft).iter().map(|v| v.f64()).collect();
        return Ok(Mask { p: soft, soft, values });
    }
    // decide on the logit sign rather than the rounded probability
    let values: Vec<f64> = t.data(logits).iter().map(|v| if v.f64() > 0.0 { 1.0 } else { 0.0 }).collect();
    let p = t.straight_through(Tensor::from_f64(shape, &values)?, soft)?;
    Ok(Mask { p, soft, values })
}

fn gumbel(rng: &mut Rng) -> f64 {
    // u in (0, 1): random::<f64>() is in [0, 1)
    let u: f64 = 1.0 - rng.random::<f64>();
    -(-u.ln()).ln()
}

/// Mean mask value per window, row-major.
pub fn window_means(values: &[f64], grid: usize, window: usize) -> Result<Vec<f64>> {
    check_windows(grid, window)?;
    if values.len() != grid * grid {
        return Err(CoreError::data(format!("mask of {} values for a {grid}x{grid} grid", values.len())));
    }
    let per_side = grid / window;
    let mut sums = vec![0.0; per_side * per_side];
    for r in 0..grid {
        for c in 0..grid {
            sums[(r / window) * per_side + c / window] += values[r * grid + c];
        }
    }
    let area = (window * window) as f64;
    Ok(sums.into_iter().map(|s| s / area).collect())
}

/// A window is fine when its mean occupancy is at least `theta`.
pub fn decide(means: &[f64], theta: f64) -> Vec<bool> {
    means.iter().map(|&m| m >= theta).collect()
}

/// Per-level token projections plus a learned saliency vector, added to
/// each token in proportion to the mean mask value over its footprint.
/// The saliency term is what carries the mask gradient into the tokens.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub channels: usize,
    pub window: usize,
    pub coarse: Linear,
    pub fine: Linear,
    pub saliency: ParamId,
}

impl Embedding {
    pub fn new<T: Element>(store: &mut ParamStore<T>, channels: usize, window: usize, rng: &mut Rng) -> Result<Self> {
        let sub = window / SPLIT;
        let coarse = Linear::new(store, "embed.coarse", window * window * channels, channels, true, rng)?;
        let fine = Linear::new(store, "embed.fine", sub * sub * channels, channels, true, rng)?;
        let saliency = store.add("embed.saliency", init::uniform(&[channels], 0.5, rng)?)?;
        Ok(Embedding { channels, window, coarse, fine, saliency })
    }

    /// Tokens `[N_t, C]` for `feat: [1, C, G, G]`, ordered as
    /// `layout.origins`. `mask` is the `[1, 1, G, G]` mask driving the
    /// saliency term; `pos_temperature` adds footprint-centre encodings.
    pub fn forward<T: Element>(
        &self,
        t: &mut Tape<T>,
        store: &ParamStore<T>,
        feat: Var,
        layout: &TokenLayout,
        mask: Option<Var>,
        pos_temperature: Option<f64>,
    ) -> Result<Var> {
        let (c, g) = (self.channels, layout.grid);
        if t.shape(feat) != [1, c, g, g] {
            return Err(TensorError::mismatch("embed_tokens", t.shape(feat), &[1, c, g, g]).into());
        }
        if layout.window != self.window {
            return Err(CoreError::data(format!("layout window {} != embedding window {}", layout.window, self.window)));
        }
        let cells = t.reshape(feat, &[c, g * g])?;
        let cells = t.transpose(cells)?;

        let mut parts = Vec::new();
        let mut rank = vec![0usize; layout.len()];
        let mut offset = 0;
        for (level, proj) in [(Level::Coarse, &self.coarse), (Level::Fine, &self.fine)] {
            let members: Vec<usize> = (0..layout.len()).filter(|&i| layout.origins[i].level == level).collect();
            if members.is_empty() {
                continue;
            }
            let index: Vec<usize> = members.iter().flat_map(|&i| layout.cells(&layout.origins[i])).collect();
            let gathered = t.index_select(cells, &index)?;
            let flat = t.reshape(gathered, &[members.len(), proj.fan_in])?;
            parts.push(proj.forward(t, store, flat)?);
            for (j, &i) in members.iter().enumerate() {
                rank[i] = offset + j;
            }
            offset += members.len();
        }
        let stacked = if parts.len() == 1 { parts[0] } else { t.concat(&parts, 0)? };
        let mut tokens = t.index_select(stacked, &rank)?;

        if let Some(mask) = mask {
            if t.shape(mask) != [1, 1, g, g] {
                return Err(TensorError::mismatch("embed_tokens", t.shape(mask), &[1, 1, g, g]).into());
            }
            let mut avg = vec![0.0; layout.len() * g * g];
            for (i, o) in layout.origins.iter().enumerate() {
                let cells = layout.cells(o);
                let wgt = 1.0 / cells.len() as f64;
                for cell in cells {
                    avg[i * g * g + cell] = wgt;
                }
            }
            let avg = t.constant(Tensor::from_f64([layout.len(), g * g], &avg)?);
            let p = t.reshape(mask, &[g * g, 1])?;
            let occupancy = t.matmul(avg, p)?;
            let e = t.param(store, self.saliency);
            let sal = t.mul(occupancy, e)?;
            tokens = t.add(tokens, sal)?;
        }
        if let Some(temp) = pos_temperature {
            let pos = t.constant(sinusoid_2d(&layout.centers(), c, temp)?);
            tokens = t.add(tokens, pos)?;
        }
        Ok(tokens)
    }
}

/// Broadcasts each token over its footprint: `[N_t, C] -> [1, C, G, G]`.
pub fn detokenize<T: Element>(t: &mut Tape<T>, tokens: Var, layout: &TokenLayout) -> Result<Var> {
    let c = match *t.shape(tokens) {
        [n, c] if n == layout.len() => c,
        ref s => return Err(TensorError::mismatch("detokenize", s, &[layout.len()]).into()),
    };
    let owners = layout.owners()?;
    let g = layout.grid;
    let cells = t.index_select(tokens, &owners)?;
    let planes = t.transpose(cells)?;
    Ok(t.reshape(planes, &[1, c, g, g])?)
}
