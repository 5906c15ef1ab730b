//! Spatial ops over NCHW tensors: convolution, transposed convolution,
//! max pooling, depthwise cross-correlation and bilinear resampling.
//!
//! Convolutions lower to im2col + GEMM. A transposed convolution is the
//! adjoint of the convolution with the same geometry, so both share one
//! [`ConvGeom`] where `big` is the spatial size on the convolution's input
//! side and `small` the size on its output side.

use crate::element::{gemm, Element, MatRef};
use crate::error::{Result, TensorError};
use crate::flops::kind;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub big: (usize, usize),
    pub small: (usize, usize),
}

/// `floor((n + 2p - d(k-1) - 1)/s) + 1`, or `None` when the effective
/// kernel does not fit.
pub fn conv_out_len(n: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    let padded = n + 2 * pad;
    (padded >= span && stride > 0).then(|| (padded - span) / stride + 1)
}

/// `(n-1)s - 2p + d(k-1) + 1`, or `None` when the padding eats everything.
pub fn conv_transpose_out_len(n: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let full = (n - 1) * stride + dilation * (k - 1) + 1;
    (full > 2 * pad).then(|| full - 2 * pad)
}

impl ConvGeom {
    fn rows(&self, channels: usize) -> usize {
        channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.small.0 * self.small.1
    }
}

fn im2col<T: Element>(x: &[T], channels: usize, g: &ConvGeom, col: &mut [T]) {
    let (h, w) = g.big;
    let (oh, ow) = g.small;
    let (s, p, d) = (g.stride as isize, g.pad as isize, g.dilation as isize);
    let mut row = 0;
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s + ki as isize * d - p;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize * d - p;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], channels: usize, g: &ConvGeom, x: &mut [T]) {
    let (h, w) = g.big;
    let (oh, ow) = g.small;
    let (s, p, d) = (g.stride as isize, g.pad as isize, g.dilation as isize);
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s + ki as isize * d - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = ox as isize * s + kj as isize * d - p;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn rank4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(shape)
        .map_err(|_| TensorError::invalid(op, format!("expected NCHW input, got {shape:?}")))
}

fn check_bias<T: Element>(tape: &Tape<T>, op: &'static str, b: Option<Var>, out_c: usize) -> Result<()> {
    if let Some(b) = b {
        if tape.shape(b) != [out_c] {
            return Err(TensorError::mismatch(op, &[out_c], tape.shape(b)));
        }
    }
    Ok(())
}

/// Resampling table for one axis: source (low index, weight of high index).
#[derive(Debug, Clone, PartialEq)]
pub struct AxisPlan {
    pub src_len: usize,
    pub taps: Vec<(usize, f64)>,
}

impl AxisPlan {
    /// `out_len` samples spaced evenly from source coordinate `from` to
    /// `to` inclusive (corner-aligned), interpolated linearly.
    pub fn new(src_len: usize, out_len: usize, from: f64, to: f64) -> Result<Self> {
        let hi = (src_len - 1) as f64;
        if out_len == 0 || !(0.0..=hi).contains(&from) || !(0.0..=hi).contains(&to) {
            return Err(TensorError::invalid(
                "resample",
                format!("range [{from}, {to}] -> {out_len} samples outside source extent {src_len}"),
            ));
        }
        let taps = (0..out_len)
            .map(|i| {
                let pos = if out_len == 1 {
                    0.5 * (from + to)
                } else {
                    from + (to - from) * i as f64 / (out_len - 1) as f64
                };
                if src_len == 1 {
                    return (0, 0.0);
                }
                let lo = (pos.floor() as usize).min(src_len - 2);
                (lo, pos - lo as f64)
            })
            .collect();
        Ok(AxisPlan { src_len, taps })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan {
    pub y: AxisPlan,
    pub x: AxisPlan,
}

impl<T: Element> Tape<T> {
    /// 2-D convolution (cross-correlation convention). `x: [N,Cin,H,W]`,
    /// `w: [Cout,Cin,kh,kw]`, optional `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, dilation: usize) -> Result<Var> {
        let [n, cin, h, wd] = rank4("conv2d", self.shape(x))?;
        let [cout, wcin, kh, kw] = rank4("conv2d", self.shape(w))?;
        if wcin != cin {
            return Err(TensorError::mismatch("conv2d", self.shape(x), self.shape(w)));
        }
        check_bias(self, "conv2d", b, cout)?;
        let (Some(oh), Some(ow)) =
            (conv_out_len(h, kh, stride, pad, dilation), conv_out_len(wd, kw, stride, pad, dilation))
        else {
            return Err(TensorError::invalid(
                "conv2d",
                format!("input {h}x{wd} smaller than effective kernel {kh}x{kw} (pad {pad}, dilation {dilation})"),
            ));
        };
        let geom = ConvGeom { kh, kw, stride, pad, dilation, big: (h, wd), small: (oh, ow) };
        let (rows, cols) = (geom.rows(cin), geom.cols());
        let mut col = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); n * cout * cols];
        let xd = self.data(x);
        let wm = MatRef::new(self.data(w), cout, rows);
        for i in 0..n {
            im2col(&xd[i * cin * h * wd..(i + 1) * cin * h * wd], cin, &geom, &mut col);
            gemm(wm, MatRef::new(&col, rows, cols), T::zero(), &mut out[i * cout * cols..(i + 1) * cout * cols]);
        }
        if let Some(b) = b {
            let bd = self.data(b);
            for (j, plane) in out.chunks_mut(cols).enumerate() {
                let bias = bd[j % cout];
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
        self.flops.record(kind::CONV2D, (n * cout * cols * rows) as u64);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new([n, cout, oh, ow], out)?, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Transposed convolution. `x: [N,Cin,H,W]`, `w: [Cin,Cout,kh,kw]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Result<Var> {
        let [n, cin, h, wd] = rank4("conv_transpose2d", self.shape(x))?;
        let [wcin, cout, kh, kw] = rank4("conv_transpose2d", self.shape(w))?;
        if wcin != cin {
            return Err(TensorError::mismatch("conv_transpose2d", self.shape(x), self.shape(w)));
        }
        check_bias(self, "conv_transpose2d", b, cout)?;
        let (Some(oh), Some(ow)) = (
            conv_transpose_out_len(h, kh, stride, pad, dilation),
            conv_transpose_out_len(wd, kw, stride, pad, dilation),
        ) else {
            return Err(TensorError::invalid("conv_transpose2d", format!("padding {pad} too large for {h}x{wd}")));
        };
        let geom = ConvGeom { kh, kw, stride, pad, dilation, big: (oh, ow), small: (h, wd) };
        let (rows, cols) = (geom.rows(cout), geom.cols());
        let mut col = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); n * cout * oh * ow];
        let xd = self.data(x);
        let wt = MatRef::new(self.data(w), cin, rows).t();
        for i in 0..n {
            gemm(wt, MatRef::new(&xd[i * cin * cols..(i + 1) * cin * cols], cin, cols), T::zero(), &mut col);
            col2im(&col, cout, &geom, &mut out[i * cout * oh * ow..(i + 1) * cout * oh * ow]);
        }
        if let Some(b) = b {
            let bd = self.data(b);
            for (j, plane) in out.chunks_mut(oh * ow).enumerate() {
                let bias = bd[j % cout];
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
        self.flops.record(kind::CONV_TRANSPOSE2D, (n * cin * cols * rows) as u64);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new([n, cout, oh, ow], out)?, Op::ConvTranspose2d { x, w, b, geom }, rg))
    }

    /// Max pooling without padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = rank4("max_pool2d", self.shape(x))?;
        let (Some(oh), Some(ow)) = (conv_out_len(h, kernel, stride, 0, 1), conv_out_len(w, kernel, stride, 0, 1)) else {
            return Err(TensorError::invalid("max_pool2d", format!("input {h}x{w} smaller than kernel {kernel}")));
        };
        let d = self.data(x);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if d[idx] > d[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new([n, c, oh, ow], out)?, Op::MaxPool2d { x, argmax }, rg))
    }

    /// Depthwise sliding-window correlation of `template: [N,C,h,w]` over
    /// `search: [N,C,H,W]`, stride 1, no padding: `[N,C,H-h+1,W-w+1]`.
    pub fn xcorr_depthwise(&mut self, search: Var, template: Var) -> Result<Var> {
        let [n, c, h, w] = rank4("xcorr", self.shape(search))?;
        let [tn, tc, th, tw] = rank4("xcorr", self.shape(template))?;
        if tn != n || tc != c {
            return Err(TensorError::mismatch("xcorr", self.shape(search), self.shape(template)));
        }
        if th > h || tw > w {
            return Err(TensorError::invalid(
                "xcorr",
                format!("template {th}x{tw} larger than search region {h}x{w}"),
            ));
        }
        let (oh, ow) = (h - th + 1, w - tw + 1);
        let (sd, td) = (self.data(search), self.data(template));
        let mut out = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let s = &sd[plane * h * w..(plane + 1) * h * w];
            let t = &td[plane * th * tw..(plane + 1) * th * tw];
            let o = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for u in 0..th {
                for v in 0..tw {
                    let tv = t[u * tw + v];
                    for i in 0..oh {
                        let srow = &s[(i + u) * w + v..(i + u) * w + v + ow];
                        let orow = &mut o[i * ow..(i + 1) * ow];
                        for (ov, &sv) in orow.iter_mut().zip(srow) {
                            *ov += sv * tv;
                        }
                    }
                }
            }
        }
        self.flops.record(kind::XCORR, (n * c * oh * ow * th * tw) as u64);
        let rg = self.rg(search) || self.rg(template);
        Ok(self.push(Tensor::new([n, c, oh, ow], out)?, Op::XCorr { search, template }, rg))
    }

    /// Corner-aligned bilinear resampling of `x: [N,C,H,W]` to
    /// `[N,C,plan.y.taps.len(),plan.x.taps.len()]`.
    pub fn resample(&mut self, x: Var, plan: ResamplePlan) -> Result<Var> {
        let [n, c, h, w] = rank4("resample", self.shape(x))?;
        if plan.y.src_len != h || plan.x.src_len != w {
            return Err(TensorError::mismatch("resample", &[h, w], &[plan.y.src_len, plan.x.src_len]));
        }
        let (oh, ow) = (plan.y.taps.len(), plan.x.taps.len());
        let d = self.data(x);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let hi = |lo: usize, len: usize| (lo + 1).min(len - 1);
        for plane in 0..n * c {
            let p = &d[plane * h * w..(plane + 1) * h * w];
            for &(y0, fy) in &plan.y.taps {
                let y1 = hi(y0, h);
                let fy = T::c(fy);
                for &(x0, fx) in &plan.x.taps {
                    let x1 = hi(x0, w);
                    let fx = T::c(fx);
                    let top = p[y0 * w + x0] * (T::one() - fx) + p[y0 * w + x1] * fx;
                    let bot = p[y1 * w + x0] * (T::one() - fx) + p[y1 * w + x1] * fx;
                    out.push(top * (T::one() - fy) + bot * fy);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new([n, c, oh, ow], out)?, Op::Resample { x, plan }, rg))
    }

    /// Resize the full extent of `x` to `oh×ow`.
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let [_, _, h, w] = rank4("resize", self.shape(x))?;
        let plan = ResamplePlan {
            y: AxisPlan::new(h, oh, 0.0, (h - 1) as f64)?,
            x: AxisPlan::new(w, ow, 0.0, (w - 1) as f64)?,
        };
        self.resample(x, plan)
    }

    /// Value `hard`, gradient routed to `soft` unchanged.
    pub fn straight_through(&mut self, hard: Tensor<T>, soft: Var) -> Result<Var> {
        if hard.shape() != self.shape(soft) {
            return Err(TensorError::mismatch("straight_through", hard.shape(), self.shape(soft)));
        }
        let rg = self.rg(soft);
        Ok(self.push(hard, Op::StraightThrough { soft }, rg))
    }
}

pub(crate) fn conv2d_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: &ConvGeom,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let [n, cin, h, wd] = rank4("conv2d", tape.shape(x)).expect("checked in forward");
    let cout = tape.shape(w)[0];
    let (rows, cols) = (geom.rows(cin), geom.cols());
    let xd = tape.data(x);
    let wm = MatRef::new(tape.data(w), cout, rows);
    let mut col = vec![T::zero(); rows * cols];
    let mut gw = vec![T::zero(); cout * rows];
    let mut gx = tape.rg(x).then(|| vec![T::zero(); xd.len()]);
    for i in 0..n {
        let gi = MatRef::new(&g[i * cout * cols..(i + 1) * cout * cols], cout, cols);
        if tape.rg(w) {
            im2col(&xd[i * cin * h * wd..(i + 1) * cin * h * wd], cin, geom, &mut col);
            gemm(gi, MatRef::new(&col, rows, cols).t(), T::one(), &mut gw);
        }
        if let Some(gx) = gx.as_mut() {
            gemm(wm.t(), gi, T::zero(), &mut col);
            col2im(&col, cin, geom, &mut gx[i * cin * h * wd..(i + 1) * cin * h * wd]);
        }
    }
    if let Some(gx) = gx {
        tape.accumulate_owned(grads, x, gx);
    }
    tape.accumulate_owned(grads, w, gw);
    if let Some(b) = b {
        let mut gb = vec![T::zero(); cout];
        for (j, plane) in g.chunks(cols).enumerate() {
            gb[j % cout] += plane.iter().copied().sum::<T>();
        }
        tape.accumulate_owned(grads, b, gb);
    }
}

pub(crate) fn conv_transpose2d_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: &ConvGeom,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let [n, cin, _, _] = rank4("conv_transpose2d", tape.shape(x)).expect("checked in forward");
    let cout = tape.shape(w)[1];
    let (rows, cols) = (geom.rows(cout), geom.cols());
    let big = geom.big.0 * geom.big.1;
    let xd = tape.data(x);
    let wm = MatRef::new(tape.data(w), cin, rows);
    let mut dcol = vec![T::zero(); rows * cols];
    let mut gw = vec![T::zero(); cin * rows];
    let mut gx = vec![T::zero(); xd.len()];
    for i in 0..n {
        im2col(&g[i * cout * big..(i + 1) * cout * big], cout, geom, &mut dcol);
        let dm = MatRef::new(&dcol, rows, cols);
        if tape.rg(x) {
            gemm(wm, dm, T::zero(), &mut gx[i * cin * cols..(i + 1) * cin * cols]);
        }
        if tape.rg(w) {
            gemm(MatRef::new(&xd[i * cin * cols..(i + 1) * cin * cols], cin, cols), dm.t(), T::one(), &mut gw);
        }
    }
    tape.accumulate_owned(grads, x, gx);
    tape.accumulate_owned(grads, w, gw);
    if let Some(b) = b {
        let mut gb = vec![T::zero(); cout];
        for (j, plane) in g.chunks(big).enumerate() {
            gb[j % cout] += plane.iter().copied().sum::<T>();
        }
        tape.accumulate_owned(grads, b, gb);
    }
}

pub(crate) fn xcorr_backward<T: Element>(
    tape: &Tape<T>,
    search: Var,
    template: Var,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let [n, c, h, w] = rank4("xcorr", tape.shape(search)).expect("checked in forward");
    let [_, _, th, tw] = rank4("xcorr", tape.shape(template)).expect("checked in forward");
    let (oh, ow) = (h - th + 1, w - tw + 1);
    let (sd, td) = (tape.data(search), tape.data(template));
    let mut gs = vec![T::zero(); sd.len()];
    let mut gt = vec![T::zero(); td.len()];
    for plane in 0..n * c {
        let s = &sd[plane * h * w..(plane + 1) * h * w];
        let t = &td[plane * th * tw..(plane + 1) * th * tw];
        let go = &g[plane * oh * ow..(plane + 1) * oh * ow];
        let gsp = &mut gs[plane * h * w..(plane + 1) * h * w];
        let gtp = &mut gt[plane * th * tw..(plane + 1) * th * tw];
        for u in 0..th {
            for v in 0..tw {
                let tv = t[u * tw + v];
                let mut acc = T::zero();
                for i in 0..oh {
                    let row = (i + u) * w + v;
                    for j in 0..ow {
                        let gv = go[i * ow + j];
                        gsp[row + j] += gv * tv;
                        acc += gv * s[row + j];
                    }
                }
                gtp[u * tw + v] += acc;
            }
        }
    }
    tape.accumulate_owned(grads, search, gs);
    tape.accumulate_owned(grads, template, gt);
}

pub(crate) fn resample_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    plan: &ResamplePlan,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let [n, c, h, w] = rank4("resample", tape.shape(x)).expect("checked in forward");
    let (oh, ow) = (plan.y.taps.len(), plan.x.taps.len());
    let mut gx = vec![T::zero(); n * c * h * w];
    let hi = |lo: usize, len: usize| (lo + 1).min(len - 1);
    for plane in 0..n * c {
        let gp = &mut gx[plane * h * w..(plane + 1) * h * w];
        let go = &g[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, fy)) in plan.y.taps.iter().enumerate() {
            let y1 = hi(y0, h);
            let fy = T::c(fy);
            for (ox, &(x0, fx)) in plan.x.taps.iter().enumerate() {
                let x1 = hi(x0, w);
                let fx = T::c(fx);
                let v = go[oy * ow + ox];
                gp[y0 * w + x0] += v * (T::one() - fy) * (T::one() - fx);
                gp[y0 * w + x1] += v * (T::one() - fy) * fx;
                gp[y1 * w + x0] += v * fy * (T::one() - fx);
                gp[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    tape.accumulate_owned(grads, x, gx);
}
