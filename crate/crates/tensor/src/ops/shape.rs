use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::elementwise::{broadcast_map, broadcast_shape, reduce_to};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{numel, strides, Tensor};

/// (outer, axis, inner) extents around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = shape.len();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..n {
        out.push(data[pos]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            pos += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            pos -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

impl<T: Element> Tape<T> {
    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().copied().sum::<T>() / T::c(d.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean { x }, rg)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("sum_axis", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = split(&shape, axis);
        let d = self.data(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::SumAxis { x, axis }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| TensorError::invalid("mean_axis", format!("axis {axis} out of range")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / len as f64))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if shape.is_empty() || shape.contains(&0) || numel(shape) != numel(&src) {
            return Err(TensorError::mismatch("reshape", &src, shape));
        }
        let data = self.data(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::Reshape { x }, rg))
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::invalid("permute", format!("axes {axes:?} for shape {shape:?}")));
        }
        let (data, out_shape) = permute_data(self.data(x), &shape, axes);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Permute { x, axes: axes.to_vec() }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(TensorError::invalid("transpose", "rank must be at least 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| TensorError::invalid("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} for shape {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split(&out_shape, axis);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * len..(o + 1) * len]);
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::invalid(
                "slice",
                format!("[{start}..{}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = split(&shape, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Slice { x, axis, start }, rg))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        match broadcast_shape(&src, shape) {
            Some(s) if s == shape => {}
            _ => return Err(TensorError::mismatch("broadcast_to", &src, shape)),
        }
        let d = self.data(x);
        let out: Vec<T> = broadcast_map(shape, &src).into_iter().map(|i| d[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape.to_vec(), out)?, Op::BroadcastTo { x }, rg))
    }

    /// Gathers slices along axis 0; indices may repeat.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if indices.is_empty() {
            return Err(TensorError::invalid("index_select", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[0]) {
            return Err(TensorError::invalid("index_select", format!("index {bad} >= {}", shape[0])));
        }
        let inner = numel(&shape[1..]);
        let d = self.data(x);
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            out.extend_from_slice(&d[i * inner..(i + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::IndexSelect { x, indices: indices.to_vec() }, rg))
    }
}

pub(crate) fn sum_axis_backward<T: Element>(tape: &Tape<T>, x: Var, axis: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let shape = tape.shape(x);
    let (outer, len, inner) = split(shape, axis);
    let mut gx = vec![T::zero(); numel(shape)];
    for o in 0..outer {
        for a in 0..len {
            let base = (o * len + a) * inner;
            gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
        }
    }
    tape.accumulate_owned(grads, x, gx);
}

pub(crate) fn permute_backward<T: Element>(tape: &Tape<T>, x: Var, axes: &[usize], g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| tape.shape(x)[a]).collect();
    let mut inverse = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    let (gx, _) = permute_data(g, &out_shape, &inverse);
    tape.accumulate_owned(grads, x, gx);
}

pub(crate) fn concat_backward<T: Element>(
    tape: &Tape<T>,
    xs: &[Var],
    axis: usize,
    out: &Tensor<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let (outer, total, inner) = split(out.shape(), axis);
    let mut offset = 0;
    for &v in xs {
        let len = tape.shape(v)[axis];
        if tape.rg(v) {
            let mut gv = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * total + offset) * inner;
                gv.extend_from_slice(&g[base..base + len * inner]);
            }
            tape.accumulate_owned(grads, v, gv);
        }
        offset += len;
    }
}

pub(crate) fn slice_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    axis: usize,
    start: usize,
    out: &Tensor<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let shape = tape.shape(x);
    let (outer, full, inner) = split(shape, axis);
    let len = out.shape()[axis];
    let mut gx = vec![T::zero(); numel(shape)];
    for o in 0..outer {
        let base = (o * full + start) * inner;
        gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    tape.accumulate_owned(grads, x, gx);
}

pub(crate) fn broadcast_backward<T: Element>(tape: &Tape<T>, x: Var, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let gx = reduce_to(g, out.shape(), tape.shape(x));
    tape.accumulate_owned(grads, x, gx);
}

pub(crate) fn index_select_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    indices: &[usize],
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let shape = tape.shape(x);
    let inner = numel(&shape[1..]);
    let mut gx = vec![T::zero(); numel(shape)];
    for (r, &i) in indices.iter().enumerate() {
        for k in 0..inner {
            gx[i * inner + k] += g[r * inner + k];
        }
    }
    tape.accumulate_owned(grads, x, gx);
}
