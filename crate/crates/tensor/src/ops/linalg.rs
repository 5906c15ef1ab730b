use crate::element::{gemm, Element, MatRef};
use crate::error::{Result, TensorError};
use crate::flops::kind;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

fn last_dim(shape: &[usize]) -> (usize, usize) {
    let c = *shape.last().expect("non-empty shape");
    (shape.iter().product::<usize>() / c, c)
}

impl<T: Element> Tape<T> {
    /// `(m×k)·(k×n)`, counted as `m·k·n` MACs under [`kind::MATMUL`].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_as(a, b, kind::MATMUL)
    }

    /// Matmul whose MACs are reported under a caller-chosen op kind.
    pub fn matmul_as(&mut self, a: Var, b: Var, flop_kind: &str) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::mismatch("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(MatRef::new(self.data(a), m, k), MatRef::new(self.data(b), k, n), T::zero(), &mut out);
        self.flops.record(flop_kind, (m * k * n) as u64);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul { a, b }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let (rows, c) = last_dim(&shape);
        let d = self.data(x);
        let mut out = vec![T::zero(); d.len()];
        for r in 0..rows {
            let row = &d[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (o, &v) in out[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = (v - mx).exp();
                z += *o;
            }
            out[r * c..(r + 1) * c].iter_mut().for_each(|o| *o = *o / z);
        }
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Softmax { x }, rg)
    }

    /// Per-row normalization over the last axis followed by `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, c) = last_dim(&shape);
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(TensorError::mismatch("layer_norm", &shape, self.shape(p)));
            }
        }
        let (d, gm, bt) = (self.data(x), self.data(gamma), self.data(beta));
        let mut out = vec![T::zero(); d.len()];
        let mut rstd = Vec::with_capacity(rows);
        let cn = T::c(c as f64);
        for r in 0..rows {
            let row = &d[r * c..(r + 1) * c];
            let mu = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / cn;
            let rs = T::one() / (var + T::c(eps)).sqrt();
            rstd.push(rs);
            for j in 0..c {
                out[r * c + j] = (row[j] - mu) * rs * gm[j] + bt[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gamma, beta, rstd }, rg))
    }
}

pub(crate) fn matmul_backward<T: Element>(tape: &Tape<T>, a: Var, b: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let gm = MatRef::new(g, m, n);
    if tape.rg(a) {
        let mut ga = vec![T::zero(); m * k];
        gemm(gm, MatRef::new(tape.data(b), k, n).t(), T::zero(), &mut ga);
        tape.accumulate_owned(grads, a, ga);
    }
    if tape.rg(b) {
        let mut gb = vec![T::zero(); k * n];
        gemm(MatRef::new(tape.data(a), m, k).t(), gm, T::zero(), &mut gb);
        tape.accumulate_owned(grads, b, gb);
    }
}

pub(crate) fn softmax_backward<T: Element>(tape: &Tape<T>, x: Var, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let (rows, c) = last_dim(out.shape());
    let y = out.data();
    let mut gx = vec![T::zero(); y.len()];
    for r in 0..rows {
        let s = r * c;
        let dot = (0..c).map(|j| g[s + j] * y[s + j]).sum::<T>();
        for j in 0..c {
            gx[s + j] = y[s + j] * (g[s + j] - dot);
        }
    }
    tape.accumulate_owned(grads, x, gx);
}

pub(crate) fn layer_norm_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    rstd: &[T],
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let (rows, c) = last_dim(tape.shape(x));
    let (d, gm) = (tape.data(x), tape.data(gamma));
    let cn = T::c(c as f64);
    let mut gx = vec![T::zero(); d.len()];
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); c];
    let mut dxhat = vec![T::zero(); c];
    for r in 0..rows {
        let s = r * c;
        let row = &d[s..s + c];
        let mu = row.iter().copied().sum::<T>() / cn;
        for j in 0..c {
            xhat[j] = (row[j] - mu) * rstd[r];
            dxhat[j] = g[s + j] * gm[j];
            ggamma[j] += g[s + j] * xhat[j];
            gbeta[j] += g[s + j];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / cn;
        let mean_dx = (0..c).map(|j| dxhat[j] * xhat[j]).sum::<T>() / cn;
        for j in 0..c {
            gx[s + j] = rstd[r] * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    }
    tape.accumulate_owned(grads, x, gx);
    tape.accumulate_owned(grads, gamma, ggamma);
    tape.accumulate_owned(grads, beta, gbeta);
}
