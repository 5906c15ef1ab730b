use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{numel, strides, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Neg,
    Exp,
    Log,
    Relu,
    Sigmoid,
    Softplus,
    Scale(f64),
    Offset(f64),
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
            BinaryKind::Min => "minimum",
        }
    }

    #[inline]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
            BinaryKind::Min => {
                if b < a {
                    b
                } else {
                    a
                }
            }
        }
    }
}

/// Numpy-style broadcast of two shapes (trailing alignment).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat index of `out`, the flat index of the broadcast source.
pub(crate) fn broadcast_map(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let off = rank - src.len();
    let src_strides = strides(src);
    let mut eff = vec![0usize; rank];
    for i in 0..src.len() {
        eff[off + i] = if src[i] == 1 { 0 } else { src_strides[i] };
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..n {
        map.push(pos);
        for d in (0..rank).rev() {
            idx[d] += 1;
            pos += eff[d];
            if idx[d] < out[d] {
                break;
            }
            pos -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

pub(crate) fn reduce_to<T: Element>(g: &[T], out_shape: &[usize], src_shape: &[usize]) -> Vec<T> {
    if out_shape == src_shape {
        return g.to_vec();
    }
    let map = broadcast_map(out_shape, src_shape);
    let mut r = vec![T::zero(); numel(src_shape)];
    for (o, &s) in map.iter().enumerate() {
        r[s] += g[o];
    }
    r
}

fn softplus<T: Element>(x: T) -> T {
    // log(1 + e^x) without overflow
    let zero = T::zero();
    x.max(zero) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Element> Tape<T> {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape =
            broadcast_shape(&sa, &sb).ok_or_else(|| TensorError::mismatch(kind.name(), &sa, &sb))?;
        let (da, db) = (self.data(a), self.data(b));
        let data: Vec<T> = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| kind.apply(x, y)).collect()
        } else {
            let ma = broadcast_map(&out_shape, &sa);
            let mb = broadcast_map(&out_shape, &sb);
            ma.iter().zip(&mb).map(|(&i, &j)| kind.apply(da[i], db[j])).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Binary { kind, a, b }, rg))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Min, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let src = self.value(x);
        let f = |v: T| -> T {
            match kind {
                UnaryKind::Neg => -v,
                UnaryKind::Exp => v.exp(),
                UnaryKind::Log => v.ln(),
                UnaryKind::Relu => v.max(T::zero()),
                UnaryKind::Sigmoid => sigmoid(v),
                UnaryKind::Softplus => softplus(v),
                UnaryKind::Scale(c) => v * T::c(c),
                UnaryKind::Offset(c) => v + T::c(c),
            }
        };
        let data: Vec<T> = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Unary { kind, x }, rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Log, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), x)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Offset(c), x)
    }
}

pub(crate) fn binary_backward<T: Element>(
    tape: &Tape<T>,
    kind: BinaryKind,
    a: Var,
    b: Var,
    out: &Tensor<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let (va, vb) = (tape.value(a), tape.value(b));
    let out_shape = out.shape();
    let same = va.shape() == vb.shape();
    let (ma, mb) = if same {
        (None, None)
    } else {
        (Some(broadcast_map(out_shape, va.shape())), Some(broadcast_map(out_shape, vb.shape())))
    };
    let ia = |o: usize| ma.as_ref().map_or(o, |m| m[o]);
    let ib = |o: usize| mb.as_ref().map_or(o, |m| m[o]);
    let (da, db) = (va.data(), vb.data());
    let n = g.len();
    let (mut ga, mut gb) = (vec![T::zero(); n], vec![T::zero(); n]);
    for o in 0..n {
        let (x, y) = (da[ia(o)], db[ib(o)]);
        let (pa, pb) = match kind {
            BinaryKind::Add => (T::one(), T::one()),
            BinaryKind::Sub => (T::one(), -T::one()),
            BinaryKind::Mul => (y, x),
            BinaryKind::Div => (T::one() / y, -x / (y * y)),
            BinaryKind::Min => {
                if y < x {
                    (T::zero(), T::one())
                } else {
                    (T::one(), T::zero())
                }
            }
        };
        ga[o] = g[o] * pa;
        gb[o] = g[o] * pb;
    }
    if tape.rg(a) {
        let r = if same { ga } else { reduce_to(&ga, out_shape, va.shape()) };
        tape.accumulate_owned(grads, a, r);
    }
    if tape.rg(b) {
        let r = if same { gb } else { reduce_to(&gb, out_shape, vb.shape()) };
        tape.accumulate_owned(grads, b, r);
    }
}

pub(crate) fn unary_backward<T: Element>(
    tape: &Tape<T>,
    kind: UnaryKind,
    x: Var,
    out: &Tensor<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let xs = tape.data(x);
    let ys = out.data();
    let gx: Vec<T> = (0..g.len())
        .map(|i| {
            let d = match kind {
                UnaryKind::Neg => -T::one(),
                UnaryKind::Exp => ys[i],
                UnaryKind::Log => T::one() / xs[i],
                UnaryKind::Relu => {
                    if xs[i] > T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
                UnaryKind::Sigmoid => ys[i] * (T::one() - ys[i]),
                UnaryKind::Softplus => sigmoid(xs[i]),
                UnaryKind::Scale(c) => T::c(c),
                UnaryKind::Offset(_) => T::one(),
            };
            g[i] * d
        })
        .collect();
    tape.accumulate_owned(grads, x, gx);
}
