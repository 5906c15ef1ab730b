//! Dynamic reverse-mode tape.
//!
//! Each forward op appends a node holding its value and the references it
//! needs for the backward pass. The graph is rebuilt on every forward, so
//! token counts and window layouts may change from call to call.

use std::collections::HashMap;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::flops::FlopCounter;
use crate::ops::conv::{ConvGeom, ResamplePlan};
use crate::ops::elementwise::{BinaryKind, UnaryKind};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Detach,
    Binary { kind: BinaryKind, a: Var, b: Var },
    Unary { kind: UnaryKind, x: Var },
    Sum { x: Var },
    Mean { x: Var },
    SumAxis { x: Var, axis: usize },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    BroadcastTo { x: Var },
    IndexSelect { x: Var, indices: Vec<usize> },
    MatMul { a: Var, b: Var },
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, rstd: Vec<T> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    XCorr { search: Var, template: Var },
    Resample { x: Var, plan: ResamplePlan },
    StraightThrough { soft: Var },
}

#[derive(Debug, Clone)]
pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
    pub param: Option<ParamId>,
}

/// Gradient tape. Confined to one thread; build one per forward pass.
#[derive(Debug, Default)]
pub struct Tape<T: Element> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<ParamId, Var>,
    params_trainable: bool,
    pub(crate) flops: FlopCounter,
}

impl<T: Element> Tape<T> {
    /// Tape whose parameters require gradients.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            params_trainable: true,
            flops: FlopCounter::default(),
        }
    }

    /// Tape that treats parameters as constants (frozen-weight inference).
    pub fn inference() -> Self {
        Tape { params_trainable: false, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is retained (inputs under verification).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut value = store.get(id).clone();
        value.clear_grad();
        let v = self.push(value, Op::Leaf, self.params_trainable);
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        Ok(self.param(store, id))
    }

    /// Copy of `x` cut off from the graph.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Detach, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn flops(&self) -> &FlopCounter {
        &self.flops
    }

    pub fn flops_mut(&mut self) -> &mut FlopCounter {
        &mut self.flops
    }

    /// Reverse sweep from a scalar `loss`. Nodes are visited once each, in
    /// reverse creation order; detached values and constants act as
    /// constants.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the gradients of the last backward into the parameter store.
    pub fn write_param_grads(&self, store: &mut ParamStore<T>) {
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                store.get_mut(id).accumulate_grad(g);
            }
        }
    }

    /// `backward` followed by `write_param_grads`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?;
        self.write_param_grads(store);
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        use crate::ops::{conv, elementwise as ew, linalg, shape};
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::Binary { kind, a, b } => ew::binary_backward(self, *kind, *a, *b, &node.value, g, grads),
            Op::Unary { kind, x } => ew::unary_backward(self, *kind, *x, &node.value, g, grads),
            Op::Sum { x } => {
                let gx = vec![g[0]; self.value(*x).len()];
                self.accumulate(grads, *x, &gx);
            }
            Op::Mean { x } => {
                let n = self.value(*x).len();
                let gx = vec![g[0] / T::c(n as f64); n];
                self.accumulate(grads, *x, &gx);
            }
            Op::SumAxis { x, axis } => shape::sum_axis_backward(self, *x, *axis, g, grads),
            Op::Reshape { x } => self.accumulate(grads, *x, g),
            Op::Permute { x, axes } => shape::permute_backward(self, *x, axes, g, grads),
            Op::Concat { xs, axis } => shape::concat_backward(self, xs, *axis, &node.value, g, grads),
            Op::Slice { x, axis, start } => shape::slice_backward(self, *x, *axis, *start, &node.value, g, grads),
            Op::BroadcastTo { x } => shape::broadcast_backward(self, *x, &node.value, g, grads),
            Op::IndexSelect { x, indices } => shape::index_select_backward(self, *x, indices, g, grads),
            Op::MatMul { a, b } => linalg::matmul_backward(self, *a, *b, g, grads),
            Op::Softmax { x } => linalg::softmax_backward(self, *x, &node.value, g, grads),
            Op::LayerNorm { x, gamma, beta, rstd } => {
                linalg::layer_norm_backward(self, *x, *gamma, *beta, rstd, g, grads)
            }
            Op::Conv2d { x, w, b, geom } => conv::conv2d_backward(self, *x, *w, *b, geom, g, grads),
            Op::ConvTranspose2d { x, w, b, geom } => {
                conv::conv_transpose2d_backward(self, *x, *w, *b, geom, g, grads)
            }
            Op::MaxPool2d { x, argmax } => {
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += g[o];
                }
                self.accumulate(grads, *x, &gx);
            }
            Op::XCorr { search, template } => conv::xcorr_backward(self, *search, *template, g, grads),
            Op::Resample { x, plan } => conv::resample_backward(self, *x, plan, g, grads),
            Op::StraightThrough { soft } => self.accumulate(grads, *soft, g),
        }
    }

    pub(crate) fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn accumulate_owned(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}
