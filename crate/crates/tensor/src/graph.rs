//! Reverse-mode differentiation over a flat tape of tensor operations.

use std::sync::Arc;

use rayon::prelude::*;

use crate::conv::{conv2d, conv2d_backward, ConvSpec, WeightMode};
use crate::error::{Result, TensorError};
use crate::pool;
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
        mode: WeightMode,
    },
    AvgPool2(Var),
    Upsample2(Var),
    MaxPool2 {
        x: Var,
        arg: Vec<u32>,
    },
    AdaptiveAvgPool(Var),
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    ChannelAffine {
        x: Var,
        scale: Vec<f64>,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Reshape(Var),
    SelectBatch {
        x: Var,
        index: usize,
    },
    Norm(Var),
    Div(Var, Var),
    Sum(Vec<Var>),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op,
    requires_grad: bool,
}

/// Tape of values and the operations that produced them.
///
/// Forward methods evaluate eagerly and record enough to run
/// [`Graph::backward`]. Gradients only flow into nodes that (transitively)
/// depend on a leaf created with `requires_grad`.
pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.constant_shared(Arc::new(value))
    }

    pub fn constant_shared(&mut self, value: Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.conv_impl(x, w, b, spec, WeightMode::Shared)
    }

    /// Convolution with a distinct kernel per sample: `w` is
    /// `[n, cout, cin/groups, k, k]`, `b` is `[n, cout]`.
    pub fn conv2d_per_sample(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.conv_impl(x, w, b, spec, WeightMode::PerSample)
    }

    fn conv_impl(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec, mode: WeightMode) -> Result<Var> {
        let out = conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec, mode)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv { x, w, b, spec, mode }, &inputs))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = pool::avg_pool2(self.value(x))?;
        Ok(self.push(out, Op::AvgPool2(x), &[x]))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let out = pool::upsample2(self.value(x))?;
        Ok(self.push(out, Op::Upsample2(x), &[x]))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, arg) = pool::max_pool2(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { x, arg }, &[x]))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let out = pool::adaptive_avg_pool(self.value(x), oh, ow)?;
        Ok(self.push(out, Op::AdaptiveAvgPool(x), &[x]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64_lossy(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T + Sync + Send) -> Tensor<T> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .par_iter()
            .zip(bv.data().par_iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(av.shape(), data).expect("matching shapes")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64_lossy(factor);
        let out = self.value(x).map(|v| v * f);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    /// `y[n, c] = x[n, c] * scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let [_, c, h, w] = self.value(x).dims4()?;
        if scale.len() != c || shift.len() != c {
            return Err(TensorError::shape(
                "channel_affine",
                format!("{c} channels, {} scales, {} shifts", scale.len(), shift.len()),
            ));
        }
        let plane = h * w;
        let mut out = self.value(x).clone();
        for (p, chunk) in out.data_mut().chunks_mut(plane.max(1)).enumerate() {
            let ch = p % c;
            let (s, t) = (T::from_f64_lossy(scale[ch]), T::from_f64_lossy(shift[ch]));
            chunk.iter_mut().for_each(|v| *v = *v * s + t);
        }
        Ok(self.push(
            out,
            Op::ChannelAffine {
                x,
                scale: scale.to_vec(),
            },
            &[x],
        ))
    }

    /// Clamps to `[lo, hi]`; the gradient is zero wherever the input lies
    /// strictly outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        let out = self.value(x).map(|v| v.max(l).min(h));
        self.push(out, Op::Clamp { x, lo, hi }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Sample `index` of the leading dimension (kept as size 1).
    pub fn select_batch(&mut self, x: Var, index: usize) -> Result<Var> {
        let out = self.value(x).batch_item(index)?;
        Ok(self.push(out, Op::SelectBatch { x, index }, &[x]))
    }

    /// Euclidean norm over every element, as a one-element tensor.
    pub fn norm(&mut self, x: Var) -> Var {
        let ss: f64 = self
            .value(x)
            .data()
            .iter()
            .map(|v| {
                let f = v.to_f64_lossy();
                f * f
            })
            .sum();
        let out = Tensor::scalar(T::from_f64_lossy(ss.sqrt()));
        self.push(out, Op::Norm(x), &[x])
    }

    /// Quotient of two one-element tensors.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).numel() != 1 || self.value(b).numel() != 1 {
            return Err(TensorError::shape("div", "operands must be scalars"));
        }
        let out = Tensor::scalar(self.scalar(a) / self.scalar(b));
        Ok(self.push(out, Op::Div(a, b), &[a, b]))
    }

    /// Elementwise sum of equally shaped nodes, left to right.
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let first = *terms.first().ok_or_else(|| TensorError::invalid("sum", "no terms"))?;
        let mut acc = self.value(first).clone();
        for &t in &terms[1..] {
            self.same_shape("sum", first, t)?;
            acc.data_mut()
                .iter_mut()
                .zip(self.value(t).data())
                .for_each(|(a, &b)| *a += b);
        }
        Ok(self.push(acc, Op::Sum(terms.to_vec()), terms))
    }

    /// Adds a constant to a scalar node.
    pub fn add_constant(&mut self, x: Var, c: f64) -> Result<Var> {
        let k = self.constant(Tensor::full(self.shape(x), T::from_f64_lossy(c)));
        self.add(x, k)
    }

    /// Gradients of the one-element node `loss` with respect to every node
    /// that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::shape("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &dy, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec, mode } => {
                let g = conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    dy,
                    *spec,
                    *mode,
                    self.needs(*x),
                    self.needs(*w),
                    b.is_some_and(|b| self.needs(b)),
                )?;
                if let Some(dx) = g.dx {
                    accumulate(grads, *x, dx);
                }
                if let Some(dw) = g.dw {
                    accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, g.db) {
                    let db = db.reshape(self.shape(*b))?;
                    accumulate(grads, *b, db);
                }
            }
            Op::AvgPool2(x) => {
                let dx = pool::avg_pool2_backward(dy, self.shape(*x));
                accumulate(grads, *x, dx);
            }
            Op::Upsample2(x) => {
                let dx = pool::upsample2_backward(dy, self.shape(*x));
                accumulate(grads, *x, dx);
            }
            Op::MaxPool2 { x, arg } => {
                let dx = pool::max_pool2_backward(dy, arg, self.shape(*x));
                accumulate(grads, *x, dx);
            }
            Op::AdaptiveAvgPool(x) => {
                let dx = pool::adaptive_avg_pool_backward(dy, self.shape(*x));
                accumulate(grads, *x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                let s = T::from_f64_lossy(*slope);
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .par_iter()
                    .zip(dy.data().par_iter())
                    .map(|(&v, &g)| if v > T::zero() { g } else { g * s })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(xv.shape(), data)?);
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, dy.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, dy.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, dy.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, dy.map(|g| -g));
                }
            }
            Op::Scale(x, f) => {
                let f = T::from_f64_lossy(*f);
                accumulate(grads, *x, dy.map(|g| g * f));
            }
            Op::ChannelAffine { x, scale } => {
                let [_, c, h, w] = dy.dims4()?;
                let mut dx = dy.clone();
                for (p, chunk) in dx.data_mut().chunks_mut((h * w).max(1)).enumerate() {
                    let s = T::from_f64_lossy(scale[p % c]);
                    chunk.iter_mut().for_each(|v| *v *= s);
                }
                accumulate(grads, *x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let (l, h) = (T::from_f64_lossy(*lo), T::from_f64_lossy(*hi));
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v < l || v > h { T::zero() } else { g })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(xv.shape(), data)?);
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, dy.clone().reshape(self.shape(*x))?);
            }
            Op::SelectBatch { x, index } => {
                let shape = self.shape(*x);
                let per = dy.numel();
                let mut dx = Tensor::zeros(shape);
                dx.data_mut()[index * per..(index + 1) * per].copy_from_slice(dy.data());
                accumulate(grads, *x, dx);
            }
            Op::Norm(x) => {
                let n = out.data()[0];
                let g = dy.data()[0];
                let xv = self.value(*x);
                let dx = if n > T::zero() {
                    xv.map(|v| g * v / n)
                } else {
                    Tensor::zeros(xv.shape())
                };
                accumulate(grads, *x, dx);
            }
            Op::Div(a, b) => {
                let (av, bv, g) = (self.scalar(*a), self.scalar(*b), dy.data()[0]);
                if self.needs(*a) {
                    accumulate(grads, *a, Tensor::full(self.shape(*a), g / bv));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, Tensor::full(self.shape(*b), -g * av / (bv * bv)));
                }
            }
            Op::Sum(terms) => {
                for &t in terms {
                    if self.needs(t) {
                        accumulate(grads, t, dy.clone());
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Graph::backward`]; holds gradients for leaves that required
/// them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
