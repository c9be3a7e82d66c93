use std::collections::BTreeMap;

use super::kernels::{col2im, conv_out_size, deconv_out_size, gemm, im2col, Window};
use super::params::ParamStore;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op whose forward and backward rules live outside the tape.
///
/// `backward` returns one optional gradient per input, shaped like that
/// input; `None` means the input receives no contribution.
pub trait CustomOp<T: Element> {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
    ) -> Result<Vec<Option<Vec<T>>>>;
}

/// Per-channel statistics of a training-mode batchnorm call.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<T>,
}

enum Op<T: Element> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Square(Var),
    SumAll(Var),
    SumLast(Var),
    RowNorm(Var),
    NormalizeRows { x: Var, eps: T },
    Reshape(Var),
    SelectRows { x: Var, rows: Vec<usize> },
    Gather1 { x: Var, idx: Vec<usize> },
    Dense { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Deconv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    LeakyRelu { x: Var, slope: T },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Mse(Var, Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

impl<T: Element> Op<T> {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Square(_) => "square",
            Op::SumAll(_) => "sum",
            Op::SumLast(_) => "sum_last",
            Op::RowNorm(_) => "row_norm",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::Reshape(_) => "reshape",
            Op::SelectRows { .. } => "select_rows",
            Op::Gather1 { .. } => "gather",
            Op::Dense { .. } => "dense",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Mse(..) => "mse",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation as it executes so it can be differentiated once.
///
/// Nodes are appended in execution order, so every input id is smaller than
/// the id of the node consuming it.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn batch_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w, false)),
        [b, c, h, w] => Ok((b, c, h, w, true)),
        _ => Err(Error::dim(format!("expected C×H×W or B×C×H×W input, got {shape:?}"))),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: BTreeMap::new(), grads: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let grad = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.nodes[v.0].value.shape(), grad.clone()).ok()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!("{} produced a non-finite value", op.name())));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter as a leaf. Binding the same name twice
    /// returns the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name:?}")))?;
        let v = if p.trainable { self.leaf(p.value.clone()) } else { self.constant(p.value.clone()) };
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!("{op}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape(), data)?;
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    /// Sums over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = *v.shape().last().expect("non-empty shape");
        let data: Vec<T> = v.data().chunks(d).map(|c| c.iter().copied().sum()).collect();
        let shape = reduced_shape(v.shape());
        self.push(Tensor::new(&shape, data)?, Op::SumLast(x), &[x])
    }

    /// Euclidean norm over the last axis; the gradient at a zero row is zero.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = *v.shape().last().expect("non-empty shape");
        let data: Vec<T> =
            v.data().chunks(d).map(|c| c.iter().map(|&e| e * e).sum::<T>().sqrt()).collect();
        let shape = reduced_shape(v.shape());
        self.push(Tensor::new(&shape, data)?, Op::RowNorm(x), &[x])
    }

    /// Scales each row of the last axis to unit length: `x / sqrt(|x|² + eps)`.
    pub fn normalize_rows(&mut self, x: Var, eps: T) -> Result<Var> {
        let v = self.value(x);
        let d = *v.shape().last().expect("non-empty shape");
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(d) {
            let n = (row.iter().map(|&e| e * e).sum::<T>() + eps).sqrt();
            row.iter_mut().for_each(|e| *e = *e / n);
        }
        let out = Tensor::new(v.shape(), data)?;
        self.push(out, Op::NormalizeRows { x, eps }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape(x), &[x])
    }

    /// Rows along the first axis, in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::dim("select_rows with no rows"));
        }
        let out = self.value(x).select_rows(rows)?;
        self.push(out, Op::SelectRows { x, rows: rows.to_vec() }, &[x])
    }

    /// `out[b, i, :] = x[b, idx[i], :]` for a `B×J×D` input.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let [b, j, d] = *v.shape() else {
            return Err(Error::dim(format!("gather expects B×J×D, got {:?}", v.shape())));
        };
        if idx.is_empty() || idx.iter().any(|&i| i >= j) {
            return Err(Error::dim(format!("gather indices out of range for {j} rows")));
        }
        let mut data = Vec::with_capacity(b * idx.len() * d);
        for bi in 0..b {
            for &i in idx {
                let start = (bi * j + i) * d;
                data.extend_from_slice(&v.data()[start..start + d]);
            }
        }
        let out = Tensor::new(&[b, idx.len(), d], data)?;
        self.push(out, Op::Gather1 { x, idx: idx.to_vec() }, &[x])
    }

    /// Fully connected layer: `x` is `B×n` (trailing axes are flattened),
    /// `w` is `m×n`, `b` is `m`; output `B×m`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let batch = vx.shape()[0];
        let n = vx.len() / batch;
        let [m, wn] = *vw.shape() else {
            return Err(Error::dim(format!("dense weight must be m×n, got {:?}", vw.shape())));
        };
        if wn != n || vb.len() != m {
            return Err(Error::dim(format!(
                "dense: input {:?}, weight {:?}, bias {:?}",
                vx.shape(),
                vw.shape(),
                vb.shape()
            )));
        }
        let mut out = Vec::with_capacity(batch * m);
        for _ in 0..batch {
            out.extend_from_slice(vb.data());
        }
        gemm(batch, n, m, vx.data(), false, vw.data(), true, T::one(), &mut out);
        let out = Tensor::new(&[batch, m], out)?;
        self.push(out, Op::Dense { x, w, b }, &[x, w, b])
    }

    /// 2D convolution, weight `C_out×C_in×k×k`, zero padding `pad`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (win, batch, out_c, batched) = self.conv_geometry(x, w, b, stride, pad)?;
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let in_len = win.channels * win.height * win.width;
        let p = win.cols();
        let mut cols = vec![T::zero(); win.rows() * p];
        let mut out = vec![T::zero(); batch * out_c * p];
        for bi in 0..batch {
            im2col(&vx.data()[bi * in_len..(bi + 1) * in_len], &win, &mut cols);
            let dst = &mut out[bi * out_c * p..(bi + 1) * out_c * p];
            for (o, row) in dst.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = vb.data()[o]);
            }
            gemm(out_c, win.rows(), p, vw.data(), false, &cols, false, T::one(), dst);
        }
        let shape: Vec<usize> = if batched {
            vec![batch, out_c, win.out_h, win.out_w]
        } else {
            vec![out_c, win.out_h, win.out_w]
        };
        let out = Tensor::new(&shape, out)?;
        self.push(out, Op::Conv2d { x, w, b, stride, pad }, &[x, w, b])
    }

    fn conv_geometry(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<(Window, usize, usize, bool)> {
        let (batch, c, h, wd, batched) = batch_dims(self.value(x).shape())?;
        let &[out_c, in_c, k, k2] = self.value(w).shape() else {
            return Err(Error::dim("conv2d weight must be C_out×C_in×k×k"));
        };
        if in_c != c || k != k2 || self.value(b).len() != out_c {
            return Err(Error::dim(format!(
                "conv2d: input {:?}, weight {:?}, bias {:?}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let out_h = conv_out_size(h, k, stride, pad)
            .ok_or_else(|| Error::dim(format!("conv2d: kernel {k} does not fit {h}×{wd}")))?;
        let out_w = conv_out_size(wd, k, stride, pad)
            .ok_or_else(|| Error::dim(format!("conv2d: kernel {k} does not fit {h}×{wd}")))?;
        let win = Window { channels: c, height: h, width: wd, kernel: k, stride, pad, out_h, out_w };
        Ok((win, batch, out_c, batched))
    }

    fn deconv_geometry(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<(Window, usize, usize, bool)> {
        let (batch, c, h, wd, batched) = batch_dims(self.value(x).shape())?;
        let &[in_c, out_c, k, k2] = self.value(w).shape() else {
            return Err(Error::dim("deconv2d weight must be C_in×C_out×k×k"));
        };
        if in_c != c || k != k2 || self.value(b).len() != out_c {
            return Err(Error::dim(format!(
                "deconv2d: input {:?}, weight {:?}, bias {:?}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let oh = deconv_out_size(h, k, stride, pad)
            .ok_or_else(|| Error::dim("deconv2d: empty output"))?;
        let ow = deconv_out_size(wd, k, stride, pad)
            .ok_or_else(|| Error::dim("deconv2d: empty output"))?;
        // the window runs over the output image and visits every input cell
        let win = Window {
            channels: out_c,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        };
        Ok((win, batch, in_c, batched))
    }

    /// Transposed convolution, weight `C_in×C_out×k×k`.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (win, batch, in_c, batched) = self.deconv_geometry(x, w, b, stride, pad)?;
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let p = win.cols();
        let out_plane = win.height * win.width;
        let out_len = win.channels * out_plane;
        let mut cols = vec![T::zero(); win.rows() * p];
        let mut out = vec![T::zero(); batch * out_len];
        for bi in 0..batch {
            let xb = &vx.data()[bi * in_c * p..(bi + 1) * in_c * p];
            gemm(win.rows(), in_c, p, vw.data(), true, xb, false, T::zero(), &mut cols);
            let dst = &mut out[bi * out_len..(bi + 1) * out_len];
            for (o, plane) in dst.chunks_mut(out_plane).enumerate() {
                plane.iter_mut().for_each(|v| *v = vb.data()[o]);
            }
            col2im(&cols, &win, dst);
        }
        let shape: Vec<usize> = if batched {
            vec![batch, win.channels, win.height, win.width]
        } else {
            vec![win.channels, win.height, win.width]
        };
        let out = Tensor::new(&shape, out)?;
        self.push(out, Op::Deconv2d { x, w, b, stride, pad }, &[x, w, b])
    }

    /// `max(x, slope·x)`; the derivative at zero is taken as 1.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        if !(slope >= T::zero() && slope < T::one()) {
            return Err(Error::arg("leaky_relu slope must lie in [0, 1)"));
        }
        let out = self.value(x).map(|v| if v >= T::zero() { v } else { v * slope });
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    /// Batch normalisation over axis 1 of a `B×C×…` input using batch
    /// statistics. Returns the statistics for running-average updates.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let (batch, channels, inner) = self.bn_dims(x, gamma, beta)?;
        if batch < 2 {
            return Err(Error::arg("batchnorm in train mode needs a batch of at least 2"));
        }
        let vx = self.value(x);
        let n = T::c((batch * inner) as f64);
        let mut mean = vec![T::zero(); channels];
        let mut var = vec![T::zero(); channels];
        for (i, plane) in vx.data().chunks(inner).enumerate() {
            let c = i % channels;
            mean[c] = mean[c] + plane.iter().copied().sum::<T>();
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        for (i, plane) in vx.data().chunks(inner).enumerate() {
            let c = i % channels;
            var[c] = var[c] + plane.iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum::<T>();
        }
        var.iter_mut().for_each(|s| *s = *s / n);
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let stats = BatchStats {
            mean: mean.clone(),
            var: var.iter().map(|&s| s * n / (n - T::one())).collect(),
        };
        let (y, xhat) = self.bn_apply(x, gamma, beta, &mean, &inv_std, channels, inner);
        let out = self.push(
            y,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: true },
            &[x, gamma, beta],
        )?;
        Ok((out, stats))
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, channels, inner) = self.bn_dims(x, gamma, beta)?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(Error::dim("batchnorm running statistics do not match channel count"));
        }
        let inv_std: Vec<T> = running_var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let (y, xhat) = self.bn_apply(x, gamma, beta, running_mean, &inv_std, channels, inner);
        self.push(
            y,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: false },
            &[x, gamma, beta],
        )
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let shape = self.value(x).shape();
        if shape.len() < 2 {
            return Err(Error::dim(format!("batchnorm expects B×C×…, got {shape:?}")));
        }
        let (batch, channels) = (shape[0], shape[1]);
        let inner = shape[2..].iter().product::<usize>();
        if self.value(gamma).len() != channels || self.value(beta).len() != channels {
            return Err(Error::dim("batchnorm gamma/beta must have one value per channel"));
        }
        Ok((batch, channels, inner))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
        channels: usize,
        inner: usize,
    ) -> (Tensor<T>, Vec<T>) {
        let vx = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(vx.len());
        let mut y = Vec::with_capacity(vx.len());
        for (i, plane) in vx.data().chunks(inner).enumerate() {
            let c = i % channels;
            for &v in plane {
                let h = (v - mean[c]) * inv_std[c];
                xhat.push(h);
                y.push(g[c] * h + b[c]);
            }
        }
        (Tensor::new(vx.shape(), y).expect("same shape"), xhat)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (va, vb) = (self.value(a), self.value(b));
        let n = T::c(va.len() as f64);
        let s: T = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        self.push(Tensor::scalar(s / n), Op::Mse(a, b), &[a, b])
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&values)?;
        self.push(out, Op::Custom { inputs: inputs.to_vec(), op }, inputs)
    }

    /// Reverse sweep from a scalar `loss`. Gradients of bound parameters are
    /// accumulated into `store`; gradients of every node stay queryable via
    /// [`Tape::grad`]. A tape can be swept once.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward_only(loss)?;
        for (name, &v) in &self.params {
            if !self.nodes[v.0].requires_grad {
                continue;
            }
            let shape = self.nodes[v.0].value.shape().to_vec();
            let g = match &self.grads[v.0] {
                Some(g) => Tensor::new(&shape, g.clone())?,
                None => Tensor::zeros(&shape),
            };
            store.accumulate_grad(name, &g)?;
        }
        Ok(())
    }

    /// Reverse sweep without touching any parameter store.
    pub fn backward_only(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Gradient("backward already ran on this tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Gradient(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, contrib: &dyn Fn(usize) -> T| {
            if !wants(v) {
                return;
            }
            let len = val(v).len();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
            for (k, s) in slot.iter_mut().enumerate() {
                *s = *s + contrib(k);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|k| g[k]);
                acc(*b, &|k| g[k]);
            }
            Op::Sub(a, b) => {
                acc(*a, &|k| g[k]);
                acc(*b, &|k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &|k| g[k] * vb[k]);
                acc(*b, &|k| g[k] * va[k]);
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &|k| g[k] / vb[k]);
                acc(*b, &|k| -g[k] * va[k] / (vb[k] * vb[k]));
            }
            Op::Scale(x, f) => acc(*x, &|k| g[k] * *f),
            Op::Square(x) => {
                let vx = val(*x).data();
                acc(*x, &|k| g[k] * T::c(2.0) * vx[k]);
            }
            Op::SumAll(x) => acc(*x, &|_| g[0]),
            Op::SumLast(x) => {
                let d = *val(*x).shape().last().expect("shape");
                acc(*x, &|k| g[k / d]);
            }
            Op::RowNorm(x) => {
                let vx = val(*x).data();
                let d = *val(*x).shape().last().expect("shape");
                let norms = node.value.data();
                acc(*x, &|k| {
                    let n = norms[k / d];
                    if n > T::zero() {
                        g[k / d] * vx[k] / n
                    } else {
                        T::zero()
                    }
                });
            }
            Op::NormalizeRows { x, eps } => {
                let vx = val(*x).data();
                let d = *val(*x).shape().last().expect("shape");
                let mut dx = vec![T::zero(); vx.len()];
                for ((row, grow), out) in vx.chunks(d).zip(g.chunks(d)).zip(dx.chunks_mut(d)) {
                    let s: T = row.iter().map(|&e| e * e).sum::<T>() + *eps;
                    let n = s.sqrt();
                    let xg: T = row.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    for ((o, &xi), &gi) in out.iter_mut().zip(row).zip(grow) {
                        *o = gi / n - xi * xg / (n * s);
                    }
                }
                acc(*x, &|k| dx[k]);
            }
            Op::Reshape(x) => acc(*x, &|k| g[k]),
            Op::SelectRows { x, rows } => {
                let total = val(*x).shape()[0];
                let row_len = val(*x).len() / total;
                let mut dx = vec![T::zero(); val(*x).len()];
                for (oi, &r) in rows.iter().enumerate() {
                    for t in 0..row_len {
                        dx[r * row_len + t] = dx[r * row_len + t] + g[oi * row_len + t];
                    }
                }
                acc(*x, &|k| dx[k]);
            }
            Op::Gather1 { x, idx } => {
                let [b, j, d] = *val(*x).shape() else { unreachable!() };
                let mut dx = vec![T::zero(); b * j * d];
                for bi in 0..b {
                    for (oi, &src) in idx.iter().enumerate() {
                        for t in 0..d {
                            let from = (bi * idx.len() + oi) * d + t;
                            let to = (bi * j + src) * d + t;
                            dx[to] = dx[to] + g[from];
                        }
                    }
                }
                acc(*x, &|k| dx[k]);
            }
            Op::Dense { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let batch = vx.shape()[0];
                let n = vx.len() / batch;
                let m = vw.shape()[0];
                if wants(*x) {
                    let mut dx = vec![T::zero(); batch * n];
                    gemm(batch, m, n, g, false, vw.data(), false, T::zero(), &mut dx);
                    acc(*x, &|k| dx[k]);
                }
                if wants(*w) {
                    let mut dw = vec![T::zero(); m * n];
                    gemm(m, batch, n, g, true, vx.data(), false, T::zero(), &mut dw);
                    acc(*w, &|k| dw[k]);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); m];
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                    acc(*b, &|k| db[k]);
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (win, batch, out_c, _) = self.conv_geometry(*x, *w, *b, *stride, *pad)?;
                let (vx, vw) = (val(*x), val(*w));
                let in_len = win.channels * win.height * win.width;
                let p = win.cols();
                let rows = win.rows();
                let mut cols = vec![T::zero(); rows * p];
                let mut dcols = vec![T::zero(); rows * p];
                let mut dw = vec![T::zero(); out_c * rows];
                let mut db = vec![T::zero(); out_c];
                let mut dx = vec![T::zero(); vx.len()];
                for bi in 0..batch {
                    let gb = &g[bi * out_c * p..(bi + 1) * out_c * p];
                    if wants(*w) {
                        im2col(&vx.data()[bi * in_len..(bi + 1) * in_len], &win, &mut cols);
                        gemm(out_c, p, rows, gb, false, &cols, true, T::one(), &mut dw);
                    }
                    for (o, row) in gb.chunks(p).enumerate() {
                        db[o] = db[o] + row.iter().copied().sum::<T>();
                    }
                    if wants(*x) {
                        gemm(rows, out_c, p, vw.data(), true, gb, false, T::zero(), &mut dcols);
                        col2im(&dcols, &win, &mut dx[bi * in_len..(bi + 1) * in_len]);
                    }
                }
                acc(*x, &|k| dx[k]);
                acc(*w, &|k| dw[k]);
                acc(*b, &|k| db[k]);
            }
            Op::Deconv2d { x, w, b, stride, pad } => {
                let (win, batch, in_c, _) = self.deconv_geometry(*x, *w, *b, *stride, *pad)?;
                let (vx, vw) = (val(*x), val(*w));
                let p = win.cols();
                let rows = win.rows();
                let out_plane = win.height * win.width;
                let out_len = win.channels * out_plane;
                let mut dcols = vec![T::zero(); rows * p];
                let mut dw = vec![T::zero(); in_c * rows];
                let mut db = vec![T::zero(); win.channels];
                let mut dx = vec![T::zero(); vx.len()];
                for bi in 0..batch {
                    let gb = &g[bi * out_len..(bi + 1) * out_len];
                    im2col(gb, &win, &mut dcols);
                    let xb = &vx.data()[bi * in_c * p..(bi + 1) * in_c * p];
                    if wants(*x) {
                        let dxb = &mut dx[bi * in_c * p..(bi + 1) * in_c * p];
                        gemm(in_c, rows, p, vw.data(), false, &dcols, false, T::zero(), dxb);
                    }
                    if wants(*w) {
                        gemm(in_c, p, rows, xb, false, &dcols, true, T::one(), &mut dw);
                    }
                    for (o, plane) in gb.chunks(out_plane).enumerate() {
                        db[o] = db[o] + plane.iter().copied().sum::<T>();
                    }
                }
                acc(*x, &|k| dx[k]);
                acc(*w, &|k| dw[k]);
                acc(*b, &|k| db[k]);
            }
            Op::LeakyRelu { x, slope } => {
                let vx = val(*x).data();
                acc(*x, &|k| if vx[k] >= T::zero() { g[k] } else { g[k] * *slope });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let shape = val(*x).shape();
                let channels = shape[1];
                let inner: usize = shape[2..].iter().product();
                let gm = val(*gamma).data();
                let mut sum_g = vec![T::zero(); channels];
                let mut sum_gx = vec![T::zero(); channels];
                for (i, (gp, hp)) in g.chunks(inner).zip(xhat.chunks(inner)).enumerate() {
                    let c = i % channels;
                    sum_g[c] = sum_g[c] + gp.iter().copied().sum::<T>();
                    sum_gx[c] = sum_gx[c] + gp.iter().zip(hp).map(|(&a, &b)| a * b).sum::<T>();
                }
                acc(*gamma, &|c| sum_gx[c]);
                acc(*beta, &|c| sum_g[c]);
                if wants(*x) {
                    let n = T::c((shape[0] * inner) as f64);
                    let mut dx = vec![T::zero(); g.len()];
                    for (i, ((dp, gp), hp)) in
                        dx.chunks_mut(inner).zip(g.chunks(inner)).zip(xhat.chunks(inner)).enumerate()
                    {
                        let c = i % channels;
                        let k = gm[c] * inv_std[c];
                        for ((d, &gk), &h) in dp.iter_mut().zip(gp).zip(hp) {
                            *d = if *train { k / n * (n * gk - sum_g[c] - h * sum_gx[c]) } else { k * gk };
                        }
                    }
                    acc(*x, &|k| dx[k]);
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                let scale = T::c(2.0) / T::c(va.len() as f64) * g[0];
                acc(*a, &|k| scale * (va[k] - vb[k]));
                acc(*b, &|k| -scale * (va[k] - vb[k]));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let contribs = op.backward(&values, &node.value, g)?;
                for (&v, c) in inputs.iter().zip(contribs) {
                    if let Some(c) = c {
                        if c.len() != val(v).len() {
                            return Err(Error::Gradient(format!(
                                "{} returned a gradient of the wrong size",
                                op.name()
                            )));
                        }
                        acc(v, &|k| c[k]);
                    }
                }
            }
        }
        Ok(())
    }
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    if shape.len() <= 1 {
        vec![1]
    } else {
        shape[..shape.len() - 1].to_vec()
    }
}
