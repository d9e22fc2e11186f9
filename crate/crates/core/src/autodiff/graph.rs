//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its variables in the order
//! they were created. [`Graph::backward`] walks that tape in reverse once,
//! accumulating adjoints, and then frees it.

use crate::autodiff::conv::{self, ConvGeometry, PatchGrid};
use crate::autodiff::params::{ParameterSet, Slot};
use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param { layer: String, slot: Slot },
    Conv2d { x: Var, w: Var, b: Var, grid: PatchGrid, cols: Vec<T> },
    ConvTranspose2d { x: Var, w: Var, b: Var, grid: PatchGrid },
    Dense { x: Var, w: Var, b: Var },
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Scale(Var, T),
    AddScalar(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Columns { x: Var, start: usize, width: usize },
    L1L2 { x: Var, l1: T, l2: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    record: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// A graph that records a tape for [`Graph::backward`].
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), record: true }
    }

    /// A forward-only graph: values are computed but no tape is kept.
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), record: false }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(vec![0]))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let op = if self.record { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, needs_grad: needs_grad && self.record });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf bound to `layer`/`slot` of a parameter set.
    pub fn param(&mut self, params: &ParameterSet<T>, layer: &str, slot: Slot) -> Result<Var> {
        let value = params.tensor(layer, slot)?.clone();
        Ok(self.push(value, Op::Param { layer: layer.to_string(), slot }, true))
    }

    /// Cross-correlation of an NHWC batch with a `[k, k, C, F]` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            bail!(Shape, "conv2d expects NHWC input and kxkxCxF kernel, got {:?} / {:?}", xs, ws);
        }
        let (n, h, wd, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (k, f) = (ws[0], ws[3]);
        if ws[1] != k || ws[2] != c || k != geom.kernel {
            bail!(Shape, "kernel {:?} incompatible with input {:?} / {:?}", ws, xs, geom);
        }
        if self.value(b).shape() != [f] {
            bail!(Shape, "bias shape {:?}, expected [{}]", self.value(b).shape(), f);
        }
        let grid = PatchGrid {
            n,
            h,
            w: wd,
            c,
            oh: geom.conv_out(h)?,
            ow: geom.conv_out(wd)?,
            k,
            s: geom.stride,
            p: geom.padding,
        };
        let cols = conv::im2col(self.value(x).data(), &grid);
        let mut out = conv::matmul(&cols, self.value(w).data(), grid.rows(), grid.cols(), f);
        conv::add_bias(&mut out, self.value(b).data());
        let value = Tensor::new(vec![n, grid.oh, grid.ow, f], out)?;
        let needs = self.needs(&[x, w, b]);
        let cols = if self.record { cols } else { Vec::new() };
        Ok(self.push(value, Op::Conv2d { x, w, b, grid, cols }, needs))
    }

    /// Transposed convolution of an NHWC batch with a `[Cin, k, k, Cout]` kernel.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            bail!(Shape, "conv_transpose2d expects NHWC input and CinxKxKxCout kernel, got {:?} / {:?}", xs, ws);
        }
        let (n, h, wd, cin) = (xs[0], xs[1], xs[2], xs[3]);
        let (k, cout) = (ws[1], ws[3]);
        if ws[0] != cin || ws[2] != k || k != geom.kernel {
            bail!(Shape, "kernel {:?} incompatible with input {:?} / {:?}", ws, xs, geom);
        }
        if self.value(b).shape() != [cout] {
            bail!(Shape, "bias shape {:?}, expected [{}]", self.value(b).shape(), cout);
        }
        let oh = geom.transposed_out(h)?;
        let ow = geom.transposed_out(wd)?;
        // The output image plays the role of a conv input whose patch grid is x's grid.
        let grid = PatchGrid { n, h: oh, w: ow, c: cout, oh: h, ow: wd, k, s: geom.stride, p: geom.padding };
        if geom.conv_out(oh)? != h || geom.conv_out(ow)? != wd {
            bail!(Shape, "transposed geometry {:?} is not invertible for {}x{}", geom, h, wd);
        }
        let cols = conv::matmul(self.value(x).data(), self.value(w).data(), n * h * wd, cin, grid.cols());
        let mut out = conv::col2im(&cols, &grid);
        conv::add_bias(&mut out, self.value(b).data());
        let value = Tensor::new(vec![n, oh, ow, cout], out)?;
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, grid }, needs))
    }

    /// `x[N, in] * w[in, out] + b[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            bail!(Shape, "dense: input {:?} vs weights {:?}", xs, ws);
        }
        let (n, din, dout) = (xs[0], ws[0], ws[1]);
        if self.value(b).shape() != [dout] {
            bail!(Shape, "bias shape {:?}, expected [{}]", self.value(b).shape(), dout);
        }
        let mut out = conv::matmul(self.value(x).data(), self.value(w).data(), n, din, dout);
        conv::add_bias(&mut out, self.value(b).data());
        let value = Tensor::new(vec![n, dout], out)?;
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Dense { x, w, b }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    /// Collapse everything after the batch axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        if shape.is_empty() {
            bail!(Shape, "cannot flatten a scalar");
        }
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let needs = self.needs(&[x]);
        self.push(value, op, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            bail!(Shape, "elementwise op on {:?} and {:?}", va.shape(), vb.shape());
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of all entries as a scalar, accumulated sequentially in f64.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = crate::scalar::sum_f64(self.value(x).data());
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(T::from_f64_lossy(total)), Op::Sum(x), needs)
    }

    /// Column block `[start, start + width)` of a `[N, D]` matrix.
    pub fn columns(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let shape = self.value(x).shape();
        if shape.len() != 2 || start + width > shape[1] {
            bail!(Shape, "columns {}..{} of {:?}", start, start + width, shape);
        }
        let (n, d) = (shape[0], shape[1]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * width);
        for row in 0..n {
            data.extend_from_slice(&src[row * d + start..row * d + start + width]);
        }
        let value = Tensor::new(vec![n, width], data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Columns { x, start, width }, needs))
    }

    /// `l1 * sum|x| + l2 * sum x^2` as a scalar.
    pub fn l1_l2(&mut self, x: Var, l1: T, l2: T) -> Var {
        let total = self.value(x).data().iter().fold(0.0f64, |acc, &v| {
            acc + l1.to_f64_lossy() * v.abs().to_f64_lossy() + l2.to_f64_lossy() * (v * v).to_f64_lossy()
        });
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(T::from_f64_lossy(total)), Op::L1L2 { x, l1, l2 }, needs)
    }

    /// Gradient of scalar `loss` with respect to every parameter in `params`.
    ///
    /// Parameters the loss does not depend on get exactly-zero gradients.
    /// The tape is released afterwards; a second call is a state error.
    pub fn backward(&mut self, loss: Var, params: &ParameterSet<T>) -> Result<ParameterSet<T>> {
        if !self.record {
            bail!(State, "backward on an inference graph");
        }
        if loss.0 >= self.nodes.len() {
            bail!(State, "backward without a recorded graph");
        }
        if self.nodes[loss.0].value.len() != 1 {
            bail!(Shape, "loss must be scalar, got {:?}", self.nodes[loss.0].value.shape());
        }
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape().to_vec(), T::one()));

        let mut out = params.zeros_like();
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            propagate(&nodes, node, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    if !nodes[v.0].needs_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn with_shape<T: Scalar>(like: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(like.shape().to_vec(), data).expect("gradient matches value shape")
}

fn propagate<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
    out: &mut ParameterSet<T>,
) -> Result<()> {
    let val = |v: &Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Param { layer, slot } => {
            let Some(target) = out.get_mut(layer) else {
                return Err(Error::Shape(format!("gradient for unknown layer {layer:?}")));
            };
            let dst = match slot {
                Slot::Weight => &mut target.weights,
                Slot::Bias => &mut target.biases,
            };
            if dst.shape() != g.shape() {
                bail!(Shape, "gradient {:?} vs parameter {:?} for {}", g.shape(), dst.shape(), layer);
            }
            dst.add_assign(&g);
        }
        Op::Conv2d { x, w, b, grid, cols } => {
            let f = val(w).shape()[3];
            let gd = g.data();
            if nodes[w.0].needs_grad {
                let dw = conv::matmul_at(cols, gd, grid.cols(), grid.rows(), f);
                accumulate(nodes, grads, *w, with_shape(val(w), dw));
            }
            if nodes[b.0].needs_grad {
                accumulate(nodes, grads, *b, with_shape(val(b), conv::bias_grad(gd, f)));
            }
            if nodes[x.0].needs_grad {
                let dcols = conv::matmul_bt(gd, val(w).data(), grid.rows(), f, grid.cols());
                let dx = conv::col2im(&dcols, grid);
                accumulate(nodes, grads, *x, with_shape(val(x), dx));
            }
        }
        Op::ConvTranspose2d { x, w, b, grid } => {
            let cin = val(w).shape()[0];
            let cout = grid.c;
            let gd = g.data();
            let dcols = conv::im2col(gd, grid);
            if nodes[w.0].needs_grad {
                let dw = conv::matmul_at(val(x).data(), &dcols, cin, grid.rows(), grid.cols());
                accumulate(nodes, grads, *w, with_shape(val(w), dw));
            }
            if nodes[b.0].needs_grad {
                accumulate(nodes, grads, *b, with_shape(val(b), conv::bias_grad(gd, cout)));
            }
            if nodes[x.0].needs_grad {
                let dx = conv::matmul_bt(&dcols, val(w).data(), grid.rows(), grid.cols(), cin);
                accumulate(nodes, grads, *x, with_shape(val(x), dx));
            }
        }
        Op::Dense { x, w, b } => {
            let (n, din) = (val(x).shape()[0], val(x).shape()[1]);
            let dout = val(w).shape()[1];
            let gd = g.data();
            if nodes[w.0].needs_grad {
                let dw = conv::matmul_at(val(x).data(), gd, din, n, dout);
                accumulate(nodes, grads, *w, with_shape(val(w), dw));
            }
            if nodes[b.0].needs_grad {
                accumulate(nodes, grads, *b, with_shape(val(b), conv::bias_grad(gd, dout)));
            }
            if nodes[x.0].needs_grad {
                let dx = conv::matmul_bt(gd, val(w).data(), n, dout, din);
                accumulate(nodes, grads, *x, with_shape(val(x), dx));
            }
        }
        Op::Reshape(x) => {
            let shape = val(x).shape().to_vec();
            accumulate(nodes, grads, *x, g.reshape(shape)?);
        }
        Op::Relu(x) => {
            let data = g
                .data()
                .iter()
                .zip(val(x).data())
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            accumulate(nodes, grads, *x, with_shape(&g, data));
        }
        Op::Sigmoid(x) => {
            let data = g.data().iter().zip(node.value.data()).map(|(&gv, &y)| gv * y * (T::one() - y)).collect();
            accumulate(nodes, grads, *x, with_shape(&g, data));
        }
        Op::Exp(x) => {
            let data = g.data().iter().zip(node.value.data()).map(|(&gv, &y)| gv * y).collect();
            accumulate(nodes, grads, *x, with_shape(&g, data));
        }
        Op::Square(x) => {
            let two = T::one() + T::one();
            let data = g.data().iter().zip(val(x).data()).map(|(&gv, &xv)| gv * two * xv).collect();
            accumulate(nodes, grads, *x, with_shape(&g, data));
        }
        Op::Scale(x, c) => {
            let c = *c;
            accumulate(nodes, grads, *x, g.map(|v| v * c));
        }
        Op::AddScalar(x) => accumulate(nodes, grads, *x, g),
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *b, g.map(|v| -v));
            accumulate(nodes, grads, *a, g);
        }
        Op::Mul(a, b) => {
            let ga = g.data().iter().zip(val(b).data()).map(|(&gv, &bv)| gv * bv).collect();
            let gb = g.data().iter().zip(val(a).data()).map(|(&gv, &av)| gv * av).collect();
            accumulate(nodes, grads, *a, with_shape(&g, ga));
            accumulate(nodes, grads, *b, with_shape(&g, gb));
        }
        Op::Sum(x) => {
            let gv = g.data()[0];
            accumulate(nodes, grads, *x, Tensor::full(val(x).shape().to_vec(), gv));
        }
        Op::Columns { x, start, width } => {
            let shape = val(x).shape();
            let (n, d) = (shape[0], shape[1]);
            let mut dx = vec![T::zero(); n * d];
            for row in 0..n {
                dx[row * d + start..row * d + start + width].copy_from_slice(&g.data()[row * width..(row + 1) * width]);
            }
            accumulate(nodes, grads, *x, with_shape(val(x), dx));
        }
        Op::L1L2 { x, l1, l2 } => {
            let gv = g.data()[0];
            let two = T::one() + T::one();
            let data = val(x)
                .data()
                .iter()
                .map(|&w| {
                    let sign = if w > T::zero() {
                        T::one()
                    } else if w < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    gv * (*l1 * sign + *l2 * two * w)
                })
                .collect();
            accumulate(nodes, grads, *x, with_shape(val(x), data));
        }
    }
    Ok(())
}
