use std::cell::{Cell, RefCell};
use std::sync::Arc;

use super::kernels::{self, ConvDims, Window};
use super::{shuffle_out_channels, Tensor};
use crate::error::{Error, Result};

type NodeId = usize;

/// Records operations on [`Var`]s for reverse-mode differentiation.
///
/// Nodes are appended in creation order, so node ids are already a
/// topological order and the backward pass walks them in reverse. A tape is
/// confined to one thread and is consumed by [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

struct Node {
    value: Arc<Tensor>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        dims: ConvDims,
    },
    TransposeConv2d {
        input: NodeId,
        kernel: NodeId,
        dims: ConvDims,
    },
    BiasAdd {
        input: NodeId,
        bias: NodeId,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<usize>,
    },
    AvgPool2 {
        input: NodeId,
    },
    LeakyRelu {
        input: NodeId,
        slope: f64,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    PixelShuffle {
        input: NodeId,
        r: usize,
    },
    Blur {
        input: NodeId,
        kernel: Arc<[f64]>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale {
        input: NodeId,
        factor: f64,
    },
    AddScalar {
        input: NodeId,
    },
    Abs {
        input: NodeId,
    },
    Square {
        input: NodeId,
    },
    Sum {
        input: NodeId,
    },
    Mean {
        input: NodeId,
    },
    MeanSpatial {
        input: NodeId,
    },
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by the leaf [`Var`]s
/// that required them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if `var` was a parameter
    /// the loss depends on.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Moves the gradient for `var` out.
    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable leaf; its gradient is reported by `backward`.
    pub fn param(&self, value: &Tensor) -> Var<'_> {
        self.push(Arc::new(value.clone()), true, Op::Leaf)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&self, value: &Tensor) -> Var<'_> {
        self.push(Arc::new(value.clone()), false, Op::Leaf)
    }

    /// Like [`Tape::constant`] without copying the data.
    pub fn constant_shared(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push(value, false, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Arc<Tensor>, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor, parents: &[NodeId], op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(Arc::new(value), requires_grad, op)
    }

    fn value_of(&self, id: NodeId) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Back-propagates from a scalar `loss`, returning gradients for every
    /// parameter leaf. The tape cannot be differentiated a second time.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::State("loss was recorded on a different tape".into()));
        }
        if self.consumed.replace(true) {
            return Err(Error::State("tape has already been consumed by backward".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let needs = |p: NodeId| nodes[p].requires_grad;
            let mut acc = |p: NodeId, contrib: Vec<f64>| accumulate(&mut grads[p], contrib);
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    dims,
                } => {
                    let want = (needs(*input), needs(*kernel), bias.is_some_and(needs));
                    let r = kernels::conv2d_backward(
                        nodes[*input].value.data(),
                        nodes[*kernel].value.data(),
                        &g,
                        *dims,
                        want,
                    );
                    if let Some(gx) = r.input {
                        acc(*input, gx);
                    }
                    if let Some(gk) = r.kernel {
                        acc(*kernel, gk);
                    }
                    if let (Some(b), Some(gb)) = (bias, r.bias) {
                        acc(*b, gb);
                    }
                }
                Op::TransposeConv2d {
                    input,
                    kernel,
                    dims,
                } => {
                    let (gx, gk) = kernels::transpose_conv2d_backward(
                        nodes[*input].value.data(),
                        nodes[*kernel].value.data(),
                        &g,
                        *dims,
                        (needs(*input), needs(*kernel)),
                    );
                    if let Some(gx) = gx {
                        acc(*input, gx);
                    }
                    if let Some(gk) = gk {
                        acc(*kernel, gk);
                    }
                }
                Op::BiasAdd { input, bias } => {
                    if needs(*bias) {
                        let (_, c, h, w) = node.value.dims4()?;
                        let mut gb = vec![0.0; c];
                        for (i, plane) in g.chunks_exact(h * w).enumerate() {
                            gb[i % c] += plane.iter().sum::<f64>();
                        }
                        acc(*bias, gb);
                    }
                    if needs(*input) {
                        acc(*input, g);
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut gx = vec![0.0; nodes[*input].value.len()];
                    for (gv, &src) in g.iter().zip(argmax) {
                        gx[src] += gv;
                    }
                    acc(*input, gx);
                }
                Op::AvgPool2 { input } => {
                    let (b, c, h, w) = nodes[*input].value.dims4()?;
                    acc(*input, kernels::avgpool2_backward(&g, b * c, h, w));
                }
                Op::LeakyRelu { input, slope } => {
                    let x = nodes[*input].value.data();
                    let gx = g
                        .iter()
                        .zip(x)
                        .map(|(gv, &xv)| if xv >= 0.0 { *gv } else { slope * gv })
                        .collect();
                    acc(*input, gx);
                }
                Op::Concat { a, b } => {
                    let (batch, ca, h, w) = nodes[*a].value.dims4()?;
                    let cb = nodes[*b].value.dims4()?.1;
                    let (sa, sb) = (ca * h * w, cb * h * w);
                    let mut ga = Vec::with_capacity(batch * sa);
                    let mut gb = Vec::with_capacity(batch * sb);
                    for item in g.chunks_exact(sa + sb) {
                        ga.extend_from_slice(&item[..sa]);
                        gb.extend_from_slice(&item[sa..]);
                    }
                    if needs(*a) {
                        acc(*a, ga);
                    }
                    if needs(*b) {
                        acc(*b, gb);
                    }
                }
                Op::PixelShuffle { input, r } => {
                    let (b, c, h, w) = node.value.dims4()?;
                    let mut gx = vec![0.0; g.len()];
                    kernels::pixel_unshuffle(&g, &mut gx, b, c, h / r, w / r, *r);
                    acc(*input, gx);
                }
                Op::Blur { input, kernel } => {
                    let (b, c, h, w) = nodes[*input].value.dims4()?;
                    acc(*input, kernels::blur_valid_backward(&g, b * c, h, w, kernel));
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        acc(*a, g.clone());
                    }
                    if needs(*b) {
                        acc(*b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        acc(*b, g.iter().map(|v| -v).collect());
                    }
                    if needs(*a) {
                        acc(*a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                    if needs(*a) {
                        acc(*a, g.iter().zip(bv).map(|(gv, y)| gv * y).collect());
                    }
                    if needs(*b) {
                        acc(*b, g.iter().zip(av).map(|(gv, x)| gv * x).collect());
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                    if needs(*a) {
                        acc(*a, g.iter().zip(bv).map(|(gv, y)| gv / y).collect());
                    }
                    if needs(*b) {
                        let gb = g
                            .iter()
                            .zip(av.iter().zip(bv))
                            .map(|(gv, (x, y))| -gv * x / (y * y))
                            .collect();
                        acc(*b, gb);
                    }
                }
                Op::Scale { input, factor } => {
                    acc(*input, g.iter().map(|v| v * factor).collect());
                }
                Op::AddScalar { input } => acc(*input, g),
                Op::Abs { input } => {
                    let x = nodes[*input].value.data();
                    let gx = g.iter().zip(x).map(|(gv, &xv)| gv * sign(xv)).collect();
                    acc(*input, gx);
                }
                Op::Square { input } => {
                    let x = nodes[*input].value.data();
                    acc(*input, g.iter().zip(x).map(|(gv, xv)| 2.0 * xv * gv).collect());
                }
                Op::Sum { input } => {
                    acc(*input, vec![g[0]; nodes[*input].value.len()]);
                }
                Op::Mean { input } => {
                    let n = nodes[*input].value.len();
                    acc(*input, vec![g[0] / n as f64; n]);
                }
                Op::MeanSpatial { input } => {
                    let (_, _, h, w) = nodes[*input].value.dims4()?;
                    let n = h * w;
                    let mut gx = Vec::with_capacity(g.len() * n);
                    for gv in &g {
                        gx.extend(std::iter::repeat_n(gv / n as f64, n));
                    }
                    acc(*input, gx);
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.requires_grad => Some(Tensor::from_parts_unchecked(
                    node.value.shape().to_vec(),
                    g,
                )),
                (None, Op::Leaf) if node.requires_grad => Some(Tensor::zeros(node.value.shape())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        None => *slot = Some(contrib),
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::State("operands were recorded on different tapes".into()))
        }
    }

    /// 2D cross-correlation with `kernel: [Cout, Cin, kh, kw]` and optional
    /// per-channel `bias: [Cout]`.
    pub fn conv2d(self, kernel: Var<'t>, bias: Option<Var<'t>>, stride: usize, padding: usize) -> Result<Var<'t>> {
        self.same_tape(kernel)?;
        if let Some(b) = bias {
            self.same_tape(b)?;
        }
        if stride == 0 {
            return Err(Error::arg("convolution stride must be positive"));
        }
        let x = self.value();
        let k = kernel.value();
        let (batch, cin, h, w) = x.dims4()?;
        let [cout, kcin, kh, kw] = k.shape()[..] else {
            return Err(Error::shape(format!("conv kernel must be rank 4, got {:?}", k.shape())));
        };
        if kcin != cin {
            return Err(Error::shape(format!(
                "input has {cin} channels but kernel expects {kcin}"
            )));
        }
        let bias_val = bias.map(|b| b.value());
        if let Some(bv) = &bias_val {
            if bv.shape() != [cout] {
                return Err(Error::shape(format!(
                    "bias shape {:?} does not match {cout} output channels",
                    bv.shape()
                )));
            }
        }
        let win = Window {
            kh,
            kw,
            stride,
            pad: padding,
        };
        let (ho, wo) = win
            .output_extent(h, w)
            .ok_or_else(|| Error::shape(format!("{kh}x{kw} kernel does not fit {h}x{w} input")))?;
        let dims = ConvDims {
            batch,
            cin,
            cout,
            h,
            w,
            ho,
            wo,
            win,
        };
        let out = kernels::conv2d_forward(x.data(), k.data(), bias_val.as_deref().map(Tensor::data), dims);
        let mut parents = vec![self.id, kernel.id];
        parents.extend(bias.map(|b| b.id));
        Ok(self.tape.record(
            Tensor::from_parts_unchecked(vec![batch, cout, ho, wo], out),
            &parents,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                bias: bias.map(|b| b.id),
                dims,
            },
        ))
    }

    /// Transposed convolution with `kernel: [Cin, Cout, kh, kw]`, no padding.
    /// Output extents are `(H-1)*stride + kh` by `(W-1)*stride + kw`.
    pub fn transpose_conv2d(self, kernel: Var<'t>, stride: usize) -> Result<Var<'t>> {
        self.same_tape(kernel)?;
        if stride == 0 {
            return Err(Error::arg("transpose convolution stride must be positive"));
        }
        let x = self.value();
        let k = kernel.value();
        let (batch, cin, h, w) = x.dims4()?;
        let [kcin, cout, kh, kw] = k.shape()[..] else {
            return Err(Error::shape(format!("kernel must be rank 4, got {:?}", k.shape())));
        };
        if kcin != cin {
            return Err(Error::shape(format!(
                "input has {cin} channels but transpose kernel expects {kcin}"
            )));
        }
        let (oh, ow) = ((h - 1) * stride + kh, (w - 1) * stride + kw);
        let dims = ConvDims {
            batch,
            cin,
            cout,
            h: oh,
            w: ow,
            ho: h,
            wo: w,
            win: Window { kh, kw, stride, pad: 0 },
        };
        let out = kernels::transpose_conv2d_forward(x.data(), k.data(), dims);
        Ok(self.tape.record(
            Tensor::from_parts_unchecked(vec![batch, cout, oh, ow], out),
            &[self.id, kernel.id],
            Op::TransposeConv2d {
                input: self.id,
                kernel: kernel.id,
                dims,
            },
        ))
    }

    /// Adds `bias: [C]` to every pixel of the matching channel.
    pub fn bias_add(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(bias)?;
        let x = self.value();
        let bv = bias.value();
        let (_, c, h, w) = x.dims4()?;
        if bv.shape() != [c] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {c} channels",
                bv.shape()
            )));
        }
        let mut out = x.data().to_vec();
        for (i, plane) in out.chunks_exact_mut(h * w).enumerate() {
            let b = bv.data()[i % c];
            plane.iter_mut().for_each(|v| *v += b);
        }
        Ok(self.tape.record(
            Tensor::from_parts_unchecked(x.shape().to_vec(), out),
            &[self.id, bias.id],
            Op::BiasAdd {
                input: self.id,
                bias: bias.id,
            },
        ))
    }

    /// 2x2 max pooling; extents must be even.
    pub fn maxpool2(self) -> Result<Var<'t>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "max pooling needs even extents, got {h}x{w}"
            )));
        }
        let (out, argmax) = kernels::maxpool2(x.data(), b * c, h, w);
        Ok(self.tape.record(
            Tensor::from_parts_unchecked(vec![b, c, h / 2, w / 2], out),
            &[self.id],
            Op::MaxPool2 {
                input: self.id,
                argmax,
            },
        ))
    }

    /// 2x2 mean pooling (odd trailing row/column dropped).
    pub fn avgpool2(self) -> Result<Var<'t>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        if h < 2 || w < 2 {
            return Err(Error::shape(format!("cannot mean-pool a {h}x{w} image")));
        }
        let out = kernels::avgpool2(x.data(), b * c, h, w);
        Ok(self.tape.record(
            Tensor::from_parts_unchecked(vec![b, c, h / 2, w / 2], out),
            &[self.id],
            Op::AvgPool2 { input: self.id },
        ))
    }

    /// `max(0, x) + slope * min(0, x)`. The derivative at exactly zero is 1.
    pub fn leaky_relu_with_slope(self, slope: f64) -> Var<'t> {
        let x = self.value();
        let out = x.map(|v| if v >= 0.0 { v } else { slope * v });
        self.tape
            .record(out, &[self.id], Op::LeakyRelu { input: self.id, slope })
    }

    /// Leaky ReLU with negative slope 0.2.
    pub fn leaky_relu(self) -> Var<'t> {
        self.leaky_relu_with_slope(0.2)
    }

    pub fn relu(self) -> Var<'t> {
        self.leaky_relu_with_slope(0.0)
    }

    /// Concatenates along the channel axis: channels of `self` first.
    pub fn concat_channels(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let (ba, ca, ha, wa) = a.dims4()?;
        let (bb, cb, hb, wb) = b.dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::shape(format!(
                "cannot concatenate {:?} with {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (sa, sb) = (ca * ha * wa, cb * ha * wa);
        let mut out = Vec::with_capacity(a.len() + b.len());
        for i in 0..ba {
            out.extend_from_slice(&a.data()[i * sa..(i + 1) * sa]);
            out.extend_from_slice(&b.data()[i * sb..(i + 1) * sb]);
        }
        Ok(self.tape.record(
            Tensor::from_parts_unchecked(vec![ba, ca + cb, ha, wa], out),
            &[self.id, other.id],
            Op::Concat {
                a: self.id,
                b: other.id,
            },
        ))
    }

    /// Sub-pixel rearrangement `[B, C*r*r, H, W] -> [B, C, H*r, W*r]`.
    pub fn pixel_shuffle(self, r: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        let oc = shuffle_out_channels(c, r)?;
        let mut out = vec![0.0; x.len()];
        kernels::pixel_shuffle(x.data(), &mut out, b, oc, h, w, r);
        Ok(self.tape.record(
            Tensor::from_parts_unchecked(vec![b, oc, h * r, w * r], out),
            &[self.id],
            Op::PixelShuffle { input: self.id, r },
        ))
    }

    /// Separable "valid" filtering of every plane with the 1D `kernel` along
    /// both axes.
    pub fn blur_valid(self, kernel: Arc<[f64]>) -> Result<Var<'t>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        let n = kernel.len();
        if n == 0 || h < n || w < n {
            return Err(Error::shape(format!(
                "{h}x{w} image is smaller than the {n}-tap window"
            )));
        }
        let out = kernels::blur_valid(x.data(), b * c, h, w, &kernel);
        Ok(self.tape.record(
            Tensor::from_parts_unchecked(vec![b, c, h + 1 - n, w + 1 - n], out),
            &[self.id],
            Op::Blur {
                input: self.id,
                kernel,
            },
        ))
    }

    fn binary(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(format!(
                "elementwise operands differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.tape.record(
            Tensor::from_parts_unchecked(a.shape().to_vec(), out),
            &[self.id, other.id],
            op,
        ))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |x, y| x / y, Op::Div(self.id, other.id))
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let out = self.value().map(|v| v * factor);
        self.tape.record(
            out,
            &[self.id],
            Op::Scale {
                input: self.id,
                factor,
            },
        )
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let out = self.value().map(|v| v + c);
        self.tape
            .record(out, &[self.id], Op::AddScalar { input: self.id })
    }

    /// Absolute value; the subgradient at zero is 0.
    pub fn abs(self) -> Var<'t> {
        let out = self.value().map(f64::abs);
        self.tape.record(out, &[self.id], Op::Abs { input: self.id })
    }

    pub fn square(self) -> Var<'t> {
        let out = self.value().map(|v| v * v);
        self.tape
            .record(out, &[self.id], Op::Square { input: self.id })
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.tape
            .record(Tensor::scalar(s), &[self.id], Op::Sum { input: self.id })
    }

    pub fn mean(self) -> Var<'t> {
        let m = self.value().mean();
        self.tape
            .record(Tensor::scalar(m), &[self.id], Op::Mean { input: self.id })
    }

    /// Mean over height and width: `[B, C, H, W] -> [B, C, 1, 1]`.
    pub fn mean_spatial(self) -> Result<Var<'t>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        let n = (h * w) as f64;
        let out = x
            .data()
            .chunks_exact(h * w)
            .map(|p| p.iter().sum::<f64>() / n)
            .collect();
        Ok(self.tape.record(
            Tensor::from_parts_unchecked(vec![b, c, 1, 1], out),
            &[self.id],
            Op::MeanSpatial { input: self.id },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::full(&[2, 3], 0.7));
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let tape = Tape::new();
        let x = tape.param(&t(&[3], &[1.0, 2.0, 3.0]));
        let loss = x.mul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn two_consumers_accumulate() {
        let tape = Tape::new();
        let x = tape.param(&t(&[2], &[1.5, -2.0]));
        let a = x.scale(3.0);
        let b = x.square();
        let loss = a.add(b).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0 + 3.0, 3.0 - 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn second_backward_is_a_state_error() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::zeros(&[2]));
        let loss = x.sum();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::State(_))));
    }

    #[test]
    fn foreign_loss_is_a_state_error() {
        let (a, b) = (Tape::new(), Tape::new());
        let loss = a.param(&Tensor::scalar(1.0)).sum();
        assert!(matches!(b.backward(loss), Err(Error::State(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let x = tape.param(&t(&[2], &[1.0, 2.0]));
        let c = tape.constant(&t(&[2], &[3.0, 4.0]));
        let g = tape.backward(x.mul(c).unwrap().sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn identity_conv_kernels() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = tape.constant(&Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = tape.constant(&Tensor::zeros(&[1]));
        let y = x.conv2d(k, Some(b), 1, 0).unwrap();
        assert_eq!(*y.value(), Tensor::full(&[1, 1, 3, 3], 1.0));

        let k3 = tape.constant(&Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = x.conv2d(k3, Some(b), 1, 0).unwrap();
        assert_eq!(y.value().shape(), &[1, 1, 1, 1]);
        assert_eq!(y.value().data(), &[9.0]);
    }

    #[test]
    fn centered_delta_kernel_with_padding_is_identity() {
        let tape = Tape::new();
        let img = Tensor::from_fn(&[1, 1, 4, 5], |i| (i as f64).sin());
        let x = tape.constant(&img);
        let mut delta = Tensor::zeros(&[1, 1, 3, 3]);
        delta.data_mut()[4] = 1.0;
        let y = x.conv2d(tape.constant(&delta), None, 1, 1).unwrap();
        assert_eq!(*y.value(), img);
    }

    #[test]
    fn conv_errors() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[1, 2, 4, 4]));
        let k = tape.constant(&Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(x.conv2d(k, None, 1, 1), Err(Error::InvalidShape(_))));
        let k = tape.constant(&Tensor::zeros(&[1, 2, 3, 3]));
        assert!(matches!(x.conv2d(k, None, 0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn transpose_conv_broadcasts_single_pixel() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[1, 1, 1, 1], 1.0));
        let k = tape.constant(&Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = x.transpose_conv2d(k, 2).unwrap();
        assert_eq!(*y.value(), Tensor::full(&[1, 1, 2, 2], 1.0));
    }

    #[test]
    fn transpose_conv_block_diagonal() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let k = tape.constant(&Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = x.transpose_conv2d(k, 2).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 0.0, 0.0,
            1.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 1.0,
            0.0, 0.0, 1.0, 1.0,
        ];
        assert_eq!(y.value().data(), &expected);
        let bad = tape.constant(&Tensor::zeros(&[2, 1, 2, 2]));
        assert!(matches!(x.transpose_conv2d(bad, 2), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn maxpool_basics() {
        let tape = Tape::new();
        let x = tape.param(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = x.maxpool2().unwrap();
        assert_eq!(y.value().data(), &[4.0]);

        let c = tape.param(&Tensor::full(&[1, 1, 4, 4], 0.5));
        let pooled = c.maxpool2().unwrap();
        assert_eq!(*pooled.value(), Tensor::full(&[1, 1, 2, 2], 0.5));
        let g = tape.backward(pooled.sum()).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(g.get(c).unwrap().data(), &expected);

        let odd = Tape::new();
        let o = odd.constant(&Tensor::zeros(&[1, 1, 3, 4]));
        assert!(matches!(o.maxpool2(), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn leaky_relu_values_and_zero_subgradient() {
        let tape = Tape::new();
        let x = tape.param(&t(&[3], &[5.0, -5.0, 0.0]));
        let y = x.leaky_relu();
        assert_eq!(y.value().data(), &[5.0, -1.0, 0.0]);
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.2, 1.0]);
    }

    #[test]
    fn concat_layout_and_identity() {
        let tape = Tape::new();
        let a = tape.constant(&Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64));
        let b = tape.constant(&Tensor::from_fn(&[1, 3, 2, 2], |i| 100.0 + i as f64));
        let c = a.concat_channels(b).unwrap();
        assert_eq!(c.value().shape(), &[1, 5, 2, 2]);
        assert_eq!(&c.value().data()[..8], a.value().data());

        let empty = tape.constant(&Tensor::zeros(&[1, 0, 2, 2]));
        assert_eq!(*a.concat_channels(empty).unwrap().value(), *a.value());

        let wrong = tape.constant(&Tensor::zeros(&[1, 1, 3, 2]));
        assert!(matches!(a.concat_channels(wrong), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn bias_add_broadcasts_over_channels() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[1, 2, 1, 2]));
        let b = tape.param(&t(&[2], &[1.0, -1.0]));
        let y = x.bias_add(b).unwrap();
        assert_eq!(y.value().data(), &[1.0, 1.0, -1.0, -1.0]);
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 2.0]);
    }
}
