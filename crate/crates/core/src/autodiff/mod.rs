//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A [`Tape`] records every forward operation as a node holding its output
//! value and enough saved state to replay the backward rule. Calling
//! [`Tape::backward`] on a scalar root walks the nodes in reverse topological
//! order (which is simply reverse insertion order) and accumulates gradients
//! for every node that can reach a gradient leaf.
//!
//! The operation set is exactly what the network needs: convolution (with
//! stride, zero padding, dilation and depthwise groups), batch
//! normalization, pooling, bilinear resizing, reflection padding, channel
//! concatenation, broadcasting arithmetic, pointwise nonlinearities, full
//! reductions and two fused loss kernels.

pub mod conv;
mod eltwise;
#[cfg(test)]
mod fd_tests;
mod lossops;
mod norm;
mod pool;
pub(crate) mod resize;

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use conv::{out_extent, ConvCfg};
pub use norm::{BnMode, BnStats};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S: Scalar> {
    /// Entry node. `param` ties it to a parameter slot for gradient
    /// collection; `grad` marks it as a differentiation leaf.
    Leaf { param: Option<usize> },
    Relu { x: Var },
    Sigmoid { x: Var },
    Affine { x: Var, mul: S },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Option<Var>, cfg: ConvCfg },
    PadReflect { x: Var, pad: usize },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    GlobalAvgPool { x: Var },
    GlobalMaxPool { x: Var, argmax: Vec<u32> },
    ChannelMean { x: Var },
    ChannelMax { x: Var, argmax: Vec<u32> },
    Bilinear { x: Var },
    ConcatChannels { a: Var, b: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<S>, inv_std: Vec<S>, train: bool },
    SumAll { x: Var },
    BceLoss { p: Var, target: Tensor<S>, eps: S },
    IouLoss { p: Var, target: Tensor<S> },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Recorded forward graph.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<S: Scalar> {
    node: Vec<Option<Tensor<S>>>,
    param: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the root with respect to a tape node, if it was reached.
    pub fn wrt_var(&self, v: Var) -> Option<&Tensor<S>> {
        self.node[v.0].as_ref()
    }

    /// Gradient for a parameter slot, if any leaf with that slot was reached.
    pub fn wrt_param(&self, slot: usize) -> Option<&Tensor<S>> {
        self.param.get(slot).and_then(|g| g.as_ref())
    }

    pub fn param_count(&self) -> usize {
        self.param.len()
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, delta: Tensor<S>) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), delta.shape());
            for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a += *d;
            }
        }
        None => *slot = Some(delta),
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    #[inline]
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite() || !cfg!(debug_assertions));
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient (inputs, fixed kernels, targets).
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// Leaf whose gradient is retrievable via [`Gradients::wrt_var`] but is
    /// not tied to a parameter slot.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf { param: None }, true)
    }

    /// Leaf tied to parameter slot `slot` for gradient collection.
    pub fn param_leaf(&mut self, slot: usize, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf { param: Some(slot) }, true)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = eltwise::relu(self.value(x));
        let needs = self.needs(x);
        self.push(y, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = eltwise::sigmoid(self.value(x));
        let needs = self.needs(x);
        self.push(y, Op::Sigmoid { x }, needs)
    }

    /// Pointwise `mul * x + add`.
    pub fn affine(&mut self, x: Var, mul: S, add: S) -> Var {
        let y = self.value(x).map(|v| mul * v + add);
        let needs = self.needs(x);
        self.push(y, Op::Affine { x, mul }, needs)
    }

    /// Elementwise addition with NCHW broadcasting (each dimension must
    /// match or be 1 on one side).
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = eltwise::broadcast_zip(self.value(a), self.value(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Add { a, b }, needs)
    }

    /// Elementwise multiplication with NCHW broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = eltwise::broadcast_zip(self.value(a), self.value(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Mul { a, b }, needs)
    }

    /// Elementwise division with NCHW broadcasting.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let y = eltwise::broadcast_zip(self.value(a), self.value(b), |x, y| x / y);
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Div { a, b }, needs)
    }

    /// 2D convolution. Weight layout is `[c_out, c_in / groups, kh, kw]`,
    /// bias `[1, c_out, 1, 1]`. Supported group configurations are 1 and
    /// depthwise (`groups == c_in == c_out`).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: ConvCfg) -> Var {
        let y = conv::forward(self.value(x), self.value(w), b.map(|bv| self.value(bv)), &cfg);
        let needs = self.needs(x) || self.needs(w) || b.map(|bv| self.needs(bv)).unwrap_or(false);
        self.push(y, Op::Conv2d { x, w, b, cfg }, needs)
    }

    /// Reflection padding of both spatial dimensions by `pad` (the edge
    /// sample is not repeated). Requires `pad <= dim - 1`.
    pub fn pad_reflect(&mut self, x: Var, pad: usize) -> Var {
        let y = eltwise::pad_reflect(self.value(x), pad);
        let needs = self.needs(x);
        self.push(y, Op::PadReflect { x, pad }, needs)
    }

    /// 2x2 max pooling with stride 2; spatial dimensions must be even.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (y, argmax) = pool::max_pool2(self.value(x));
        let needs = self.needs(x);
        self.push(y, Op::MaxPool2 { x, argmax }, needs)
    }

    /// Global average pooling to `[n, c, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let y = pool::global_avg(self.value(x));
        let needs = self.needs(x);
        self.push(y, Op::GlobalAvgPool { x }, needs)
    }

    /// Global max pooling to `[n, c, 1, 1]`.
    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let (y, argmax) = pool::global_max(self.value(x));
        let needs = self.needs(x);
        self.push(y, Op::GlobalMaxPool { x, argmax }, needs)
    }

    /// Mean over the channel dimension to `[n, 1, h, w]`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let y = pool::channel_mean(self.value(x));
        let needs = self.needs(x);
        self.push(y, Op::ChannelMean { x }, needs)
    }

    /// Max over the channel dimension to `[n, 1, h, w]`.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let (y, argmax) = pool::channel_max(self.value(x));
        let needs = self.needs(x);
        self.push(y, Op::ChannelMax { x, argmax }, needs)
    }

    /// Bilinear resize to `(out_h, out_w)` with half-pixel centers
    /// (align_corners = false).
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let y = resize::forward(self.value(x), out_h, out_w);
        let needs = self.needs(x);
        self.push(y, Op::Bilinear { x }, needs)
    }

    /// Concatenation along the channel dimension.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let y = eltwise::concat_channels(self.value(a), self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::ConcatChannels { a, b }, needs)
    }

    /// Batch normalization over `(n, h, w)` per channel.
    ///
    /// In [`BnMode::Train`] the batch statistics are computed from `x` and
    /// returned (biased variance) so the caller can update running buffers.
    /// In [`BnMode::Eval`] the provided running statistics are frozen into
    /// the op.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: S,
        mode: BnMode<'_, S>,
    ) -> (Var, Option<BnStats<S>>) {
        let (y, mean, inv_std, stats, train) =
            norm::forward(self.value(x), self.value(gamma), self.value(beta), eps, mode);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(y, Op::BatchNorm { x, gamma, beta, mean, inv_std, train }, needs);
        (v, stats)
    }

    /// Sum of all elements, as a `[1, 1, 1, 1]` tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(y, Op::SumAll { x }, needs)
    }

    /// Mean of all elements, as a `[1, 1, 1, 1]` tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let len = self.value(x).len();
        let s = self.sum_all(x);
        self.affine(s, S::from_f64(1.0 / len as f64), S::zero())
    }

    /// Fused binary cross-entropy: mean over all elements of
    /// `-t*ln(p) - (1-t)*ln(1-p)` with `p` clamped to `[eps, 1-eps]`.
    pub fn bce_loss(&mut self, p: Var, target: &Tensor<S>, eps: S) -> Var {
        let y = lossops::bce_forward(self.value(p), target, eps);
        let needs = self.needs(p);
        self.push(y, Op::BceLoss { p, target: target.clone(), eps }, needs)
    }

    /// Fused soft-IoU loss, averaged over the batch dimension:
    /// `1 - sum(p*t) / sum(p + t - p*t)` per image. An image whose union is
    /// zero contributes zero loss.
    pub fn iou_loss(&mut self, p: Var, target: &Tensor<S>) -> Var {
        let y = lossops::iou_forward(self.value(p), target);
        let needs = self.needs(p);
        self.push(y, Op::IouLoss { p, target: target.clone() }, needs)
    }

    /// Reverse sweep from a scalar root. `param_count` sizes the parameter
    /// gradient table; slots never reached stay `None`.
    pub fn backward(&self, root: Var, param_count: usize) -> Gradients<S> {
        let root_node = &self.nodes[root.0];
        assert_eq!(
            root_node.value.shape(),
            [1, 1, 1, 1],
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(S::one()));

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { .. } => {
                    // Terminal; keep the gradient for collection below.
                    grads[i] = Some(g);
                }
                Op::Relu { x } => {
                    if self.needs(*x) {
                        let gx = eltwise::relu_backward(self.value(*x), &g);
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::Sigmoid { x } => {
                    if self.needs(*x) {
                        let gx = eltwise::sigmoid_backward(&node.value, &g);
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::Affine { x, mul } => {
                    if self.needs(*x) {
                        accumulate(&mut grads[x.0], g.scale(*mul));
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], eltwise::reduce_to(&g, self.value(*a).shape()));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], eltwise::reduce_to(&g, self.value(*b).shape()));
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(*a) {
                        let ga = eltwise::mul_backward_into(&g, self.value(*b), self.value(*a).shape());
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.needs(*b) {
                        let gb = eltwise::mul_backward_into(&g, self.value(*a), self.value(*b).shape());
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Div { a, b } => {
                    let (ga, gb) = eltwise::div_backward(
                        &g,
                        self.value(*a),
                        self.value(*b),
                        self.needs(*a),
                        self.needs(*b),
                    );
                    if let Some(ga) = ga {
                        accumulate(&mut grads[a.0], ga);
                    }
                    if let Some(gb) = gb {
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Conv2d { x, w, b, cfg } => {
                    let want_gx = self.needs(*x);
                    let want_gw = self.needs(*w);
                    let want_gb = b.map(|bv| self.needs(bv)).unwrap_or(false);
                    let out = conv::backward(self.value(*x), self.value(*w), cfg, &g, want_gx, want_gw, want_gb);
                    if let Some(gx) = out.gx {
                        accumulate(&mut grads[x.0], gx);
                    }
                    if let Some(gw) = out.gw {
                        accumulate(&mut grads[w.0], gw);
                    }
                    if let (Some(bv), Some(gb)) = (b, out.gb) {
                        accumulate(&mut grads[bv.0], gb);
                    }
                }
                Op::PadReflect { x, pad } => {
                    if self.needs(*x) {
                        let gx = eltwise::pad_reflect_backward(&g, self.value(*x).shape(), *pad);
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    if self.needs(*x) {
                        let gx = pool::max_pool2_backward(&g, self.value(*x).shape(), argmax);
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::GlobalAvgPool { x } => {
                    if self.needs(*x) {
                        let gx = pool::global_avg_backward(&g, self.value(*x).shape());
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::GlobalMaxPool { x, argmax } => {
                    if self.needs(*x) {
                        let gx = pool::global_max_backward(&g, self.value(*x).shape(), argmax);
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::ChannelMean { x } => {
                    if self.needs(*x) {
                        let gx = pool::channel_mean_backward(&g, self.value(*x).shape());
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::ChannelMax { x, argmax } => {
                    if self.needs(*x) {
                        let gx = pool::channel_max_backward(&g, self.value(*x).shape(), argmax);
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::Bilinear { x } => {
                    if self.needs(*x) {
                        let gx = resize::backward(&g, self.value(*x).shape());
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::ConcatChannels { a, b } => {
                    let (ga, gb) = eltwise::concat_channels_backward(
                        &g,
                        self.value(*a).shape(),
                        self.value(*b).shape(),
                    );
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
                    let out = norm::backward(
                        &g,
                        self.value(*x),
                        self.value(*gamma),
                        mean,
                        inv_std,
                        *train,
                        self.needs(*x),
                        self.needs(*gamma),
                        self.needs(*beta),
                    );
                    if let Some(gx) = out.gx {
                        accumulate(&mut grads[x.0], gx);
                    }
                    if let Some(gg) = out.ggamma {
                        accumulate(&mut grads[gamma.0], gg);
                    }
                    if let Some(gb) = out.gbeta {
                        accumulate(&mut grads[beta.0], gb);
                    }
                }
                Op::SumAll { x } => {
                    if self.needs(*x) {
                        let gv = g.data()[0];
                        accumulate(&mut grads[x.0], Tensor::filled(self.value(*x).shape(), gv));
                    }
                }
                Op::BceLoss { p, target, eps } => {
                    if self.needs(*p) {
                        let gp = lossops::bce_backward(&g, self.value(*p), target, *eps);
                        accumulate(&mut grads[p.0], gp);
                    }
                }
                Op::IouLoss { p, target } => {
                    if self.needs(*p) {
                        let gp = lossops::iou_backward(&g, self.value(*p), target);
                        accumulate(&mut grads[p.0], gp);
                    }
                }
            }
        }

        let mut param: Vec<Option<Tensor<S>>> = Vec::new();
        param.resize_with(param_count, || None);
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(slot) } = node.op {
                if let Some(g) = grads[i].clone() {
                    accumulate(&mut param[slot], g);
                }
            }
        }
        Gradients { node: grads, param }
    }
}
