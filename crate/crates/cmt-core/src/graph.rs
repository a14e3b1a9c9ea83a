//! Reverse-mode differentiation on a tape of tensor operations.
//!
//! Every operation appends a node holding its result, its parent ids, and a
//! vector–Jacobian closure. `backward` walks the tape in reverse creation
//! order, which is a valid topological order because parents always precede
//! children. Accumulation order is therefore fixed, making gradients
//! bit-reproducible for a given seed and input.

use crate::error::{Error, Result};
use crate::tensor::{self, fmt_shape, Padding, Ratio, ResampleMode, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Context handed to a backward rule.
pub struct OpCtx<'a> {
    /// Gradient of the loss w.r.t. this node's output.
    pub grad: &'a Tensor,
    /// Parent values, aligned with the node's parent list.
    pub inputs: &'a [&'a Tensor],
    /// This node's own output value.
    pub output: &'a Tensor,
}

type BackwardFn = Box<dyn Fn(&OpCtx) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    backward: Option<BackwardFn>,
}

/// A single forward pass's computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, materializing zeros of the given shape if the node
    /// was unreachable from the root.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Inserts an input node (parameter or data); no backward rule.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Vec::new(), None)
    }

    /// Inserts a node with an explicit backward rule. This is the extension
    /// point other modules use to register their own differentiable ops.
    pub fn apply(&mut self, value: Tensor, parents: Vec<NodeId>, backward: BackwardFn) -> NodeId {
        self.push(value, parents, Some(backward))
    }

    fn push(&mut self, value: Tensor, parents: Vec<NodeId>, backward: Option<BackwardFn>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        id
    }

    /// Accumulates gradients of a scalar root over the reachable graph.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {}",
                fmt_shape(root_value.shape())
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let Some(backward) = &node.backward {
                let inputs: Vec<&Tensor> =
                    node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let ctx = OpCtx {
                    grad: &grad,
                    inputs: &inputs,
                    output: &node.value,
                };
                let contribs = backward(&ctx);
                debug_assert_eq!(contribs.len(), node.parents.len());
                for (parent, contrib) in node.parents.iter().zip(contribs) {
                    match &mut grads[parent.0] {
                        Some(acc) => {
                            let summed = acc.add(&contrib)?;
                            *acc = summed;
                        }
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            grads[i] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.apply(value, vec![a, b], Box::new(|ctx| {
            vec![ctx.grad.clone(), ctx.grad.clone()]
        })))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.apply(value, vec![a, b], Box::new(|ctx| {
            vec![ctx.grad.clone(), ctx.grad.scale(-1.0)]
        })))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.apply(value, vec![a, b], Box::new(|ctx| {
            vec![
                ctx.grad.mul(ctx.inputs[1]).expect("shapes checked at build"),
                ctx.grad.mul(ctx.inputs[0]).expect("shapes checked at build"),
            ]
        })))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.value(a).scale(s);
        self.apply(value, vec![a], Box::new(move |ctx| vec![ctx.grad.scale(s)]))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    /// y = x + b broadcast over the trailing axis.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let bv = self.value(b);
        let c = *xv.shape().last().expect("non-empty shape");
        if bv.shape() != [c] {
            return Err(Error::Dimension(format!(
                "bias shape {} does not match trailing axis of {}",
                fmt_shape(bv.shape()),
                fmt_shape(xv.shape())
            )));
        }
        let mut value = xv.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % c];
        }
        Ok(self.apply(value, vec![x, b], Box::new(move |ctx| {
            let mut gb = vec![0.0; c];
            for (i, g) in ctx.grad.data().iter().enumerate() {
                gb[i % c] += g;
            }
            vec![
                ctx.grad.clone(),
                Tensor::new(vec![c], gb).expect("bias grad shape"),
            ]
        })))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::abs);
        // subgradient at 0 is fixed to 0
        self.apply(value, vec![a], Box::new(|ctx| {
            vec![ctx
                .grad
                .zip_map(ctx.inputs[0], |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })
                .expect("same shape")]
        }))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::exp);
        self.apply(value, vec![a], Box::new(|ctx| {
            vec![ctx.grad.mul(ctx.output).expect("same shape")]
        }))
    }

    /// Sigmoid-weighted linear unit, the smooth rectifier used throughout
    /// the network: y = x * sigmoid(x).
    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| x * sigmoid(x));
        self.apply(value, vec![a], Box::new(|ctx| {
            vec![ctx
                .grad
                .zip_map(ctx.inputs[0], |g, x| {
                    let s = sigmoid(x);
                    g * (s * (1.0 + x * (1.0 - s)))
                })
                .expect("same shape")]
        }))
    }

    /// Elementwise complex modulus sqrt(a^2 + b^2); gradient at the origin
    /// is fixed to 0.
    pub fn hypot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), f64::hypot)?;
        Ok(self.apply(value, vec![a, b], Box::new(|ctx| {
            let r = ctx.output.data();
            let av = ctx.inputs[0].data();
            let bv = ctx.inputs[1].data();
            let g = ctx.grad.data();
            let mut da = vec![0.0; r.len()];
            let mut db = vec![0.0; r.len()];
            for i in 0..r.len() {
                if r[i] > 0.0 {
                    da[i] = g[i] * av[i] / r[i];
                    db[i] = g[i] * bv[i] / r[i];
                }
            }
            vec![
                Tensor::new(ctx.output.shape().to_vec(), da).expect("shape"),
                Tensor::new(ctx.output.shape().to_vec(), db).expect("shape"),
            ]
        })))
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        let shape = self.value(a).shape().to_vec();
        self.apply(value, vec![a], Box::new(move |ctx| {
            vec![Tensor::full(&shape, ctx.grad.data()[0])]
        }))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let value = Tensor::scalar(self.value(a).sum() / n);
        let shape = self.value(a).shape().to_vec();
        self.apply(value, vec![a], Box::new(move |ctx| {
            vec![Tensor::full(&shape, ctx.grad.data()[0] / n)]
        }))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.apply(value, vec![a, b], Box::new(|ctx| {
            let bt = ctx.inputs[1].transpose2().expect("rank 2");
            let at = ctx.inputs[0].transpose2().expect("rank 2");
            vec![
                tensor::matmul(ctx.grad, &bt).expect("grad shapes"),
                tensor::matmul(&at, ctx.grad).expect("grad shapes"),
            ]
        })))
    }

    pub fn softmax_columns(&mut self, s: NodeId) -> Result<NodeId> {
        let value = tensor::softmax_columns(self.value(s))?;
        Ok(self.apply(value, vec![s], Box::new(|ctx| {
            let (rows, cols) = (ctx.output.shape()[0], ctx.output.shape()[1]);
            let y = ctx.output.data();
            let g = ctx.grad.data();
            let mut gs = vec![0.0; rows * cols];
            for j in 0..cols {
                let mut dot = 0.0;
                for i in 0..rows {
                    dot += y[i * cols + j] * g[i * cols + j];
                }
                for i in 0..rows {
                    gs[i * cols + j] = y[i * cols + j] * (g[i * cols + j] - dot);
                }
            }
            vec![Tensor::new(vec![rows, cols], gs).expect("shape")]
        })))
    }

    /// Divides a tensor by a positive scalar node (e.g. a learnable scale).
    pub fn div_by_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s).scalar_value()?;
        let value = self.value(x).scale(1.0 / sv);
        Ok(self.apply(value, vec![x, s], Box::new(move |ctx| {
            let gx = ctx.grad.scale(1.0 / sv);
            let dot: f64 = ctx
                .grad
                .data()
                .iter()
                .zip(ctx.inputs[0].data())
                .map(|(g, x)| g * x)
                .sum();
            vec![gx, Tensor::scalar(-dot / (sv * sv))]
        })))
    }

    // ---- structured ops ----

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, padding: Padding) -> Result<NodeId> {
        let value = tensor::conv2d(self.value(x), self.value(kernel), padding)?;
        Ok(self.apply(value, vec![x, kernel], Box::new(move |ctx| {
            let gx = tensor::conv2d_input_grad(
                ctx.grad,
                ctx.inputs[1],
                ctx.inputs[0].shape(),
                padding,
            )
            .expect("shapes checked at build");
            let gk = tensor::conv2d_kernel_grad(
                ctx.grad,
                ctx.inputs[0],
                ctx.inputs[1].shape(),
                padding,
            )
            .expect("shapes checked at build");
            vec![gx, gk]
        })))
    }

    pub fn conv2d_depthwise(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        padding: Padding,
    ) -> Result<NodeId> {
        let value = tensor::conv2d_depthwise(self.value(x), self.value(kernel), padding)?;
        Ok(self.apply(value, vec![x, kernel], Box::new(move |ctx| {
            let gx = tensor::conv2d_depthwise_input_grad(
                ctx.grad,
                ctx.inputs[1],
                ctx.inputs[0].shape(),
                padding,
            )
            .expect("shapes checked at build");
            let gk = tensor::conv2d_depthwise_kernel_grad(
                ctx.grad,
                ctx.inputs[0],
                ctx.inputs[1].shape(),
                padding,
            )
            .expect("shapes checked at build");
            vec![gx, gk]
        })))
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (value, xhat, istd) =
            tensor::layer_norm_internal(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.apply(value, vec![x, gain, bias], Box::new(move |ctx| {
            let (t, c) = (xhat.shape()[0], xhat.shape()[1]);
            let g = ctx.grad.data();
            let gain = ctx.inputs[1].data();
            let xh = xhat.data();
            let mut dgain = vec![0.0; c];
            let mut dbias = vec![0.0; c];
            let mut dx = vec![0.0; t * c];
            for row in 0..t {
                let base = row * c;
                let mut mean_gg = 0.0;
                let mut mean_ggx = 0.0;
                for ch in 0..c {
                    let gg = g[base + ch] * gain[ch];
                    mean_gg += gg;
                    mean_ggx += gg * xh[base + ch];
                    dgain[ch] += g[base + ch] * xh[base + ch];
                    dbias[ch] += g[base + ch];
                }
                mean_gg /= c as f64;
                mean_ggx /= c as f64;
                for ch in 0..c {
                    let gg = g[base + ch] * gain[ch];
                    dx[base + ch] = istd[row] * (gg - mean_gg - xh[base + ch] * mean_ggx);
                }
            }
            vec![
                Tensor::new(vec![t, c], dx).expect("shape"),
                Tensor::new(vec![c], dgain).expect("shape"),
                Tensor::new(vec![c], dbias).expect("shape"),
            ]
        })))
    }

    pub fn resample(&mut self, x: NodeId, factor: Ratio, mode: ResampleMode) -> Result<NodeId> {
        let value = tensor::resample(self.value(x), factor, mode)?;
        Ok(self.apply(value, vec![x], Box::new(move |ctx| {
            vec![
                tensor::resample_grad(ctx.grad, ctx.inputs[0].shape(), factor, mode)
                    .expect("shapes checked at build"),
            ]
        })))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.apply(value, vec![x], Box::new(|ctx| {
            vec![ctx
                .grad
                .reshape(ctx.inputs[0].shape())
                .expect("same element count")]
        })))
    }

    /// Column slice [lo, hi) of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 || hi > xv.shape()[1] || lo >= hi {
            return Err(Error::Dimension(format!(
                "cannot slice columns {lo}..{hi} of {}",
                fmt_shape(xv.shape())
            )));
        }
        let (t, c) = (xv.shape()[0], xv.shape()[1]);
        let width = hi - lo;
        let mut out = vec![0.0; t * width];
        for row in 0..t {
            out[row * width..(row + 1) * width]
                .copy_from_slice(&xv.data()[row * c + lo..row * c + hi]);
        }
        let value = Tensor::new(vec![t, width], out)?;
        Ok(self.apply(value, vec![x], Box::new(move |ctx| {
            let mut gx = vec![0.0; t * c];
            for row in 0..t {
                gx[row * c + lo..row * c + hi]
                    .copy_from_slice(&ctx.grad.data()[row * width..(row + 1) * width]);
            }
            vec![Tensor::new(vec![t, c], gx).expect("shape")]
        })))
    }

    /// Concatenates rank-2 tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Argument("concat of zero parts".into()));
        }
        let t = self.value(parts[0]).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.shape()[0] != t {
                return Err(Error::Dimension(format!(
                    "concat_cols parts must share row count {t}, got {}",
                    fmt_shape(v.shape())
                )));
            }
            widths.push(v.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; t * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for row in 0..t {
                out[row * total + offset..row * total + offset + w]
                    .copy_from_slice(&v.data()[row * w..(row + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor::new(vec![t, total], out)?;
        Ok(self.apply(value, parts.to_vec(), Box::new(move |ctx| {
            let g = ctx.grad.data();
            let mut grads = Vec::with_capacity(widths.len());
            let mut offset = 0;
            for &w in &widths {
                let mut gp = vec![0.0; t * w];
                for row in 0..t {
                    gp[row * w..(row + 1) * w]
                        .copy_from_slice(&g[row * total + offset..row * total + offset + w]);
                }
                grads.push(Tensor::new(vec![t, w], gp).expect("shape"));
                offset += w;
            }
            grads
        })))
    }

    /// Extracts one channel of an H×W×C map as an H×W plane.
    pub fn channel_plane(&mut self, x: NodeId, b: usize) -> Result<NodeId> {
        let value = self.value(x).channel(b)?;
        let (h, w, c) = {
            let s = self.value(x).shape();
            (s[0], s[1], s[2])
        };
        Ok(self.apply(value, vec![x], Box::new(move |ctx| {
            let mut gx = vec![0.0; h * w * c];
            for px in 0..h * w {
                gx[px * c + b] = ctx.grad.data()[px];
            }
            vec![Tensor::new(vec![h, w, c], gx).expect("shape")]
        })))
    }

    /// Concatenates rank-3 feature maps along the channel (last) axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 3 || bv.rank() != 3 || av.shape()[..2] != bv.shape()[..2] {
            return Err(Error::Dimension(format!(
                "concat_channels expects matching spatial extents, got {} and {}",
                fmt_shape(av.shape()),
                fmt_shape(bv.shape())
            )));
        }
        let (h, w) = (av.shape()[0], av.shape()[1]);
        let (ca, cb) = (av.shape()[2], bv.shape()[2]);
        let mut out = vec![0.0; h * w * (ca + cb)];
        for px in 0..h * w {
            out[px * (ca + cb)..px * (ca + cb) + ca]
                .copy_from_slice(&av.data()[px * ca..(px + 1) * ca]);
            out[px * (ca + cb) + ca..(px + 1) * (ca + cb)]
                .copy_from_slice(&bv.data()[px * cb..(px + 1) * cb]);
        }
        let value = Tensor::new(vec![h, w, ca + cb], out)?;
        Ok(self.apply(value, vec![a, b], Box::new(move |ctx| {
            let g = ctx.grad.data();
            let mut ga = vec![0.0; h * w * ca];
            let mut gb = vec![0.0; h * w * cb];
            for px in 0..h * w {
                ga[px * ca..(px + 1) * ca]
                    .copy_from_slice(&g[px * (ca + cb)..px * (ca + cb) + ca]);
                gb[px * cb..(px + 1) * cb]
                    .copy_from_slice(&g[px * (ca + cb) + ca..(px + 1) * (ca + cb)]);
            }
            vec![
                Tensor::new(vec![h, w, ca], ga).expect("shape"),
                Tensor::new(vec![h, w, cb], gb).expect("shape"),
            ]
        })))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Central-difference check of a scalar-valued graph builder against the
    /// analytic gradients from backward().
    fn fd_check(build: impl Fn(&mut Graph, &[NodeId]) -> NodeId, inputs: &[Tensor]) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &ids);
        let grads = g.backward(root).unwrap();

        let h = 1e-5;
        for (which, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(ids[which], input.shape());
            for elem in 0..input.numel() {
                let eval = |delta: f64| {
                    let mut perturbed: Vec<Tensor> = inputs.to_vec();
                    perturbed[which].data_mut()[elem] += delta;
                    let mut g2 = Graph::new();
                    let ids2: Vec<NodeId> =
                        perturbed.iter().map(|t| g2.leaf(t.clone())).collect();
                    let r = build(&mut g2, &ids2);
                    g2.value(r).data()[0]
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data()[elem];
                let scale = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((a - numeric) / scale).abs() < 1e-4,
                    "input {which} elem {elem}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 4.0, 0.5, -0.25]).unwrap());
        let root = g.sum(x);
        let grads = g.backward(root).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_of_zero_scaled_branch_is_zeros() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.silu(x);
        let s = g.sum(y);
        let root = g.scale(s, 0.0);
        let grads = g.backward(root).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn fd_matmul() {
        let mut rng = Rng::new(21);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        fd_check(
            |g, ids| {
                let y = g.matmul(ids[0], ids[1]).unwrap();
                let y = g.silu(y);
                g.sum(y)
            },
            &[a, b],
        );
    }

    #[test]
    fn fd_softmax_columns() {
        let mut rng = Rng::new(22);
        let s = rand_tensor(&mut rng, &[4, 4]);
        let w = rand_tensor(&mut rng, &[4, 4]);
        fd_check(
            |g, ids| {
                let y = g.softmax_columns(ids[0]).unwrap();
                let y = g.mul(y, ids[1]).unwrap();
                g.sum(y)
            },
            &[s, w],
        );
    }

    #[test]
    fn fd_conv2d_both_paddings() {
        let mut rng = Rng::new(23);
        let x = rand_tensor(&mut rng, &[5, 4, 2]);
        let k = rand_tensor(&mut rng, &[3, 3, 2, 2]);
        for padding in [Padding::Same, Padding::None] {
            fd_check(
                |g, ids| {
                    let y = g.conv2d(ids[0], ids[1], padding).unwrap();
                    let y = g.silu(y);
                    g.sum(y)
                },
                &[x.clone(), k.clone()],
            );
        }
    }

    #[test]
    fn fd_conv2d_depthwise() {
        let mut rng = Rng::new(24);
        let x = rand_tensor(&mut rng, &[4, 4, 3]);
        let k = rand_tensor(&mut rng, &[3, 3, 3]);
        fd_check(
            |g, ids| {
                let y = g.conv2d_depthwise(ids[0], ids[1], Padding::Same).unwrap();
                let y = g.abs(y);
                g.sum(y)
            },
            &[x, k],
        );
    }

    #[test]
    fn fd_layer_norm() {
        let mut rng = Rng::new(25);
        let x = rand_tensor(&mut rng, &[3, 6]);
        let gain = rand_tensor(&mut rng, &[6]);
        let bias = rand_tensor(&mut rng, &[6]);
        fd_check(
            |g, ids| {
                let y = g.layer_norm(ids[0], ids[1], ids[2], 1e-6).unwrap();
                let y = g.silu(y);
                g.sum(y)
            },
            &[x, gain, bias],
        );
    }

    #[test]
    fn fd_resample_bilinear() {
        let mut rng = Rng::new(26);
        let x = rand_tensor(&mut rng, &[4, 4, 2]);
        fd_check(
            |g, ids| {
                let y = g
                    .resample(ids[0], Ratio::integer(2), ResampleMode::Bilinear)
                    .unwrap();
                let y = g.silu(y);
                g.sum(y)
            },
            &[x],
        );
    }

    #[test]
    fn fd_elementwise_chain() {
        let mut rng = Rng::new(27);
        let a = rand_tensor(&mut rng, &[2, 5]);
        let b = rand_tensor(&mut rng, &[2, 5]);
        fd_check(
            |g, ids| {
                let p = g.mul(ids[0], ids[1]).unwrap();
                let e = g.exp(ids[0]);
                let q = g.sub(p, e).unwrap();
                let r = g.abs(q);
                g.mean_all(r)
            },
            &[a, b],
        );
    }

    #[test]
    fn fd_hypot_and_scalar_division() {
        let mut rng = Rng::new(28);
        let a = rand_tensor(&mut rng, &[3, 3]);
        let b = rand_tensor(&mut rng, &[3, 3]);
        let s = Tensor::scalar(1.7);
        fd_check(
            |g, ids| {
                let scaled = g.div_by_scalar(ids[0], ids[2]).unwrap();
                let m = g.hypot(scaled, ids[1]).unwrap();
                g.mean_all(m)
            },
            &[a, b, s],
        );
    }

    #[test]
    fn fd_bias_slice_concat() {
        let mut rng = Rng::new(29);
        let x = rand_tensor(&mut rng, &[4, 6]);
        let bias = rand_tensor(&mut rng, &[3]);
        fd_check(
            |g, ids| {
                let lo = g.slice_cols(ids[0], 0, 3).unwrap();
                let hi = g.slice_cols(ids[0], 3, 6).unwrap();
                let hi = g.add_bias(hi, ids[1]).unwrap();
                let cat = g.concat_cols(&[hi, lo]).unwrap();
                let y = g.silu(cat);
                g.sum(y)
            },
            &[x, bias],
        );
    }

    #[test]
    fn fd_concat_channels_and_reshape() {
        let mut rng = Rng::new(30);
        let a = rand_tensor(&mut rng, &[3, 3, 2]);
        let b = rand_tensor(&mut rng, &[3, 3, 1]);
        fd_check(
            |g, ids| {
                let cat = g.concat_channels(ids[0], ids[1]).unwrap();
                let flat = g.reshape(cat, &[9, 3]).unwrap();
                let y = g.silu(flat);
                g.sum(y)
            },
            &[a, b],
        );
    }

    #[test]
    fn gradient_accumulates_over_shared_subexpressions() {
        // y = x*x + x -> dy/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2], vec![3.0, -1.5]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.add(sq, x).unwrap();
        let root = g.sum(s);
        let grads = g.backward(root).unwrap();
        let got = grads.get(x).unwrap();
        assert!((got.data()[0] - 7.0).abs() < 1e-12);
        assert!((got.data()[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn determinism_same_seed_same_gradients() {
        let run = || {
            let mut rng = Rng::new(31);
            let x = rand_tensor(&mut rng, &[4, 4]);
            let w = rand_tensor(&mut rng, &[4, 4]);
            let mut g = Graph::new();
            let xi = g.leaf(x);
            let wi = g.leaf(w);
            let y = g.matmul(xi, wi).unwrap();
            let y = g.softmax_columns(y).unwrap();
            let root = g.sum(y);
            let grads = g.backward(root).unwrap();
            (
                g.value(root).data()[0].to_bits(),
                grads
                    .get(wi)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
