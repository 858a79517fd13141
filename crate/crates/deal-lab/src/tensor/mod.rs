//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of operations built during one forward pass of one
//! model instance. Parameters enter as gradient-enabled leaves, the loss is
//! a scalar node, and [`Graph::backward`] walks the tape in reverse and
//! returns per-node gradients. Graphs are single-threaded by construction;
//! independent model instances may live on separate threads.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense n-dimensional value, row-major `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Kaiming-uniform initialization: U(-b, b) with b = sqrt(6 / fan_in),
    /// fan_in = product of all dims except the first.
    pub fn kaiming_uniform(shape: &[usize], rng: &mut Rng) -> Self {
        let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of {} elements",
                self.data.len()
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "expected 4-d NCHW tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
        dilation: usize,
    },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    SoftmaxChannel { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    AddScalar { x: NodeId },
    MulScalar { x: NodeId, c: f64 },
    Ln { x: NodeId },
    Abs { x: NodeId },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Sum { x: NodeId },
    Mean { x: NodeId },
    MaxPool2d { x: NodeId, arg: Vec<usize> },
    GlobalAvgPool { x: NodeId },
    UpsampleNearest { x: NodeId, factor: usize },
    ConcatChannel { a: NodeId, b: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    CrossEntropyLogits { x: NodeId, targets: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-forward-pass computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients keyed by node id, produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for a node that must have one.
    pub fn expect(&self, id: NodeId) -> Result<&Tensor> {
        self.get(id)
            .ok_or_else(|| Error::Contract("missing gradient for parameter".into()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Gradient-enabled leaf (a trainable parameter or probed activation).
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "shape mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Result<NodeId> {
        let (n, cin, ih, iw) = self.value(input).dims4()?;
        let (cout, kcin, kh, kw) = self.value(kernel).dims4()?;
        if kcin != cin {
            return Err(Error::Dimension(format!(
                "conv2d: input has {} channels, kernel expects {}",
                cin, kcin
            )));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Dimension("conv2d: stride/dilation must be >= 1".into()));
        }
        let oh = conv::conv_out_len(ih, kh, stride, pad, dilation)
            .ok_or_else(|| Error::Dimension("conv2d: kernel larger than padded input".into()))?;
        let ow = conv::conv_out_len(iw, kw, stride, pad, dilation)
            .ok_or_else(|| Error::Dimension("conv2d: kernel larger than padded input".into()))?;
        let mut out = vec![0.0; n * cout * oh * ow];
        conv::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            &mut out,
            n,
            cin,
            ih,
            iw,
            cout,
            kh,
            kw,
            stride,
            pad,
            dilation,
            oh,
            ow,
        );
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            Tensor::new(vec![n, cout, oh, ow], out)?,
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
                dilation,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rg = self.rg(x);
        self.push(t, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid { x }, rg)
    }

    /// Softmax over the channel axis of an NCHW tensor, per pixel.
    pub fn softmax_channel(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        let hw = h * w;
        for b in 0..n {
            for p in 0..hw {
                let mut mx = f64::NEG_INFINITY;
                for ch in 0..c {
                    mx = mx.max(src[(b * c + ch) * hw + p]);
                }
                let mut z = 0.0;
                for ch in 0..c {
                    let e = (src[(b * c + ch) * hw + p] - mx).exp();
                    out[(b * c + ch) * hw + p] = e;
                    z += e;
                }
                for ch in 0..c {
                    out[(b * c + ch) * hw + p] /= z;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n, c, h, w], out)?,
            Op::SoftmaxChannel { x },
            rg,
        ))
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x / y, Op::Div { a, b })
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v + c).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rg = self.rg(x);
        self.push(t, Op::AddScalar { x }, rg)
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rg = self.rg(x);
        self.push(t, Op::MulScalar { x, c }, rg)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v.ln()).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rg = self.rg(x);
        self.push(t, Op::Ln { x }, rg)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v.abs()).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rg = self.rg(x);
        self.push(t, Op::Abs { x }, rg)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.clamp(lo, hi))
            .collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rg = self.rg(x);
        self.push(t, Op::Clamp { x, lo, hi }, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s / n), Op::Mean { x }, rg)
    }

    /// 2x2 max pooling with stride 2.
    pub fn max_pool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, ih, iw) = self.value(x).dims4()?;
        if ih < 2 || iw < 2 {
            return Err(Error::Dimension("max_pool2d: input smaller than window".into()));
        }
        let (out, arg, oh, ow) = conv::max_pool2d_forward(self.value(x).data(), n, c, ih, iw);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n, c, oh, ow], out)?,
            Op::MaxPool2d { x, arg },
            rg,
        ))
    }

    /// NCHW -> NC spatial average.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let src = self.value(x).data();
        let hw = (h * w) as f64;
        let mut out = vec![0.0; n * c];
        for i in 0..n * c {
            out[i] = src[i * h * w..(i + 1) * h * w].iter().sum::<f64>() / hw;
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n, c], out)?,
            Op::GlobalAvgPool { x },
            rg,
        ))
    }

    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let (n, c, ih, iw) = self.value(x).dims4()?;
        let out = conv::upsample_nearest(self.value(x).data(), n, c, ih, iw, factor);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n, c, ih * factor, iw * factor], out)?,
            Op::UpsampleNearest { x, factor },
            rg,
        ))
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channel(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, ca, h, w) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if n != nb || h != hb || w != wb {
            return Err(Error::Dimension(format!(
                "concat_channel: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let hw = h * w;
        let mut out = vec![0.0; n * (ca + cb) * hw];
        let pa = self.value(a).data();
        let pb = self.value(b).data();
        for bch in 0..n {
            let dst = bch * (ca + cb) * hw;
            out[dst..dst + ca * hw].copy_from_slice(&pa[bch * ca * hw..(bch + 1) * ca * hw]);
            out[dst + ca * hw..dst + (ca + cb) * hw]
                .copy_from_slice(&pb[bch * cb * hw..(bch + 1) * cb * hw]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![n, ca + cb, h, w], out)?,
            Op::ConcatChannel { a, b },
            rg,
        ))
    }

    /// Fully connected layer: x[n,in] * w[out,in]^T + b[out].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || ws[0] != bs[0] {
            return Err(Error::Dimension(format!(
                "linear: x{:?} w{:?} b{:?}",
                xs, ws, bs
            )));
        }
        let (n, cin, cout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; n * cout];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        for i in 0..n {
            for o in 0..cout {
                let mut acc = bd[o];
                for k in 0..cin {
                    acc += xd[i * cin + k] * wd[o * cin + k];
                }
                out[i * cout + o] = acc;
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![n, cout], out)?,
            Op::Linear { x, w, b },
            rg,
        ))
    }

    /// Mean softmax cross-entropy over a batch of logits [n, c].
    pub fn cross_entropy_logits(&mut self, x: NodeId, targets: &[usize]) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 || xs[0] != targets.len() {
            return Err(Error::Dimension(format!(
                "cross_entropy_logits: logits {:?}, {} targets",
                xs,
                targets.len()
            )));
        }
        let (n, c) = (xs[0], xs[1]);
        let xd = self.value(x).data();
        let mut loss = 0.0;
        for i in 0..n {
            let row = &xd[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            loss += z.ln() + mx - row[targets[i]];
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropyLogits {
                x,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let out = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor {
                    shape: self.nodes[i].value.shape.clone(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = &mut grads[id.0];
        match slot {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
                dilation,
            } => {
                let (n, cin, ih, iw) = self.value(*input).dims4().unwrap();
                let (cout, _, kh, kw) = self.value(*kernel).dims4().unwrap();
                let (oh, ow) = (node.value.shape[2], node.value.shape[3]);
                if self.rg(*input) {
                    let mut gi = vec![0.0; self.value(*input).numel()];
                    conv::conv2d_backward_input(
                        g,
                        self.value(*kernel).data(),
                        &mut gi,
                        n,
                        cin,
                        ih,
                        iw,
                        cout,
                        kh,
                        kw,
                        *stride,
                        *pad,
                        *dilation,
                        oh,
                        ow,
                    );
                    self.accum(grads, *input, &gi);
                }
                if self.rg(*kernel) {
                    let mut gk = vec![0.0; self.value(*kernel).numel()];
                    conv::conv2d_backward_kernel(
                        g,
                        self.value(*input).data(),
                        &mut gk,
                        n,
                        cin,
                        ih,
                        iw,
                        cout,
                        kh,
                        kw,
                        *stride,
                        *pad,
                        *dilation,
                        oh,
                        ow,
                    );
                    self.accum(grads, *kernel, &gk);
                }
            }
            Op::Relu { x } => {
                let src = self.value(*x).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(src)
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accum(grads, *x, &gx);
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                let gx: Vec<f64> = g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect();
                self.accum(grads, *x, &gx);
            }
            Op::SoftmaxChannel { x } => {
                let y = node.value.data();
                let (n, c, h, w) = node.value.dims4().unwrap();
                let hw = h * w;
                let mut gx = vec![0.0; y.len()];
                for b in 0..n {
                    for p in 0..hw {
                        let mut dot = 0.0;
                        for ch in 0..c {
                            let i = (b * c + ch) * hw + p;
                            dot += g[i] * y[i];
                        }
                        for ch in 0..c {
                            let i = (b * c + ch) * hw + p;
                            gx[i] = y[i] * (g[i] - dot);
                        }
                    }
                }
                self.accum(grads, *x, &gx);
            }
            Op::Add { a, b } => {
                self.accum(grads, *a, g);
                self.accum(grads, *b, g);
            }
            Op::Sub { a, b } => {
                self.accum(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accum(grads, *b, &neg);
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    let gb: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(&gv, &bv)| gv * bv).collect();
                    self.accum(grads, *a, &gb);
                }
                if self.rg(*b) {
                    let ga: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(&gv, &av)| gv * av).collect();
                    self.accum(grads, *b, &ga);
                }
            }
            Op::Div { a, b } => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if self.rg(*a) {
                    let ga: Vec<f64> = g.iter().zip(bd).map(|(&gv, &bv)| gv / bv).collect();
                    self.accum(grads, *a, &ga);
                }
                if self.rg(*b) {
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(ad.iter().zip(bd))
                        .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                        .collect();
                    self.accum(grads, *b, &gb);
                }
            }
            Op::AddScalar { x } => self.accum(grads, *x, g),
            Op::MulScalar { x, c } => {
                let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.accum(grads, *x, &gx);
            }
            Op::Ln { x } => {
                let src = self.value(*x).data();
                let gx: Vec<f64> = g.iter().zip(src).map(|(&gv, &xv)| gv / xv).collect();
                self.accum(grads, *x, &gx);
            }
            Op::Abs { x } => {
                let src = self.value(*x).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(src)
                    .map(|(&gv, &xv)| gv * if xv > 0.0 { 1.0 } else if xv < 0.0 { -1.0 } else { 0.0 })
                    .collect();
                self.accum(grads, *x, &gx);
            }
            Op::Clamp { x, lo, hi } => {
                let src = self.value(*x).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(src)
                    .map(|(&gv, &xv)| if xv > *lo && xv < *hi { gv } else { 0.0 })
                    .collect();
                self.accum(grads, *x, &gx);
            }
            Op::Sum { x } => {
                let gx = vec![g[0]; self.value(*x).numel()];
                self.accum(grads, *x, &gx);
            }
            Op::Mean { x } => {
                let n = self.value(*x).numel();
                let gx = vec![g[0] / n as f64; n];
                self.accum(grads, *x, &gx);
            }
            Op::MaxPool2d { x, arg } => {
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (i, &src_idx) in arg.iter().enumerate() {
                    gx[src_idx] += g[i];
                }
                self.accum(grads, *x, &gx);
            }
            Op::GlobalAvgPool { x } => {
                let (_, _, h, w) = self.value(*x).dims4().unwrap();
                let hw = h * w;
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (i, gv) in g.iter().enumerate() {
                    let v = gv / hw as f64;
                    for p in 0..hw {
                        gx[i * hw + p] = v;
                    }
                }
                self.accum(grads, *x, &gx);
            }
            Op::UpsampleNearest { x, factor } => {
                let (n, c, ih, iw) = self.value(*x).dims4().unwrap();
                let f = *factor;
                let (oh, ow) = (ih * f, iw * f);
                let mut gx = vec![0.0; self.value(*x).numel()];
                for bc in 0..n * c {
                    let go_base = bc * oh * ow;
                    let gi_base = bc * ih * iw;
                    for y in 0..oh {
                        let src_row = gi_base + (y / f) * iw;
                        let dst_row = go_base + y * ow;
                        for x2 in 0..ow {
                            gx[src_row + x2 / f] += g[dst_row + x2];
                        }
                    }
                }
                self.accum(grads, *x, &gx);
            }
            Op::ConcatChannel { a, b } => {
                let (n, ca, h, w) = self.value(*a).dims4().unwrap();
                let cb = self.value(*b).shape()[1];
                let hw = h * w;
                if self.rg(*a) {
                    let mut ga = vec![0.0; self.value(*a).numel()];
                    for bch in 0..n {
                        let src = bch * (ca + cb) * hw;
                        ga[bch * ca * hw..(bch + 1) * ca * hw]
                            .copy_from_slice(&g[src..src + ca * hw]);
                    }
                    self.accum(grads, *a, &ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; self.value(*b).numel()];
                    for bch in 0..n {
                        let src = bch * (ca + cb) * hw + ca * hw;
                        gb[bch * cb * hw..(bch + 1) * cb * hw]
                            .copy_from_slice(&g[src..src + cb * hw]);
                    }
                    self.accum(grads, *b, &gb);
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.value(*x).shape();
                let (n, cin) = (xs[0], xs[1]);
                let cout = self.value(*w).shape()[0];
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                if self.rg(*x) {
                    let mut gx = vec![0.0; n * cin];
                    for i in 0..n {
                        for o in 0..cout {
                            let gv = g[i * cout + o];
                            for k in 0..cin {
                                gx[i * cin + k] += gv * wd[o * cin + k];
                            }
                        }
                    }
                    self.accum(grads, *x, &gx);
                }
                if self.rg(*w) {
                    let mut gw = vec![0.0; cout * cin];
                    for i in 0..n {
                        for o in 0..cout {
                            let gv = g[i * cout + o];
                            for k in 0..cin {
                                gw[o * cin + k] += gv * xd[i * cin + k];
                            }
                        }
                    }
                    self.accum(grads, *w, &gw);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; cout];
                    for i in 0..n {
                        for o in 0..cout {
                            gb[o] += g[i * cout + o];
                        }
                    }
                    self.accum(grads, *b, &gb);
                }
            }
            Op::CrossEntropyLogits { x, targets } => {
                let xs = self.value(*x).shape();
                let (n, c) = (xs[0], xs[1]);
                let xd = self.value(*x).data();
                let scale = g[0] / n as f64;
                let mut gx = vec![0.0; n * c];
                for i in 0..n {
                    let row = &xd[i * c..(i + 1) * c];
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                    for k in 0..c {
                        let p = (row[k] - mx).exp() / z;
                        gx[i * c + k] = scale * (p - if k == targets[i] { 1.0 } else { 0.0 });
                    }
                }
                self.accum(grads, *x, &gx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap());
        let k = g.constant(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let y = g.conv2d(x, k, 1, 0, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv_zero_input() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let k = g.constant(Tensor::full(&[3, 2, 3, 3], 0.7));
        let y = g.conv2d(x, k, 1, 1, 1).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_shape_mismatch_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let k = g.constant(Tensor::zeros(&[3, 5, 3, 3]));
        assert!(matches!(g.conv2d(x, k, 1, 1, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_negative() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(-1.0));
        let y = g.relu(x);
        assert_eq!(g.value(y).data()[0], 0.0);
    }

    #[test]
    fn softmax_equal_channels() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 2, 3, 3], 1.3));
        let y = g.softmax_channel(x).unwrap();
        let d = g.value(y).data();
        assert!(d.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        // channel sums exactly 1
        for p in 0..9 {
            let s = d[p] + d[9 + p];
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_sum_is_ones() {
        let mut g = Graph::new();
        let w = g.param(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap());
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.expect(w).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_mean_square_halved() {
        // loss = mean(w^2)/2 -> grad = w/n
        let data = vec![0.5, -1.0, 2.0, 3.0];
        let mut g = Graph::new();
        let w = g.param(Tensor::new(vec![4], data.clone()).unwrap());
        let sq = g.mul(w, w).unwrap();
        let m = g.mean(sq);
        let loss = g.mul_scalar(m, 0.5);
        let grads = g.backward(loss).unwrap();
        let got = grads.expect(w).unwrap();
        for (gv, wv) in got.data().iter().zip(&data) {
            assert!((gv - wv / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let w = g.param(Tensor::zeros(&[2, 2]));
        let y = g.relu(w);
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn max_pool_routes_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 5.0, 2.0, 0.0]).unwrap());
        let y = g.max_pool2d(x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.expect(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
