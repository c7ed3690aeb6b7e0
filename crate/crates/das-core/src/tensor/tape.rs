//! The gradient tape: append-only op records plus reverse replay.

use super::conv::{self, ConvDims};
use super::Tensor;
use crate::error::{DasError, Result};
use crate::sparsemax;
use std::sync::Arc;

/// Index of a node on its tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    // inputs [x, kernel, bias]; backward re-lowers x instead of storing col
    Conv2d {
        dims: ConvDims,
        kernel: Arc<Vec<f64>>,
        x: Arc<Vec<f64>>,
    },
    // inputs [x]; idx holds flat argmax positions into the input
    MaxPool {
        idx: Vec<u32>,
        in_len: usize,
    },
    PoolSelect {
        idx: Arc<Vec<u32>>,
        in_len: usize,
    },
    Relu {
        x: Arc<Vec<f64>>,
    },
    Reshape,
    Add,
    Sub,
    Mul {
        a: Arc<Vec<f64>>,
        b: Arc<Vec<f64>>,
    },
    Scale {
        c: f64,
    },
    Sum {
        in_len: usize,
    },
    L1Norm {
        x: Arc<Vec<f64>>,
    },
    // inputs [logits]
    CrossEntropy {
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Sparsemax {
        support: Vec<bool>,
    },
    Softmax {
        probs: Vec<f64>,
    },
    // inputs [weights, part_0, .., part_{n-1}]
    WeightedSum {
        weights: Vec<f64>,
        parts: Vec<Arc<Vec<f64>>>,
        part_len: usize,
    },
    // inputs [kernel]; embeds [co,ci,h,w] into [co,ci,hmax,wmax]
    PadKernel {
        co: usize,
        ci: usize,
        h: usize,
        w: usize,
        hmax: usize,
        wmax: usize,
        r0: usize,
        c0: usize,
    },
    // inputs [kernel, mask]; kernel viewed as [co, ci, inner]
    ChannelScale {
        kernel: Arc<Vec<f64>>,
        mask: Arc<Vec<f64>>,
        co: usize,
        ci: usize,
        inner: usize,
    },
    // inputs [v]; out = matrix * v with a constant matrix
    LinearMap {
        matrix: Arc<Vec<f64>>,
        rows: usize,
        cols: usize,
    },
    // inputs [re, im]
    Amplitude {
        re: Arc<Vec<f64>>,
        im: Arc<Vec<f64>>,
        out: Arc<Vec<f64>>,
    },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    needs: bool,
}

/// Gradient buffers produced by [`Tape::backward`], keyed by node.
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let id = t.node()?;
        self.slots.get(id.0)?.as_deref()
    }

    pub fn take(&mut self, t: &Tensor) -> Option<Vec<f64>> {
        let id = t.node()?;
        self.slots.get_mut(id.0)?.take()
    }
}

/// Append-only record of differentiable operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that records nothing; every op runs forward-only.
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register `t` as a trainable leaf. Gradients accumulate on the
    /// returned handle during [`Tape::backward`].
    pub fn param(&mut self, t: &Tensor) -> Tensor {
        if !self.recording {
            return t.detach();
        }
        let id = self.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            needs: true,
        });
        Tensor::from_parts(t.shape().to_vec(), t.data_arc(), Some(id))
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, t: &Tensor) -> bool {
        t.node().map_or(false, |id| self.nodes[id.0].needs)
    }

    /// Node id for an op input, creating a constant leaf when untracked.
    fn input_id(&mut self, t: &Tensor) -> NodeId {
        match t.node() {
            Some(id) => id,
            None => self.push(Node {
                op: Op::Leaf,
                inputs: vec![],
                needs: false,
            }),
        }
    }

    fn record(
        &mut self,
        op: Op,
        inputs: &[&Tensor],
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Tensor {
        let track = self.recording && inputs.iter().any(|t| self.needs(t));
        if !track {
            return Tensor::from_parts(shape, Arc::new(data), None);
        }
        let ids: Vec<NodeId> = inputs.iter().map(|t| self.input_id(t)).collect();
        let id = self.push(Node {
            op,
            inputs: ids,
            needs: true,
        });
        Tensor::from_parts(shape, Arc::new(data), Some(id))
    }

    // ── forward ops ──────────────────────────────────────────────────────

    /// 2-D convolution, 'same' zero padding, stride 1, plus per-channel bias.
    pub fn conv2d_same(&mut self, x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        let ks = kernel.shape();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(DasError::Dimension(format!(
                "conv2d_same expects 4-D input and kernel, got {xs:?} and {ks:?}"
            )));
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kcin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kcin != cin {
            return Err(DasError::Dimension(format!(
                "kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        if kh == 0 || kw == 0 || cout == 0 {
            return Err(DasError::Argument("zero-size kernel".into()));
        }
        if n == 0 || h == 0 || w == 0 {
            return Err(DasError::Argument("empty convolution input".into()));
        }
        if bias.shape() != [cout] {
            return Err(DasError::Dimension(format!(
                "bias shape {:?} does not match {cout} output channels",
                bias.shape()
            )));
        }
        let dims = ConvDims {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
        };
        let y = conv::with_scratch(|s| {
            conv::im2col(x.data(), &dims, &mut s.col);
            let mut y = Vec::new();
            conv::conv_forward(kernel.data(), bias.data(), &s.col, &dims, &mut y, &mut s.mat);
            y
        });
        let track = self.recording
            && (self.needs(x) || self.needs(kernel) || self.needs(bias));
        if !track {
            return Ok(Tensor::from_parts(
                vec![n, cout, h, w],
                Arc::new(y),
                None,
            ));
        }
        Ok(self.record(
            Op::Conv2d {
                dims,
                kernel: kernel.data_arc(),
                x: x.data_arc(),
            },
            &[x, kernel, bias],
            vec![n, cout, h, w],
            y,
        ))
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2x2(&mut self, x: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        if xs.len() != 4 {
            return Err(DasError::Dimension(format!(
                "maxpool2x2 expects 4-D input, got {xs:?}"
            )));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h < 2 || w < 2 {
            return Err(DasError::Dimension(format!(
                "maxpool2x2 needs spatial extents >= 2, got {h}x{w}"
            )));
        }
        let (out, idx) = conv::maxpool_indices(x.data(), n, c, h, w);
        Ok(self.record(
            Op::MaxPool {
                idx,
                in_len: x.len(),
            },
            &[x],
            vec![n, c, h / 2, w / 2],
            out,
        ))
    }

    /// Gather `x` at precomputed flat positions (pooling with shared indices).
    pub fn pool_select(
        &mut self,
        x: &Tensor,
        idx: &Arc<Vec<u32>>,
        out_shape: &[usize],
    ) -> Result<Tensor> {
        let want: usize = out_shape.iter().product();
        if want != idx.len() {
            return Err(DasError::Dimension(format!(
                "selection shape {out_shape:?} needs {want} indices, got {}",
                idx.len()
            )));
        }
        let data = x.data();
        let mut out = Vec::with_capacity(idx.len());
        for &p in idx.iter() {
            let p = p as usize;
            if p >= data.len() {
                return Err(DasError::Argument(format!(
                    "selection index {p} out of range for input of {}",
                    data.len()
                )));
            }
            out.push(data[p]);
        }
        Ok(self.record(
            Op::PoolSelect {
                idx: Arc::clone(idx),
                in_len: x.len(),
            },
            &[x],
            out_shape.to_vec(),
            out,
        ))
    }

    pub fn relu(&mut self, x: &Tensor) -> Tensor {
        let out: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        self.record(
            Op::Relu { x: x.data_arc() },
            &[x],
            x.shape().to_vec(),
            out,
        )
    }

    pub fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let want: usize = shape.iter().product();
        if want != x.len() {
            return Err(DasError::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                x.shape()
            )));
        }
        let track = self.recording && self.needs(x);
        if !track {
            return Ok(Tensor::from_parts(shape.to_vec(), x.data_arc(), None));
        }
        let xid = self.input_id(x);
        let id = self.push(Node {
            op: Op::Reshape,
            inputs: vec![xid],
            needs: true,
        });
        Ok(Tensor::from_parts(shape.to_vec(), x.data_arc(), Some(id)))
    }

    /// [n, c, h, w] -> [n, c*h*w]; the channel index varies slowest.
    pub fn flatten(&mut self, x: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        if xs.len() != 4 {
            return Err(DasError::Dimension(format!(
                "flatten expects 4-D input, got {xs:?}"
            )));
        }
        self.reshape(x, &[xs[0], xs[1] * xs[2] * xs[3]])
    }

    fn binary_check(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(DasError::Dimension(format!(
                "{what} on mismatched shapes {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::binary_check(a, b, "add")?;
        let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        Ok(self.record(Op::Add, &[a, b], a.shape().to_vec(), out))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::binary_check(a, b, "sub")?;
        let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        Ok(self.record(Op::Sub, &[a, b], a.shape().to_vec(), out))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::binary_check(a, b, "mul")?;
        let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        Ok(self.record(
            Op::Mul {
                a: a.data_arc(),
                b: b.data_arc(),
            },
            &[a, b],
            a.shape().to_vec(),
            out,
        ))
    }

    pub fn scale(&mut self, x: &Tensor, c: f64) -> Tensor {
        let out: Vec<f64> = x.data().iter().map(|v| v * c).collect();
        self.record(Op::Scale { c }, &[x], x.shape().to_vec(), out)
    }

    pub fn sum(&mut self, x: &Tensor) -> Tensor {
        let s: f64 = x.data().iter().sum();
        self.record(
            Op::Sum { in_len: x.len() },
            &[x],
            vec![1],
            vec![s],
        )
    }

    /// Sum of absolute values; the subgradient at zero entries is zero.
    pub fn l1norm(&mut self, x: &Tensor) -> Tensor {
        let s: f64 = x.data().iter().map(|v| v.abs()).sum();
        self.record(Op::L1Norm { x: x.data_arc() }, &[x], vec![1], vec![s])
    }

    /// Mean negative log softmax probability of each row's label.
    pub fn cross_entropy_softmax(&mut self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let ls = logits.shape();
        if ls.len() != 2 {
            return Err(DasError::Dimension(format!(
                "cross_entropy_softmax expects [batch, classes] logits, got {ls:?}"
            )));
        }
        let (n, k) = (ls[0], ls[1]);
        if n == 0 || k == 0 {
            return Err(DasError::Argument("empty logits".into()));
        }
        if labels.len() != n {
            return Err(DasError::Dimension(format!(
                "{} labels for batch of {n}",
                labels.len()
            )));
        }
        let mut probs = vec![0.0f64; n * k];
        let mut loss = 0.0f64;
        let data = logits.data();
        for r in 0..n {
            let label = labels[r];
            if label >= k {
                return Err(DasError::Argument(format!(
                    "label {label} out of range for {k} classes"
                )));
            }
            let row = &data[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &z in row {
                denom += (z - m).exp();
            }
            let log_denom = denom.ln() + m;
            for (c, &z) in row.iter().enumerate() {
                probs[r * k + c] = (z - log_denom).exp();
            }
            loss += log_denom - row[label];
        }
        loss /= n as f64;
        Ok(self.record(
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
            vec![1],
            vec![loss],
        ))
    }

    /// Euclidean projection of a vector of scores onto the probability simplex.
    pub fn sparsemax(&mut self, z: &Tensor) -> Result<Tensor> {
        if z.shape().len() != 1 {
            return Err(DasError::Dimension(format!(
                "sparsemax expects a vector, got {:?}",
                z.shape()
            )));
        }
        let out = sparsemax::sparsemax(z.data())?;
        let support: Vec<bool> = out.iter().map(|&v| v > 0.0).collect();
        Ok(self.record(
            Op::Sparsemax { support },
            &[z],
            z.shape().to_vec(),
            out,
        ))
    }

    pub fn softmax(&mut self, z: &Tensor) -> Result<Tensor> {
        if z.shape().len() != 1 {
            return Err(DasError::Dimension(format!(
                "softmax expects a vector, got {:?}",
                z.shape()
            )));
        }
        let out = sparsemax::softmax(z.data())?;
        Ok(self.record(
            Op::Softmax { probs: out.clone() },
            &[z],
            z.shape().to_vec(),
            out,
        ))
    }

    /// out = sum_i weights[i] * parts[i]; all parts share one shape.
    pub fn weighted_sum(&mut self, weights: &Tensor, parts: &[&Tensor]) -> Result<Tensor> {
        if weights.shape().len() != 1 || weights.len() != parts.len() {
            return Err(DasError::Dimension(format!(
                "{} weights for {} parts",
                weights.len(),
                parts.len()
            )));
        }
        if parts.is_empty() {
            return Err(DasError::Argument("weighted_sum of nothing".into()));
        }
        let shape = parts[0].shape().to_vec();
        for p in parts {
            if p.shape() != shape {
                return Err(DasError::Dimension(format!(
                    "weighted_sum parts disagree: {:?} vs {:?}",
                    shape,
                    p.shape()
                )));
            }
        }
        let w = weights.data();
        let mut out = vec![0.0f64; parts[0].len()];
        for (i, p) in parts.iter().enumerate() {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(p.data()) {
                *o += wi * v;
            }
        }
        let mut inputs: Vec<&Tensor> = Vec::with_capacity(parts.len() + 1);
        inputs.push(weights);
        inputs.extend_from_slice(parts);
        Ok(self.record(
            Op::WeightedSum {
                weights: w.to_vec(),
                parts: parts.iter().map(|p| p.data_arc()).collect(),
                part_len: parts[0].len(),
            },
            &inputs,
            shape,
            out,
        ))
    }

    /// Embed a [co,ci,h,w] kernel into spatial extents [hmax,wmax] so that
    /// convolving with the result equals convolving with the original.
    pub fn pad_kernel(&mut self, kernel: &Tensor, hmax: usize, wmax: usize) -> Result<Tensor> {
        let ks = kernel.shape();
        if ks.len() != 4 {
            return Err(DasError::Dimension(format!(
                "pad_kernel expects a 4-D kernel, got {ks:?}"
            )));
        }
        let (co, ci, h, w) = (ks[0], ks[1], ks[2], ks[3]);
        if h > hmax || w > wmax {
            return Err(DasError::Dimension(format!(
                "kernel {h}x{w} exceeds maxima {hmax}x{wmax}"
            )));
        }
        // align padded-origin offsets: floor(max/2) - floor(k/2)
        let r0 = hmax / 2 - h / 2;
        let c0 = wmax / 2 - w / 2;
        let mut out = vec![0.0f64; co * ci * hmax * wmax];
        let src = kernel.data();
        for oc in 0..co * ci {
            for u in 0..h {
                let s = &src[(oc * h + u) * w..(oc * h + u + 1) * w];
                let base = ((oc * hmax) + r0 + u) * wmax + c0;
                out[base..base + w].copy_from_slice(s);
            }
        }
        Ok(self.record(
            Op::PadKernel {
                co,
                ci,
                h,
                w,
                hmax,
                wmax,
                r0,
                c0,
            },
            &[kernel],
            vec![co, ci, hmax, wmax],
            out,
        ))
    }

    /// Scale each input-channel slice of a kernel by mask[ci].
    pub fn channel_scale(&mut self, kernel: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let ks = kernel.shape();
        if ks.len() < 2 {
            return Err(DasError::Dimension(format!(
                "channel_scale expects rank >= 2, got {ks:?}"
            )));
        }
        let (co, ci) = (ks[0], ks[1]);
        if mask.shape() != [ci] {
            return Err(DasError::Dimension(format!(
                "mask shape {:?} does not match {ci} input channels",
                mask.shape()
            )));
        }
        let inner: usize = ks[2..].iter().product();
        let src = kernel.data();
        let m = mask.data();
        let mut out = vec![0.0f64; src.len()];
        for o in 0..co {
            for c in 0..ci {
                let base = (o * ci + c) * inner;
                let mc = m[c];
                for t in 0..inner {
                    out[base + t] = src[base + t] * mc;
                }
            }
        }
        Ok(self.record(
            Op::ChannelScale {
                kernel: kernel.data_arc(),
                mask: mask.data_arc(),
                co,
                ci,
                inner,
            },
            &[kernel, mask],
            ks.to_vec(),
            out,
        ))
    }

    /// out = matrix * v with a fixed matrix [rows, cols]; `matrix` is always
    /// treated as a constant.
    pub fn linear_map(&mut self, matrix: &Tensor, v: &Tensor) -> Result<Tensor> {
        let ms = matrix.shape();
        if ms.len() != 2 || v.shape().len() != 1 || v.len() != ms[1] {
            return Err(DasError::Dimension(format!(
                "linear_map of {ms:?} against vector {:?}",
                v.shape()
            )));
        }
        let (rows, cols) = (ms[0], ms[1]);
        let m = matrix.data();
        let x = v.data();
        let mut out = vec![0.0f64; rows];
        for r in 0..rows {
            let row = &m[r * cols..(r + 1) * cols];
            out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        Ok(self.record(
            Op::LinearMap {
                matrix: matrix.data_arc(),
                rows,
                cols,
            },
            &[v],
            vec![rows],
            out,
        ))
    }

    /// Elementwise sqrt(re^2 + im^2 + 1e-12).
    pub fn amplitude(&mut self, re: &Tensor, im: &Tensor) -> Result<Tensor> {
        Self::binary_check(re, im, "amplitude")?;
        let out: Vec<f64> = re
            .data()
            .iter()
            .zip(im.data())
            .map(|(a, b)| (a * a + b * b + 1e-12).sqrt())
            .collect();
        let out_arc = Arc::new(out);
        let t = Tensor::from_parts(re.shape().to_vec(), Arc::clone(&out_arc), None);
        let track = self.recording && (self.needs(re) || self.needs(im));
        if !track {
            return Ok(t);
        }
        let ids = vec![self.input_id(re), self.input_id(im)];
        let id = self.push(Node {
            op: Op::Amplitude {
                re: re.data_arc(),
                im: im.data_arc(),
                out: out_arc,
            },
            inputs: ids,
            needs: true,
        });
        Ok(Tensor::from_parts(t.shape().to_vec(), t.data_arc(), Some(id)))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse replay from a scalar loss. Gradient buffers for interior nodes
    /// are dropped as soon as they are consumed; leaf gradients remain
    /// addressable through the returned table.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let lid = loss
            .node()
            .ok_or_else(|| DasError::State("loss is not on the tape".into()))?;
        if !loss.is_scalar() {
            return Err(DasError::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut slots: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        slots.resize_with(self.nodes.len(), || None);
        slots[lid.0] = Some(vec![1.0]);
        for id in (0..=lid.0).rev() {
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(up) = slots[id].take() else { continue };
            self.step_back(id, &up, &mut slots);
        }
        Ok(Gradients { slots })
    }

    fn accumulate(slots: &mut [Option<Vec<f64>>], id: NodeId, grad: Vec<f64>) {
        match &mut slots[id.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&grad) {
                    *a += b;
                }
            }
            s @ None => *s = Some(grad),
        }
    }

    fn step_back(&self, id: usize, up: &[f64], slots: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let needs = |i: usize| self.nodes[node.inputs[i].0].needs;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { dims, kernel, x } => {
                let kp = dims.cols_rows();
                let cols = dims.cols_cols();
                conv::with_scratch(|s| {
                    conv::permute_upstream(up, dims, &mut s.mat);
                    if needs(2) {
                        let mut db = vec![0.0f64; dims.cout];
                        for (co, slot) in db.iter_mut().enumerate() {
                            *slot = s.mat[co * cols..(co + 1) * cols].iter().sum();
                        }
                        Self::accumulate(slots, node.inputs[2], db);
                    }
                    if needs(1) {
                        conv::im2col(x, dims, &mut s.col);
                        let mut dk = vec![0.0f64; dims.cout * kp];
                        conv::gemm(
                            dims.cout,
                            cols,
                            kp,
                            &s.mat,
                            cols as isize,
                            1,
                            &s.col,
                            1,
                            cols as isize,
                            &mut dk,
                            false,
                        );
                        Self::accumulate(slots, node.inputs[1], dk);
                    }
                    if needs(0) {
                        s.dcol.clear();
                        s.dcol.resize(kp * cols, 0.0);
                        conv::gemm(
                            kp,
                            dims.cout,
                            cols,
                            kernel,
                            1,
                            kp as isize,
                            &s.mat,
                            cols as isize,
                            1,
                            &mut s.dcol,
                            false,
                        );
                        let mut dx = vec![0.0f64; dims.n * dims.cin * dims.h * dims.w];
                        conv::col2im(&s.dcol, dims, &mut dx);
                        Self::accumulate(slots, node.inputs[0], dx);
                    }
                });
            }
            Op::MaxPool { idx, in_len } => {
                if needs(0) {
                    let mut dx = vec![0.0f64; *in_len];
                    for (t, &p) in idx.iter().enumerate() {
                        dx[p as usize] += up[t];
                    }
                    Self::accumulate(slots, node.inputs[0], dx);
                }
            }
            Op::PoolSelect { idx, in_len } => {
                if needs(0) {
                    let mut dx = vec![0.0f64; *in_len];
                    for (t, &p) in idx.iter().enumerate() {
                        dx[p as usize] += up[t];
                    }
                    Self::accumulate(slots, node.inputs[0], dx);
                }
            }
            Op::Relu { x } => {
                if needs(0) {
                    let dx: Vec<f64> = x
                        .iter()
                        .zip(up)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    Self::accumulate(slots, node.inputs[0], dx);
                }
            }
            Op::Reshape => {
                if needs(0) {
                    Self::accumulate(slots, node.inputs[0], up.to_vec());
                }
            }
            Op::Add => {
                for i in 0..2 {
                    if needs(i) {
                        Self::accumulate(slots, node.inputs[i], up.to_vec());
                    }
                }
            }
            Op::Sub => {
                if needs(0) {
                    Self::accumulate(slots, node.inputs[0], up.to_vec());
                }
                if needs(1) {
                    Self::accumulate(slots, node.inputs[1], up.iter().map(|g| -g).collect());
                }
            }
            Op::Mul { a, b } => {
                if needs(0) {
                    let g: Vec<f64> = b.iter().zip(up).map(|(&v, &g)| v * g).collect();
                    Self::accumulate(slots, node.inputs[0], g);
                }
                if needs(1) {
                    let g: Vec<f64> = a.iter().zip(up).map(|(&v, &g)| v * g).collect();
                    Self::accumulate(slots, node.inputs[1], g);
                }
            }
            Op::Scale { c } => {
                if needs(0) {
                    Self::accumulate(slots, node.inputs[0], up.iter().map(|g| g * c).collect());
                }
            }
            Op::Sum { in_len } => {
                if needs(0) {
                    Self::accumulate(slots, node.inputs[0], vec![up[0]; *in_len]);
                }
            }
            Op::L1Norm { x } => {
                if needs(0) {
                    let g: Vec<f64> = x
                        .iter()
                        .map(|&v| {
                            if v > 0.0 {
                                up[0]
                            } else if v < 0.0 {
                                -up[0]
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    Self::accumulate(slots, node.inputs[0], g);
                }
            }
            Op::CrossEntropy { probs, labels } => {
                if needs(0) {
                    let n = labels.len();
                    let k = probs.len() / n;
                    let scale = up[0] / n as f64;
                    let mut g = vec![0.0f64; probs.len()];
                    for r in 0..n {
                        for c in 0..k {
                            let ind = if labels[r] == c { 1.0 } else { 0.0 };
                            g[r * k + c] = (probs[r * k + c] - ind) * scale;
                        }
                    }
                    Self::accumulate(slots, node.inputs[0], g);
                }
            }
            Op::Sparsemax { support } => {
                if needs(0) {
                    let members = support.iter().filter(|&&s| s).count();
                    let mean = if members > 0 {
                        support
                            .iter()
                            .zip(up)
                            .filter(|(&s, _)| s)
                            .map(|(_, &g)| g)
                            .sum::<f64>()
                            / members as f64
                    } else {
                        0.0
                    };
                    let g: Vec<f64> = support
                        .iter()
                        .zip(up)
                        .map(|(&s, &gv)| if s { gv - mean } else { 0.0 })
                        .collect();
                    Self::accumulate(slots, node.inputs[0], g);
                }
            }
            Op::Softmax { probs } => {
                if needs(0) {
                    let dot: f64 = probs.iter().zip(up).map(|(&p, &g)| p * g).sum();
                    let g: Vec<f64> = probs.iter().zip(up).map(|(&p, &gv)| p * (gv - dot)).collect();
                    Self::accumulate(slots, node.inputs[0], g);
                }
            }
            Op::WeightedSum {
                weights,
                parts,
                part_len,
            } => {
                if needs(0) {
                    let mut dw = vec![0.0f64; weights.len()];
                    for (i, p) in parts.iter().enumerate() {
                        dw[i] = p.iter().zip(up).map(|(&v, &g)| v * g).sum();
                    }
                    Self::accumulate(slots, node.inputs[0], dw);
                }
                for (i, &wi) in weights.iter().enumerate() {
                    if needs(i + 1) {
                        let g: Vec<f64> = up.iter().map(|&gv| wi * gv).collect();
                        let _ = part_len;
                        Self::accumulate(slots, node.inputs[i + 1], g);
                    }
                }
            }
            Op::PadKernel {
                co,
                ci,
                h,
                w,
                hmax,
                wmax,
                r0,
                c0,
            } => {
                if needs(0) {
                    let mut g = vec![0.0f64; co * ci * h * w];
                    for oc in 0..co * ci {
                        for u in 0..*h {
                            let base = ((oc * hmax) + r0 + u) * wmax + c0;
                            let dst = &mut g[(oc * h + u) * w..(oc * h + u + 1) * w];
                            dst.copy_from_slice(&up[base..base + w]);
                        }
                    }
                    Self::accumulate(slots, node.inputs[0], g);
                }
            }
            Op::ChannelScale {
                kernel,
                mask,
                co,
                ci,
                inner,
            } => {
                if needs(0) {
                    let mut g = vec![0.0f64; kernel.len()];
                    for o in 0..*co {
                        for c in 0..*ci {
                            let base = (o * ci + c) * inner;
                            let mc = mask[c];
                            for t in 0..*inner {
                                g[base + t] = up[base + t] * mc;
                            }
                        }
                    }
                    Self::accumulate(slots, node.inputs[0], g);
                }
                if needs(1) {
                    let mut g = vec![0.0f64; *ci];
                    for o in 0..*co {
                        for c in 0..*ci {
                            let base = (o * ci + c) * inner;
                            let mut s = 0.0;
                            for t in 0..*inner {
                                s += up[base + t] * kernel[base + t];
                            }
                            g[c] += s;
                        }
                    }
                    Self::accumulate(slots, node.inputs[1], g);
                }
            }
            Op::LinearMap { matrix, rows, cols } => {
                if needs(0) {
                    let mut g = vec![0.0f64; *cols];
                    for r in 0..*rows {
                        let row = &matrix[r * cols..(r + 1) * cols];
                        let gr = up[r];
                        for (gc, &m) in g.iter_mut().zip(row) {
                            *gc += m * gr;
                        }
                    }
                    Self::accumulate(slots, node.inputs[0], g);
                }
            }
            Op::Amplitude { re, im, out } => {
                if needs(0) {
                    let g: Vec<f64> = re
                        .iter()
                        .zip(out.iter())
                        .zip(up)
                        .map(|((&r, &o), &gv)| gv * r / o)
                        .collect();
                    Self::accumulate(slots, node.inputs[0], g);
                }
                if needs(1) {
                    let g: Vec<f64> = im
                        .iter()
                        .zip(out.iter())
                        .zip(up)
                        .map(|((&i, &o), &gv)| gv * i / o)
                        .collect();
                    Self::accumulate(slots, node.inputs[1], g);
                }
            }
        }
    }
}
