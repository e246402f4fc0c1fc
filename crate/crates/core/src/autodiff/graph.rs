use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Relu(usize),
    Upsample2(usize),
    Add(usize, usize),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Reshape(usize),
    SoftmaxChannels(usize),
    Sigmoid(usize),
    Mean(usize),
    SpatialMean(usize),
    SliceChannels {
        x: usize,
        start: usize,
    },
    Scale(usize, f64),
    SoftmaxCe {
        logits: usize,
        probs: Vec<f64>,
        labels: Vec<u8>,
        weights: Vec<f64>,
    },
    BceLogits {
        logits: usize,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    SquaredError {
        pred: usize,
        target: Vec<f64>,
        weights: Vec<f64>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of operations recorded during one forward pass.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every node that needed one.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, zeros if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(msg: String) -> Error {
    Error::Validation(msg)
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// Constant input; no gradient is kept for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0].as_f64()
    }

    /// 2D convolution with zero padding. `x: [N, C, H, W]`,
    /// `w: [O, C, k, k]`, `b: [O]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || stride == 0 {
            return Err(shape_err(format!(
                "conv2d: input {xs:?}, kernel {ws:?}, stride {stride}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err(format!(
                    "conv2d: bias {:?} for {} outputs",
                    self.shape(b),
                    ws[0]
                )));
            }
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err(format!(
                "conv2d: kernel {k} larger than padded input {h}x{wd}"
            )));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            k,
            stride,
            pad,
            oh,
            ow,
        };
        let ckk = c * k * k;
        let hw = oh * ow;
        let mut cols = vec![T::zero(); n * ckk * hw];
        let mut out = vec![T::zero(); n * o * hw];
        {
            let xv = &self.nodes[x.0].value.data;
            let wv = &self.nodes[w.0].value.data;
            for s in 0..n {
                let col = &mut cols[s * ckk * hw..(s + 1) * ckk * hw];
                im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], &geom, col);
                let dst = &mut out[s * o * hw..(s + 1) * o * hw];
                T::gemm(o, ckk, hw, wv, false, col, false, dst, false);
                if let Some(b) = b {
                    let bv = &self.nodes[b.0].value.data;
                    for (oc, row) in dst.chunks_mut(hw).enumerate() {
                        for v in row {
                            *v = *v + bv[oc];
                        }
                    }
                }
            }
        }
        let needs = self.needs(x.0) || self.needs(w.0) || b.is_some_and(|b| self.needs(b.0));
        let value = Tensor {
            shape: vec![n, o, oh, ow],
            data: out,
        };
        Ok(self.push(
            value,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                geom,
                cols,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let value = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| v.max(T::zero())).collect(),
        };
        let needs = self.needs(x.0);
        self.push(value, Op::Relu(x.0), needs)
    }

    /// Which inputs of every recorded ReLU are positive, in tape order. Two
    /// evaluations with the same pattern lie on the same linear piece, so a
    /// finite difference between them does not straddle a kink.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(&self.nodes[x].value.data),
                _ => None,
            })
            .flat_map(|data| data.iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// Nearest-neighbour ×2 upsampling of `[N, C, H, W]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!(
                "upsample2: rank-4 input expected, got {s:?}"
            )));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let src = &self.nodes[x.0].value.data;
        let mut out = vec![T::zero(); nc * 4 * h * w];
        for plane in 0..nc {
            let (si, di) = (plane * h * w, plane * 4 * h * w);
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[di + y * 2 * w + xx] = src[si + (y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor {
            shape: vec![s[0], s[1], 2 * h, 2 * w],
            data: out,
        };
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::Upsample2(x.0), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().zip(&bv.data).map(|(&x, &y)| x + y).collect(),
        };
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::Add(a.0, b.0), needs))
    }

    /// `[N, K] × [K, M] → [N, M]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul: {sa:?} × {sb:?}")));
        }
        let mut out = vec![T::zero(); sa[0] * sb[1]];
        T::gemm(
            sa[0],
            sa[1],
            sb[1],
            &self.nodes[a.0].value.data,
            false,
            &self.nodes[b.0].value.data,
            false,
            &mut out,
            false,
        );
        let value = Tensor {
            shape: vec![sa[0], sb[1]],
            data: out,
        };
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::MatMul(a.0, b.0), needs))
    }

    /// Adds `b: [M]` to every row of `x: [N, M]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(shape_err(format!("add_bias: {sx:?} + {sb:?}")));
        }
        let bv = &self.nodes[b.0].value.data;
        let mut data = self.nodes[x.0].value.data.clone();
        for row in data.chunks_mut(sx[1]) {
            for (v, &bb) in row.iter_mut().zip(bv) {
                *v = *v + bb;
            }
        }
        let needs = self.needs(x.0) || self.needs(b.0);
        Ok(self.push(Tensor { shape: sx, data }, Op::AddBias(x.0, b.0), needs))
    }

    /// `[N, ...] → [N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let n = src.shape.first().copied().unwrap_or(1);
        let rest = src.data.len().checked_div(n).unwrap_or(0);
        let value = Tensor {
            shape: vec![n, rest],
            data: src.data.clone(),
        };
        let needs = self.needs(x.0);
        self.push(value, Op::Reshape(x.0), needs)
    }

    /// Softmax over the channel axis of `[N, C, H, W]`.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!(
                "softmax_channels: rank-4 input expected, got {s:?}"
            )));
        }
        let probs = softmax_probs(&self.nodes[x.0].value.data, s[0], s[1], s[2] * s[3]);
        let value = Tensor {
            shape: s,
            data: probs.into_iter().map(T::cast_from).collect(),
        };
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::SoftmaxChannels(x.0), needs))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let value = Tensor {
            shape: src.shape.clone(),
            data: src
                .data
                .iter()
                .map(|&v| T::cast_from(sigmoid(v.as_f64())))
                .collect(),
        };
        let needs = self.needs(x.0);
        self.push(value, Op::Sigmoid(x.0), needs)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value.data;
        let m = src.iter().map(|v| v.as_f64()).sum::<f64>() / src.len().max(1) as f64;
        let needs = self.needs(x.0);
        self.push(
            Tensor {
                shape: vec![1],
                data: vec![T::cast_from(m)],
            },
            Op::Mean(x.0),
            needs,
        )
    }

    /// `[N, C, H, W] → [N, C]`, averaging over space.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!(
                "spatial_mean: rank-4 input expected, got {s:?}"
            )));
        }
        let hw = s[2] * s[3];
        let data = self.nodes[x.0]
            .value
            .data
            .chunks(hw)
            .map(|plane| T::cast_from(plane.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64))
            .collect();
        let needs = self.needs(x.0);
        Ok(self.push(
            Tensor {
                shape: vec![s[0], s[1]],
                data,
            },
            Op::SpatialMean(x.0),
            needs,
        ))
    }

    /// Channels `start..end` of `[N, C, H, W]`.
    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || start >= end || end > s[1] {
            return Err(shape_err(format!("slice_channels {start}..{end} of {s:?}")));
        }
        let hw = s[2] * s[3];
        let src = &self.nodes[x.0].value.data;
        let mut data = Vec::with_capacity(s[0] * (end - start) * hw);
        for n in 0..s[0] {
            let base = n * s[1] * hw;
            data.extend_from_slice(&src[base + start * hw..base + end * hw]);
        }
        let needs = self.needs(x.0);
        Ok(self.push(
            Tensor {
                shape: vec![s[0], end - start, s[2], s[3]],
                data,
            },
            Op::SliceChannels { x: x.0, start },
            needs,
        ))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let src = &self.nodes[x.0].value;
        let f = T::cast_from(factor);
        let value = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| v * f).collect(),
        };
        let needs = self.needs(x.0);
        self.push(value, Op::Scale(x.0, factor), needs)
    }

    /// `Σ_n weights[n] · Σ_p −ln softmax(logits[n, :, p])[labels[n, p]]`
    /// for `logits: [N, C, H, W]` and 0-based labels laid out `[N, H, W]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[u8],
        weights: &[f64],
    ) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 4 {
            return Err(shape_err(format!(
                "softmax_cross_entropy: rank-4 logits expected, got {s:?}"
            )));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        if labels.len() != n * hw || weights.len() != n {
            return Err(shape_err(format!(
                "softmax_cross_entropy: {} labels and {} weights for logits {s:?}",
                labels.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(shape_err(format!("label {bad} outside {c} classes")));
        }
        let probs = softmax_probs(&self.nodes[logits.0].value.data, n, c, hw);
        let mut total = 0.0;
        for s in 0..n {
            let mut sample = 0.0;
            for p in 0..hw {
                let l = labels[s * hw + p] as usize;
                sample -= probs[(s * c + l) * hw + p].max(f64::MIN_POSITIVE).ln();
            }
            total += weights[s] * sample;
        }
        let needs = self.needs(logits.0);
        Ok(self.push(
            Tensor {
                shape: vec![1],
                data: vec![T::cast_from(total)],
            },
            Op::SoftmaxCe {
                logits: logits.0,
                probs,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            needs,
        ))
    }

    /// `Σ_n weights[n] · BCE(σ(logits[n]), targets[n])`, computed stably from
    /// logits. `logits` holds one value per sample.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: &[f64],
        weights: &[f64],
    ) -> Result<Var> {
        let z = &self.nodes[logits.0].value.data;
        if z.len() != targets.len() || z.len() != weights.len() {
            return Err(shape_err(format!(
                "bce_with_logits: {} logits, {} targets, {} weights",
                z.len(),
                targets.len(),
                weights.len()
            )));
        }
        let total: f64 = z
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &t), &w)| {
                let z = z.as_f64();
                w * (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            })
            .sum();
        let needs = self.needs(logits.0);
        Ok(self.push(
            Tensor {
                shape: vec![1],
                data: vec![T::cast_from(total)],
            },
            Op::BceLogits {
                logits: logits.0,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            needs,
        ))
    }

    /// `Σ_n weights[n] · ‖pred[n] − target[n]‖²` for `pred: [N, D]`.
    pub fn squared_error(&mut self, pred: Var, target: &[f64], weights: &[f64]) -> Result<Var> {
        let s = self.shape(pred).to_vec();
        if s.len() != 2 || target.len() != s[0] * s[1] || weights.len() != s[0] {
            return Err(shape_err(format!(
                "squared_error: prediction {s:?}, {} targets, {} weights",
                target.len(),
                weights.len()
            )));
        }
        let p = &self.nodes[pred.0].value.data;
        let d = s[1];
        let total: f64 = (0..s[0])
            .map(|n| {
                weights[n]
                    * (0..d)
                        .map(|j| (p[n * d + j].as_f64() - target[n * d + j]).powi(2))
                        .sum::<f64>()
            })
            .sum();
        let needs = self.needs(pred.0);
        Ok(self.push(
            Tensor {
                shape: vec![1],
                data: vec![T::cast_from(total)],
            },
            Op::SquaredError {
                pred: pred.0,
                target: target.to_vec(),
                weights: weights.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse sweep from a one-element node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let ConvGeom {
                    n,
                    c,
                    h,
                    w: wd,
                    o,
                    k,
                    oh,
                    ow,
                    ..
                } = *geom;
                let ckk = c * k * k;
                let hw = oh * ow;
                if let Some(b) = b {
                    if let Some(gb) = slot(grads, nodes, *b) {
                        for s in 0..n {
                            for oc in 0..o {
                                let row = &g[(s * o + oc) * hw..(s * o + oc + 1) * hw];
                                let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
                                gb[oc] = gb[oc] + T::cast_from(sum);
                            }
                        }
                    }
                }
                if let Some(gw) = slot(grads, nodes, *w) {
                    for s in 0..n {
                        let go = &g[s * o * hw..(s + 1) * o * hw];
                        let col = &cols[s * ckk * hw..(s + 1) * ckk * hw];
                        T::gemm(o, hw, ckk, go, false, col, true, gw, true);
                    }
                }
                if nodes[*x].needs_grad {
                    let wv = &nodes[*w].value.data;
                    let mut dcol = vec![T::zero(); ckk * hw];
                    let gx = slot(grads, nodes, *x).expect("needs grad");
                    for s in 0..n {
                        let go = &g[s * o * hw..(s + 1) * o * hw];
                        T::gemm(ckk, o, hw, wv, true, go, false, &mut dcol, false);
                        col2im(&dcol, geom, &mut gx[s * c * h * wd..(s + 1) * c * h * wd]);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = &nodes[*x].value.data;
                if let Some(gx) = slot(grads, nodes, *x) {
                    for ((d, &gv), &v) in gx.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::Upsample2(x) => {
                let s = &nodes[*x].value.shape;
                let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
                if let Some(gx) = slot(grads, nodes, *x) {
                    for plane in 0..nc {
                        let (si, di) = (plane * h * w, plane * 4 * h * w);
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                let t = si + (y / 2) * w + xx / 2;
                                gx[t] = gx[t] + g[di + y * 2 * w + xx];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for idx in [*a, *b] {
                    if let Some(gx) = slot(grads, nodes, idx) {
                        for (d, &gv) in gx.iter_mut().zip(g) {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (&nodes[*a].value.shape, &nodes[*b].value.shape);
                let (m, kk, nn) = (sa[0], sa[1], sb[1]);
                if nodes[*a].needs_grad {
                    let bv = &nodes[*b].value.data;
                    let ga = slot(grads, nodes, *a).expect("needs grad");
                    T::gemm(m, nn, kk, g, false, bv, true, ga, true);
                }
                if nodes[*b].needs_grad {
                    let av = &nodes[*a].value.data;
                    let gb = slot(grads, nodes, *b).expect("needs grad");
                    T::gemm(kk, m, nn, av, true, g, false, gb, true);
                }
            }
            Op::AddBias(x, b) => {
                let m = nodes[*b].value.len();
                if let Some(gx) = slot(grads, nodes, *x) {
                    for (d, &gv) in gx.iter_mut().zip(g) {
                        *d = *d + gv;
                    }
                }
                if let Some(gb) = slot(grads, nodes, *b) {
                    let mut acc = vec![0.0; m];
                    for row in g.chunks(m) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v.as_f64();
                        }
                    }
                    for (d, a) in gb.iter_mut().zip(acc) {
                        *d = *d + T::cast_from(a);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(grads, nodes, *x) {
                    for (d, &gv) in gx.iter_mut().zip(g) {
                        *d = *d + gv;
                    }
                }
            }
            Op::SoftmaxChannels(x) => {
                let s = &node.value.shape;
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let y = &node.value.data;
                if let Some(gx) = slot(grads, nodes, *x) {
                    for sn in 0..n {
                        for p in 0..hw {
                            let at = |ch: usize| (sn * c + ch) * hw + p;
                            let dot: f64 = (0..c)
                                .map(|ch| g[at(ch)].as_f64() * y[at(ch)].as_f64())
                                .sum();
                            for ch in 0..c {
                                let yi = y[at(ch)].as_f64();
                                gx[at(ch)] =
                                    gx[at(ch)] + T::cast_from(yi * (g[at(ch)].as_f64() - dot));
                            }
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value.data;
                if let Some(gx) = slot(grads, nodes, *x) {
                    for ((d, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *d = *d + gv * yv * (T::one() - yv);
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = slot(grads, nodes, *x) {
                    let share = T::cast_from(g[0].as_f64() / gx.len().max(1) as f64);
                    for d in gx.iter_mut() {
                        *d = *d + share;
                    }
                }
            }
            Op::SpatialMean(x) => {
                let s = &nodes[*x].value.shape;
                let hw = s[2] * s[3];
                if let Some(gx) = slot(grads, nodes, *x) {
                    for (plane, &gv) in gx.chunks_mut(hw).zip(g) {
                        let share = T::cast_from(gv.as_f64() / hw as f64);
                        for d in plane {
                            *d = *d + share;
                        }
                    }
                }
            }
            Op::SliceChannels { x, start } => {
                let s = &nodes[*x].value.shape;
                let (c, hw) = (s[1], s[2] * s[3]);
                let width = node.value.shape[1];
                if let Some(gx) = slot(grads, nodes, *x) {
                    for n in 0..s[0] {
                        let dst = &mut gx[(n * c + start) * hw..(n * c + start + width) * hw];
                        let src = &g[n * width * hw..(n + 1) * width * hw];
                        for (d, &gv) in dst.iter_mut().zip(src) {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::Scale(x, factor) => {
                let f = T::cast_from(*factor);
                if let Some(gx) = slot(grads, nodes, *x) {
                    for (d, &gv) in gx.iter_mut().zip(g) {
                        *d = *d + gv * f;
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
                weights,
            } => {
                let s = &nodes[*logits].value.shape;
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let g0 = g[0].as_f64();
                if let Some(gx) = slot(grads, nodes, *logits) {
                    for sn in 0..n {
                        let scale = g0 * weights[sn];
                        for ch in 0..c {
                            for p in 0..hw {
                                let i = (sn * c + ch) * hw + p;
                                let target = (labels[sn * hw + p] as usize == ch) as u8 as f64;
                                gx[i] = gx[i] + T::cast_from(scale * (probs[i] - target));
                            }
                        }
                    }
                }
            }
            Op::BceLogits {
                logits,
                targets,
                weights,
            } => {
                let z = &nodes[*logits].value.data;
                let g0 = g[0].as_f64();
                if let Some(gx) = slot(grads, nodes, *logits) {
                    for i in 0..gx.len() {
                        let d = g0 * weights[i] * (sigmoid(z[i].as_f64()) - targets[i]);
                        gx[i] = gx[i] + T::cast_from(d);
                    }
                }
            }
            Op::SquaredError {
                pred,
                target,
                weights,
            } => {
                let p = &nodes[*pred].value.data;
                let d = nodes[*pred].value.shape[1];
                let g0 = g[0].as_f64();
                if let Some(gx) = slot(grads, nodes, *pred) {
                    for i in 0..gx.len() {
                        let v = 2.0 * g0 * weights[i / d] * (p[i].as_f64() - target[i]);
                        gx[i] = gx[i] + T::cast_from(v);
                    }
                }
            }
        }
    }
}

/// Gradient buffer of node `idx`, created on first use; `None` for nodes that
/// take no gradient.
fn slot<'a, T: Scalar>(
    grads: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    idx: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[idx].needs_grad {
        return None;
    }
    let len = nodes[idx].value.len();
    Some(grads[idx].get_or_insert_with(|| vec![T::zero(); len]))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Channel softmax of `[N, C, HW]` data, evaluated in `f64`.
fn softmax_probs<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for s in 0..n {
        for p in 0..hw {
            let at = |ch: usize| (s * c + ch) * hw + p;
            let max = (0..c)
                .map(|ch| x[at(ch)].as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for ch in 0..c {
                let e = (x[at(ch)].as_f64() - max).exp();
                out[at(ch)] = e;
                sum += e;
            }
            for ch in 0..c {
                out[at(ch)] /= sum;
            }
        }
    }
    out
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let hw = g.oh * g.ow;
    for ch in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((ch * g.k + ki) * g.k + kj) * hw;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        cols[row + oy * g.ow + ox] =
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                x[(ch * g.h + iy as usize) * g.w + ix as usize]
                            } else {
                                T::zero()
                            };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let hw = g.oh * g.ow;
    for ch in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((ch * g.k + ki) * g.k + kj) * hw;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        let t = (ch * g.h + iy as usize) * g.w + ix as usize;
                        dx[t] = dx[t] + cols[row + oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = rng_from(seed);
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Central-difference check of `d build(...)/d params`, with `build`
    /// reducing to a scalar. Returns the worst relative error
    /// `|a − n| / max(|a|, |n|, 1e-6)`.
    fn check(params: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
        let eval = |ps: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
            let out = build(&mut g, &vars);
            (g.scalar(out), g, vars, out)
        };
        let (_, g, vars, out) = eval(&params);
        let grads = g.backward(out).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for (pi, p) in params.iter().enumerate() {
            let analytic = grads
                .get(vars[pi])
                .map(|s| s.to_vec())
                .unwrap_or(vec![0.0; p.len()]);
            for j in 0..p.len() {
                let mut plus = params.clone();
                plus[pi].data[j] += h;
                let mut minus = params.clone();
                minus[pi].data[j] -= h;
                let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let a = analytic[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    /// Random projection to a scalar so every output element matters.
    fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
        let flat = g.flatten(v);
        let d = g.shape(flat)[1];
        let w = g.input(random(&[d, 1], seed));
        let y = g.matmul(flat, w).unwrap();
        g.mean(y)
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.input(random(&[2, 3, 5, 4], 1));
        let mut w = Tensor::zeros(vec![3, 3, 1, 1]);
        for c in 0..3 {
            w.data[c * 3 + c] = 1.0;
        }
        let w = g.param(w);
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn relu_blocks_negative_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        let y = g.relu(x);
        let s = g.mean(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.5]);
        let z = g.relu(s);
        g.relu(z);
        assert_eq!(g.relu_pattern(), vec![false, true, true, true]);
    }

    #[test]
    fn conv_gradients() {
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)] {
            let err = check(
                vec![
                    random(&[2, 2, 5, 6], 1),
                    random(&[3, 2, k, k], 2),
                    random(&[3], 3),
                ],
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
                    let y = g.spatial_mean(y).unwrap();
                    project(g, y, 9)
                },
            );
            assert!(err < 1e-3, "stride {stride} pad {pad}: {err}");
        }
    }

    #[test]
    fn elementwise_gradients() {
        let err = check(
            vec![random(&[2, 3, 2, 2], 4), random(&[2, 3, 2, 2], 5)],
            |g, v| {
                let a = g.add(v[0], v[1]).unwrap();
                let r = g.relu(a);
                let s = g.sigmoid(r);
                let u = g.upsample2(s).unwrap();
                let sl = g.slice_channels(u, 1, 3).unwrap();
                let sc = g.scale(sl, -1.7);
                let sm = g.softmax_channels(sc).unwrap();
                let sp = g.spatial_mean(sm).unwrap();
                project(g, sp, 11)
            },
        );
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn dense_gradients() {
        let err = check(
            vec![random(&[3, 4], 6), random(&[4, 5], 7), random(&[5], 8)],
            |g, v| {
                let m = g.matmul(v[0], v[1]).unwrap();
                let b = g.add_bias(m, v[2]).unwrap();
                let f = g.flatten(b);
                project(g, f, 12)
            },
        );
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn loss_gradients() {
        let labels: Vec<u8> = (0..2 * 9).map(|i| (i * 7 % 5) as u8).collect();
        let err = check(vec![random(&[2, 5, 3, 3], 13)], |g, v| {
            g.softmax_cross_entropy(v[0], &labels, &[0.3, 1.2]).unwrap()
        });
        assert!(err < 1e-3, "{err}");
        let err = check(vec![random(&[4, 1], 14)], |g, v| {
            g.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 0.0], &[0.5, 1.0, 2.0, 0.1])
                .unwrap()
        });
        assert!(err < 1e-3, "{err}");
        let target: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let err = check(vec![random(&[2, 3], 15)], |g, v| {
            g.squared_error(v[0], &target, &[0.7, 1.3]).unwrap()
        });
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros(vec![2, 3]));
        let b = g.input(Tensor::zeros(vec![2, 2]));
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
        let x = g.input(Tensor::zeros(vec![1, 2, 4, 4]));
        let w = g.input(Tensor::zeros(vec![3, 3, 3, 3]));
        assert!(g.conv2d(x, w, None, 1, 1).is_err());
        assert!(g.softmax_cross_entropy(x, &[9; 16], &[1.0]).is_err());
        assert!(g.backward(a).is_err());
    }
}
