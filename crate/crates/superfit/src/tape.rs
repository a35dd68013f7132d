//! Reverse-mode automatic differentiation on a flat operation tape.
//!
//! Every forward call records one node (result tensor plus the metadata its
//! adjoint needs). `backward` walks the tape once in reverse from a scalar
//! loss and accumulates gradients into every node that requires them, so a
//! single pass yields gradients with respect to parameters and inputs alike.
//! A tape differentiates one forward pass: calling `backward` twice is
//! rejected rather than silently re-accumulating.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only valid for the tape that produced it.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct VarId(usize);

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

enum Op<T> {
    Leaf,
    /// `[m,k] @ [k,n] -> [m,n]`
    Matmul { a: VarId, b: VarId },
    /// Row-broadcast bias add: `[m,n] + [n] -> [m,n]`
    AddBiasRow { x: VarId, bias: VarId },
    Add { a: VarId, b: VarId },
    Sub { a: VarId, b: VarId },
    Scale { x: VarId, factor: T },
    /// Cross-correlation `[b,c,h,w] * [f,c,kh,kw] (+ bias[f]) -> [b,f,h',w']`
    Conv2d {
        x: VarId,
        w: VarId,
        bias: VarId,
        stride: usize,
        padding: usize,
    },
    /// Saved `argmax` holds, per output cell, the flat index into the input
    /// data that won the window (ties resolved to the lowest flat index).
    MaxPool2d { x: VarId, argmax: Vec<usize> },
    /// `x_hat` and per-channel `inv_std` are saved from the forward pass.
    /// In training mode the adjoint differentiates through the batch
    /// statistics; in eval mode the statistics are constants.
    BatchNorm {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    LeakyRelu { x: VarId, slope: T },
    /// Rows of `[b,k] -> [b]`; saved softmax doubles as the adjoint factor.
    LogSumExpRows { x: VarId, softmax: Vec<T> },
    /// `out[i] = x[i, index[i]]`
    GatherRows { x: VarId, index: Vec<usize> },
    /// `out[i] = sum_k x[i,k] * weights[i,k]`, weights held constant.
    RowDot { x: VarId, weights: Vec<T> },
    /// `out[i] = x[i, rival[i]] - x[i, target[i]]` where `rival` is the
    /// strongest non-target column chosen at forward time.
    RowMargin {
        x: VarId,
        target: Vec<usize>,
        rival: Vec<usize>,
    },
    SumAll { x: VarId },
    Reshape { x: VarId },
    /// Zero-pad the two trailing spatial axes to `[out_h, out_w]`.
    PadHw {
        x: VarId,
        off_h: usize,
        off_w: usize,
    },
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` loss with respect to `id`, if that
    /// node required gradients and was reached.
    pub fn grad(&self, id: VarId) -> Option<Tensor<T>> {
        let g = self.grads[id.0].as_ref()?;
        Some(
            Tensor::new(self.nodes[id.0].value.shape().to_vec(), g.clone())
                .expect("grad length matches value"),
        )
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> VarId {
        self.push(value, requires_grad, Op::Leaf)
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> VarId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        VarId(self.nodes.len() - 1)
    }

    fn requires(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn shape(&self, id: VarId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    // ── forward ops ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul expects [m,k] @ [k,n], got {:?} @ {:?}",
                sa, sb
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let rq = self.requires(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rq, Op::Matmul { a, b }))
    }

    pub fn add_bias_row(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "add_bias_row expects [m,n] + [n], got {:?} + {:?}",
                sx, sb
            )));
        }
        let (m, n) = (sx[0], sx[1]);
        let xv = self.nodes[x.0].value.data();
        let bv = self.nodes[bias.0].value.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = xv[i * n + j] + bv[j];
            }
        }
        let rq = self.requires(&[x, bias]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rq, Op::AddBiasRow { x, bias }))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.elementwise_pair(a, b, "add")
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.elementwise_pair(a, b, "sub")
    }

    fn elementwise_pair(&mut self, a: VarId, b: VarId, which: &str) -> Result<VarId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{} expects matching shapes, got {:?} and {:?}",
                which,
                self.shape(a),
                self.shape(b)
            )));
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let out: Vec<T> = if which == "add" {
            av.iter().zip(bv).map(|(&x, &y)| x + y).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| x - y).collect()
        };
        let shape = self.shape(a).to_vec();
        let rq = self.requires(&[a, b]);
        let op = if which == "add" {
            Op::Add { a, b }
        } else {
            Op::Sub { a, b }
        };
        Ok(self.push(Tensor::new(shape, out)?, rq, op))
    }

    pub fn scale(&mut self, x: VarId, factor: T) -> Result<VarId> {
        let out = self.nodes[x.0].value.map(|v| v * factor);
        let rq = self.requires(&[x]);
        Ok(self.push(out, rq, Op::Scale { x, factor }))
    }

    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        bias: VarId,
        stride: usize,
        padding: usize,
    ) -> Result<VarId> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(bias).to_vec(),
        );
        if sx.len() != 4 || sw.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d expects x[b,c,h,w] and w[f,c,kh,kw], got {:?} and {:?}",
                sx, sw
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        let (b, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (f, cw, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if c != cw {
            return Err(Error::Dimension(format!(
                "conv2d channel mismatch: input has {}, kernel expects {}",
                c, cw
            )));
        }
        if sb != [f] {
            return Err(Error::Dimension(format!(
                "conv2d bias must be [{}], got {:?}",
                f, sb
            )));
        }
        let out_h = conv_out_dim(h, kh, stride, padding, "height")?;
        let out_w = conv_out_dim(wd, kw, stride, padding, "width")?;

        let xv = self.nodes[x.0].value.data();
        let wv = self.nodes[w.0].value.data();
        let bv = self.nodes[bias.0].value.data();
        let mut out = vec![T::zero(); b * f * out_h * out_w];
        for bi in 0..b {
            for fi in 0..f {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = bv[fi];
                        for ci in 0..c {
                            for u in 0..kh {
                                let iy = oy * stride + u;
                                if iy < padding || iy - padding >= h {
                                    continue;
                                }
                                let iy = iy - padding;
                                for v in 0..kw {
                                    let ix = ox * stride + v;
                                    if ix < padding || ix - padding >= wd {
                                        continue;
                                    }
                                    let ix = ix - padding;
                                    acc += xv[((bi * c + ci) * h + iy) * wd + ix]
                                        * wv[((fi * c + ci) * kh + u) * kw + v];
                                }
                            }
                        }
                        out[((bi * f + fi) * out_h + oy) * out_w + ox] = acc;
                    }
                }
            }
        }
        let rq = self.requires(&[x, w, bias]);
        Ok(self.push(
            Tensor::new(vec![b, f, out_h, out_w], out)?,
            rq,
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                padding,
            },
        ))
    }

    pub fn max_pool2d(&mut self, x: VarId, window: usize, stride: usize) -> Result<VarId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(Error::Dimension(format!(
                "max_pool2d expects x[b,c,h,w], got {:?}",
                sx
            )));
        }
        if window == 0 || stride == 0 {
            return Err(Error::Config("max_pool2d window and stride must be >= 1".into()));
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if h < window || w < window {
            return Err(Error::Dimension(format!(
                "max_pool2d window {} larger than input {}x{}",
                window, h, w
            )));
        }
        if (h - window) % stride != 0 || (w - window) % stride != 0 {
            return Err(Error::Dimension(format!(
                "max_pool2d geometry not tileable: input {}x{}, window {}, stride {}",
                h, w, window, stride
            )));
        }
        let out_h = (h - window) / stride + 1;
        let out_w = (w - window) / stride + 1;
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); b * c * out_h * out_w];
        let mut argmax = vec![0usize; out.len()];
        for bi in 0..b {
            for ci in 0..c {
                let plane = (bi * c + ci) * h * w;
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut best_idx = plane + (oy * stride) * w + ox * stride;
                        let mut best = xv[best_idx];
                        // Scan in ascending flat order with strict `>` so a
                        // tie keeps the lowest flat index.
                        for u in 0..window {
                            for v in 0..window {
                                let idx = plane + (oy * stride + u) * w + (ox * stride + v);
                                if xv[idx] > best {
                                    best = xv[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = ((bi * c + ci) * out_h + oy) * out_w + ox;
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
        let rq = self.requires(&[x]);
        Ok(self.push(
            Tensor::new(vec![b, c, out_h, out_w], out)?,
            rq,
            Op::MaxPool2d { x, argmax },
        ))
    }

    /// Batch norm over `[b,c,h,w]` with per-channel statistics.
    ///
    /// In training mode the batch statistics are computed here and returned
    /// (biased variance, as used for normalization) so the caller can fold
    /// them into running estimates; training mode requires `b >= 2`. In eval
    /// mode the supplied running statistics are used as constants.
    pub fn batch_norm(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        running: Option<(&[T], &[T])>,
        eps: f64,
    ) -> Result<(VarId, Option<(Vec<T>, Vec<T>)>)> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(Error::Dimension(format!(
                "batch_norm expects x[b,c,h,w], got {:?}",
                sx
            )));
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Dimension(format!(
                "batch_norm scale/shift must be [{}], got {:?} and {:?}",
                c,
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let training = running.is_none();
        if training && b < 2 {
            return Err(Error::Statistics(format!(
                "batch norm in training mode needs a batch of at least 2, got {}",
                b
            )));
        }
        let n = b * h * w;
        let eps_t = T::from_f64(eps);
        let xv = self.nodes[x.0].value.data();

        let (mean, var): (Vec<T>, Vec<T>) = match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return Err(Error::Dimension(format!(
                        "running stats must have {} channels, got {} and {}",
                        c,
                        rm.len(),
                        rv.len()
                    )));
                }
                (rm.to_vec(), rv.to_vec())
            }
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let inv_n = T::one() / T::from_f64(n as f64);
                for ci in 0..c {
                    let mut s = T::zero();
                    for bi in 0..b {
                        let plane = (bi * c + ci) * h * w;
                        for i in 0..h * w {
                            s += xv[plane + i];
                        }
                    }
                    mean[ci] = s * inv_n;
                    let mut s2 = T::zero();
                    for bi in 0..b {
                        let plane = (bi * c + ci) * h * w;
                        for i in 0..h * w {
                            let d = xv[plane + i] - mean[ci];
                            s2 += d * d;
                        }
                    }
                    var[ci] = s2 * inv_n;
                }
                (mean, var)
            }
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let gv = self.nodes[gamma.0].value.data();
        let bv = self.nodes[beta.0].value.data();
        let mut x_hat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                let plane = (bi * c + ci) * h * w;
                for i in 0..h * w {
                    let xh = (xv[plane + i] - mean[ci]) * inv_std[ci];
                    x_hat[plane + i] = xh;
                    out[plane + i] = gv[ci] * xh + bv[ci];
                }
            }
        }
        let stats = training.then(|| (mean, var));
        let rq = self.requires(&[x, gamma, beta]);
        let id = self.push(
            Tensor::new(sx, out)?,
            rq,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                training,
            },
        );
        Ok((id, stats))
    }

    pub fn leaky_relu(&mut self, x: VarId, slope: f64) -> Result<VarId> {
        let slope = T::from_f64(slope);
        let out = self.nodes[x.0]
            .value
            .map(|v| if v > T::zero() { v } else { slope * v });
        let rq = self.requires(&[x]);
        Ok(self.push(out, rq, Op::LeakyRelu { x, slope }))
    }

    /// Shift-stabilized `log(sum(exp(row)))` over the rows of `[b,k]`.
    pub fn log_sum_exp_rows(&mut self, x: VarId) -> Result<VarId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || sx[1] == 0 {
            return Err(Error::Dimension(format!(
                "log_sum_exp_rows expects [b,k] with k >= 1, got {:?}",
                sx
            )));
        }
        let (b, k) = (sx[0], sx[1]);
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); b];
        let mut softmax = vec![T::zero(); b * k];
        for i in 0..b {
            let row = &xv[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(row[0], T::max);
            let mut sum = T::zero();
            for j in 0..k {
                let e = (row[j] - m).exp();
                softmax[i * k + j] = e;
                sum += e;
            }
            for j in 0..k {
                softmax[i * k + j] /= sum;
            }
            out[i] = m + sum.ln();
        }
        let rq = self.requires(&[x]);
        Ok(self.push(
            Tensor::new(vec![b], out)?,
            rq,
            Op::LogSumExpRows { x, softmax },
        ))
    }

    pub fn gather_rows(&mut self, x: VarId, index: &[usize]) -> Result<VarId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::Dimension(format!(
                "gather_rows expects [b,k], got {:?}",
                sx
            )));
        }
        let (b, k) = (sx[0], sx[1]);
        if index.len() != b {
            return Err(Error::Dimension(format!(
                "gather_rows got {} indices for {} rows",
                index.len(),
                b
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= k) {
            return Err(Error::Dimension(format!(
                "gather index {} out of range for {} columns",
                bad, k
            )));
        }
        let xv = self.nodes[x.0].value.data();
        let out: Vec<T> = index.iter().enumerate().map(|(i, &j)| xv[i * k + j]).collect();
        let rq = self.requires(&[x]);
        Ok(self.push(
            Tensor::new(vec![b], out)?,
            rq,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
        ))
    }

    /// Per-row dot product against constant weights of the same shape.
    pub fn row_dot(&mut self, x: VarId, weights: &Tensor<T>) -> Result<VarId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || weights.shape() != sx {
            return Err(Error::Dimension(format!(
                "row_dot expects matching [b,k] shapes, got {:?} and {:?}",
                sx,
                weights.shape()
            )));
        }
        let (b, k) = (sx[0], sx[1]);
        let xv = self.nodes[x.0].value.data();
        let wv = weights.data();
        let out: Vec<T> = (0..b)
            .map(|i| (0..k).map(|j| xv[i * k + j] * wv[i * k + j]).sum())
            .collect();
        let rq = self.requires(&[x]);
        Ok(self.push(
            Tensor::new(vec![b], out)?,
            rq,
            Op::RowDot {
                x,
                weights: wv.to_vec(),
            },
        ))
    }

    /// Per-row margin `x[i, rival] - x[i, target]` where `rival` is the
    /// highest-valued non-target column (ties to the lowest index).
    pub fn row_margin(&mut self, x: VarId, target: &[usize]) -> Result<VarId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || sx[1] < 2 {
            return Err(Error::Dimension(format!(
                "row_margin expects [b,k] with k >= 2, got {:?}",
                sx
            )));
        }
        let (b, k) = (sx[0], sx[1]);
        if target.len() != b {
            return Err(Error::Dimension(format!(
                "row_margin got {} targets for {} rows",
                target.len(),
                b
            )));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= k) {
            return Err(Error::Dimension(format!(
                "target {} out of range for {} columns",
                bad, k
            )));
        }
        let xv = self.nodes[x.0].value.data();
        let mut rival = vec![0usize; b];
        let mut out = vec![T::zero(); b];
        for i in 0..b {
            let row = &xv[i * k..(i + 1) * k];
            let s = strongest_other(row, target[i]);
            rival[i] = s;
            out[i] = row[s] - row[target[i]];
        }
        let rq = self.requires(&[x]);
        Ok(self.push(
            Tensor::new(vec![b], out)?,
            rq,
            Op::RowMargin {
                x,
                target: target.to_vec(),
                rival,
            },
        ))
    }

    pub fn sum_all(&mut self, x: VarId) -> Result<VarId> {
        let s: T = self.nodes[x.0].value.data().iter().copied().sum();
        let rq = self.requires(&[x]);
        Ok(self.push(Tensor::scalar(s), rq, Op::SumAll { x }))
    }

    /// Mean over all elements, as `sum / numel`.
    pub fn mean_all(&mut self, x: VarId) -> Result<VarId> {
        let n = self.nodes[x.0].value.numel();
        let s = self.sum_all(x)?;
        self.scale(s, T::one() / T::from_f64(n as f64))
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> Result<VarId> {
        let out = self.nodes[x.0].value.reshaped(shape)?;
        let rq = self.requires(&[x]);
        Ok(self.push(out, rq, Op::Reshape { x }))
    }

    /// Zero-pads the spatial axes of `[b,c,h,w]` up to `out_h x out_w`,
    /// centering the input (extra odd pixel goes to the bottom/right).
    pub fn pad_hw(&mut self, x: VarId, out_h: usize, out_w: usize) -> Result<VarId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(Error::Dimension(format!(
                "pad_hw expects x[b,c,h,w], got {:?}",
                sx
            )));
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if out_h < h || out_w < w {
            return Err(Error::Dimension(format!(
                "pad_hw target {}x{} smaller than input {}x{}",
                out_h, out_w, h, w
            )));
        }
        let (off_h, off_w) = ((out_h - h) / 2, (out_w - w) / 2);
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); b * c * out_h * out_w];
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h {
                    let src = ((bi * c + ci) * h + y) * w;
                    let dst = ((bi * c + ci) * out_h + y + off_h) * out_w + off_w;
                    out[dst..dst + w].copy_from_slice(&xv[src..src + w]);
                }
            }
        }
        let rq = self.requires(&[x]);
        Ok(self.push(
            Tensor::new(vec![b, c, out_h, out_w], out)?,
            rq,
            Op::PadHw { x, off_h, off_w },
        ))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Consumes the tape's ability to run
    /// again: a second call returns a usage error instead of re-accumulating.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage(
                "backward was already run on this tape; rebuild the forward pass first".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("loss id does not belong to this tape".into()));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);

        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            // Inputs of node i always have smaller ids, so adjoint writes only
            // touch `lower`; the upstream gradient is moved out and restored.
            let g = upper[0].take().expect("checked above");
            let needs = |id: VarId| nodes[id.0].requires_grad;
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let sa = nodes[a.0].value.shape();
                    let (m, k) = (sa[0], sa[1]);
                    let n = nodes[b.0].value.shape()[1];
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    if needs(*a) {
                        let da = acc_slot(lower, *a, nodes);
                        for i2 in 0..m {
                            for j in 0..n {
                                let gv = g[i2 * n + j];
                                for p in 0..k {
                                    da[i2 * k + p] += gv * bv[p * n + j];
                                }
                            }
                        }
                    }
                    if needs(*b) {
                        let db = acc_slot(lower, *b, nodes);
                        for i2 in 0..m {
                            for p in 0..k {
                                let aip = av[i2 * k + p];
                                for j in 0..n {
                                    db[p * n + j] += aip * g[i2 * n + j];
                                }
                            }
                        }
                    }
                }
                Op::AddBiasRow { x, bias } => {
                    let sx = nodes[x.0].value.shape();
                    let (m, n) = (sx[0], sx[1]);
                    if needs(*x) {
                        let dx = acc_slot(lower, *x, nodes);
                        for (d, gv) in dx.iter_mut().zip(&g) {
                            *d += *gv;
                        }
                    }
                    if needs(*bias) {
                        let db = acc_slot(lower, *bias, nodes);
                        for i2 in 0..m {
                            for j in 0..n {
                                db[j] += g[i2 * n + j];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    for id in [a, b] {
                        if needs(*id) {
                            let d = acc_slot(lower, *id, nodes);
                            for (dv, gv) in d.iter_mut().zip(&g) {
                                *dv += *gv;
                            }
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if needs(*a) {
                        let d = acc_slot(lower, *a, nodes);
                        for (dv, gv) in d.iter_mut().zip(&g) {
                            *dv += *gv;
                        }
                    }
                    if needs(*b) {
                        let d = acc_slot(lower, *b, nodes);
                        for (dv, gv) in d.iter_mut().zip(&g) {
                            *dv -= *gv;
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    if needs(*x) {
                        let d = acc_slot(lower, *x, nodes);
                        for (dv, gv) in d.iter_mut().zip(&g) {
                            *dv += *factor * *gv;
                        }
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    bias,
                    stride,
                    padding,
                } => {
                    let (stride, padding) = (*stride, *padding);
                    let sx = nodes[x.0].value.shape();
                    let sw = nodes[w.0].value.shape();
                    let so = nodes[i].value.shape();
                    let (b, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                    let (f, kh, kw) = (sw[0], sw[2], sw[3]);
                    let (out_h, out_w) = (so[2], so[3]);
                    let xv = nodes[x.0].value.data();
                    let wv = nodes[w.0].value.data();
                    // Accumulate into local buffers taken out of `lower` so
                    // the three targets can be updated in one loop nest.
                    let mut take = |id: VarId| -> Option<Vec<T>> {
                        needs(id).then(|| {
                            lower[id.0]
                                .take()
                                .unwrap_or_else(|| vec![T::zero(); nodes[id.0].value.numel()])
                        })
                    };
                    let mut dx = take(*x);
                    let mut dw = take(*w);
                    let mut db = take(*bias);
                    for bi in 0..b {
                        for fi in 0..f {
                            for oy in 0..out_h {
                                for ox in 0..out_w {
                                    let gv = g[((bi * f + fi) * out_h + oy) * out_w + ox];
                                    if gv == T::zero() {
                                        continue;
                                    }
                                    if let Some(db) = db.as_mut() {
                                        db[fi] += gv;
                                    }
                                    for ci in 0..c {
                                        for u in 0..kh {
                                            let iy = oy * stride + u;
                                            if iy < padding || iy - padding >= h {
                                                continue;
                                            }
                                            let iy = iy - padding;
                                            for v in 0..kw {
                                                let ix = ox * stride + v;
                                                if ix < padding || ix - padding >= wd {
                                                    continue;
                                                }
                                                let ix = ix - padding;
                                                let xi = ((bi * c + ci) * h + iy) * wd + ix;
                                                let wi = ((fi * c + ci) * kh + u) * kw + v;
                                                if let Some(dw) = dw.as_mut() {
                                                    dw[wi] += gv * xv[xi];
                                                }
                                                if let Some(dx) = dx.as_mut() {
                                                    dx[xi] += gv * wv[wi];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if dx.is_some() {
                        lower[x.0] = dx;
                    }
                    if dw.is_some() {
                        lower[w.0] = dw;
                    }
                    if db.is_some() {
                        lower[bias.0] = db;
                    }
                }
                Op::MaxPool2d { x, argmax } => {
                    if needs(*x) {
                        let dx = acc_slot(lower, *x, nodes);
                        for (o, &src) in argmax.iter().enumerate() {
                            dx[src] += g[o];
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                    training,
                } => {
                    let sx = nodes[x.0].value.shape();
                    let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
                    let n = b * h * w;
                    let gv = nodes[gamma.0].value.data();
                    if needs(*gamma) {
                        let dg = acc_slot(lower, *gamma, nodes);
                        for bi in 0..b {
                            for ci in 0..c {
                                let plane = (bi * c + ci) * h * w;
                                for i2 in 0..h * w {
                                    dg[ci] += g[plane + i2] * x_hat[plane + i2];
                                }
                            }
                        }
                    }
                    if needs(*beta) {
                        let db = acc_slot(lower, *beta, nodes);
                        for bi in 0..b {
                            for ci in 0..c {
                                let plane = (bi * c + ci) * h * w;
                                for i2 in 0..h * w {
                                    db[ci] += g[plane + i2];
                                }
                            }
                        }
                    }
                    if needs(*x) {
                        if *training {
                            // dx = inv_std/n * (n*dxh - sum(dxh) - xh*sum(dxh*xh))
                            let n_t = T::from_f64(n as f64);
                            let mut sum_dxh = vec![T::zero(); c];
                            let mut sum_dxh_xh = vec![T::zero(); c];
                            for bi in 0..b {
                                for ci in 0..c {
                                    let plane = (bi * c + ci) * h * w;
                                    for i2 in 0..h * w {
                                        let dxh = g[plane + i2] * gv[ci];
                                        sum_dxh[ci] += dxh;
                                        sum_dxh_xh[ci] += dxh * x_hat[plane + i2];
                                    }
                                }
                            }
                            let dx = acc_slot(lower, *x, nodes);
                            for bi in 0..b {
                                for ci in 0..c {
                                    let plane = (bi * c + ci) * h * w;
                                    for i2 in 0..h * w {
                                        let dxh = g[plane + i2] * gv[ci];
                                        dx[plane + i2] += inv_std[ci] / n_t
                                            * (n_t * dxh
                                                - sum_dxh[ci]
                                                - x_hat[plane + i2] * sum_dxh_xh[ci]);
                                    }
                                }
                            }
                        } else {
                            let dx = acc_slot(lower, *x, nodes);
                            for bi in 0..b {
                                for ci in 0..c {
                                    let plane = (bi * c + ci) * h * w;
                                    let k = gv[ci] * inv_std[ci];
                                    for i2 in 0..h * w {
                                        dx[plane + i2] += g[plane + i2] * k;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    if needs(*x) {
                        let xv = nodes[x.0].value.data();
                        let dx = acc_slot(lower, *x, nodes);
                        for (i2, (dv, gv)) in dx.iter_mut().zip(&g).enumerate() {
                            // At exactly zero the adjoint uses the slope.
                            let f = if xv[i2] > T::zero() { T::one() } else { *slope };
                            *dv += f * *gv;
                        }
                    }
                }
                Op::LogSumExpRows { x, softmax } => {
                    if needs(*x) {
                        let k = nodes[x.0].value.shape()[1];
                        let dx = acc_slot(lower, *x, nodes);
                        for (row, gv) in g.iter().enumerate() {
                            for j in 0..k {
                                dx[row * k + j] += *gv * softmax[row * k + j];
                            }
                        }
                    }
                }
                Op::GatherRows { x, index } => {
                    if needs(*x) {
                        let k = nodes[x.0].value.shape()[1];
                        let dx = acc_slot(lower, *x, nodes);
                        for (row, &j) in index.iter().enumerate() {
                            dx[row * k + j] += g[row];
                        }
                    }
                }
                Op::RowDot { x, weights } => {
                    if needs(*x) {
                        let k = nodes[x.0].value.shape()[1];
                        let dx = acc_slot(lower, *x, nodes);
                        for row in 0..g.len() {
                            for j in 0..k {
                                dx[row * k + j] += g[row] * weights[row * k + j];
                            }
                        }
                    }
                }
                Op::RowMargin { x, target, rival } => {
                    if needs(*x) {
                        let k = nodes[x.0].value.shape()[1];
                        let dx = acc_slot(lower, *x, nodes);
                        for row in 0..g.len() {
                            dx[row * k + rival[row]] += g[row];
                            dx[row * k + target[row]] -= g[row];
                        }
                    }
                }
                Op::SumAll { x } => {
                    if needs(*x) {
                        let dx = acc_slot(lower, *x, nodes);
                        for dv in dx.iter_mut() {
                            *dv += g[0];
                        }
                    }
                }
                Op::Reshape { x } => {
                    if needs(*x) {
                        let dx = acc_slot(lower, *x, nodes);
                        for (dv, gv) in dx.iter_mut().zip(&g) {
                            *dv += *gv;
                        }
                    }
                }
                Op::PadHw { x, off_h, off_w } => {
                    if needs(*x) {
                        let sx = nodes[x.0].value.shape();
                        let so = nodes[i].value.shape();
                        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
                        let (out_h, out_w) = (so[2], so[3]);
                        let dx = acc_slot(lower, *x, nodes);
                        for bi in 0..b {
                            for ci in 0..c {
                                for y in 0..h {
                                    let src =
                                        ((bi * c + ci) * out_h + y + off_h) * out_w + off_w;
                                    let dst = ((bi * c + ci) * h + y) * w;
                                    for x2 in 0..w {
                                        dx[dst + x2] += g[src + x2];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            upper[0] = Some(g);
        }
        Ok(())
    }
}

/// Lazily allocates and returns the gradient buffer for `id`.
fn acc_slot<'a, T: Element>(
    lower: &'a mut [Option<Vec<T>>],
    id: VarId,
    nodes: &[Node<T>],
) -> &'a mut [T] {
    lower[id.0]
        .get_or_insert_with(|| vec![T::zero(); nodes[id.0].value.numel()])
        .as_mut_slice()
}

fn conv_out_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    axis: &str,
) -> Result<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(Error::Dimension(format!(
            "conv2d kernel {} exceeds padded {} {}",
            kernel, axis, padded
        )));
    }
    if (padded - kernel) % stride != 0 {
        return Err(Error::Dimension(format!(
            "conv2d output {} is not integral: ({} + 2*{} - {}) not divisible by stride {}",
            axis, input, padding, kernel, stride
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Index of the largest entry excluding `skip`; ties resolve to the lowest
/// index. The row must have at least two entries.
pub fn strongest_other<T: Element>(row: &[T], skip: usize) -> usize {
    let mut best: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if j == skip {
            continue;
        }
        match best {
            None => best = Some(j),
            Some(b) if v > row[b] => best = Some(j),
            _ => {}
        }
    }
    best.expect("row has at least two entries")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(shape: [usize; 2], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_data(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_values_and_shape_errors() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t2([2, 3], &[1., 2., 3., 4., 5., 6.]), false);
        let b = tape.leaf(t2([3, 2], &[7., 8., 9., 10., 11., 12.]), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[58., 64., 139., 154.]);
        let bad = tape.leaf(t2([2, 2], &[0.; 4]), false);
        assert!(matches!(tape.matmul(a, bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_all_ones_upstream_grad_is_b_transpose_row_sums() {
        // d(sum(A@B))/dA[i,p] = sum_j B[p,j], exactly.
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t2([2, 3], &[0.5, -1., 2., 3., 4., -0.25]), true);
        let b_data = [7., 8., 9., 10., 11., 12.];
        let b = tape.leaf(t2([3, 2], &b_data), false);
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum_all(c).unwrap();
        tape.backward(s).unwrap();
        let da = tape.grad(a).unwrap();
        let row_sums = [7. + 8., 9. + 10., 11. + 12.];
        for i in 0..2 {
            for p in 0..3 {
                assert_eq!(da.data()[i * 3 + p], row_sums[p]);
            }
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t2([2, 2], &[1., 2., 3., 4.]), true);
        let err = tape.backward(a).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::scalar(2.0), true);
        let b = tape.scale(a, 3.0).unwrap();
        tape.backward(b).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[3.0]);
        assert!(matches!(tape.backward(b), Err(Error::Usage(_))));
        // First result is still readable.
        assert_eq!(tape.grad(a).unwrap().data(), &[3.0]);
    }

    #[test]
    fn log_sum_exp_is_shift_invariant_and_exact_for_extreme_rows() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(t2([1, 3], &[1., 2., 3.]), false);
        let l = tape.log_sum_exp_rows(z).unwrap();
        let base = tape.value(l).data()[0];
        assert!((base - 3.407_605_964_444_380_6).abs() < 1e-15);

        let zs = tape.leaf(t2([1, 3], &[1. + 123.25, 2. + 123.25, 3. + 123.25]), false);
        let ls = tape.log_sum_exp_rows(zs).unwrap();
        assert!((tape.value(ls).data()[0] - 123.25 - base).abs() <= 1e-12);

        let big = tape.leaf(t2([1, 2], &[1000., 0.]), false);
        let lb = tape.log_sum_exp_rows(big).unwrap();
        assert_eq!(tape.value(lb).data()[0], 1000.0);
    }

    #[test]
    fn max_pool_tie_takes_lowest_flat_index() {
        let mut tape = Tape::<f64>::new();
        // One 2x2 window, all values equal: the winner must be index 0.
        let x = tape.leaf(
            Tensor::from_f64_data(vec![1, 1, 2, 2], &[5., 5., 5., 5.]).unwrap(),
            true,
        );
        let p = tape.max_pool2d(x, 2, 2).unwrap();
        let s = tape.sum_all(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1., 0., 0., 0.]);
    }

    #[test]
    fn max_pool_geometry_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 1, 5, 5]), false);
        assert!(matches!(
            tape.max_pool2d(x, 2, 2),
            Err(Error::Dimension(_))
        ));
        let tiny = tape.leaf(Tensor::zeros(vec![1, 1, 1, 1]), false);
        assert!(matches!(
            tape.max_pool2d(tiny, 2, 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn conv_output_size_must_be_integral() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 1, 5, 5]), false);
        let w = tape.leaf(Tensor::zeros(vec![1, 1, 2, 2]), false);
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        assert!(matches!(
            tape.conv2d(x, w, b, 2, 0),
            Err(Error::Dimension(_))
        ));
        assert!(tape.conv2d(x, w, b, 1, 0).is_ok());
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_f64_data(vec![1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.])
                .unwrap(),
            false,
        );
        let w = tape.leaf(Tensor::from_f64_data(vec![1, 1, 1, 1], &[1.]).unwrap(), false);
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn batch_norm_normalized_input_passes_through() {
        let mut tape = Tape::<f64>::new();
        // Channel values {-1, +1}: mean 0, biased variance 1.
        let x = tape.leaf(
            Tensor::from_f64_data(vec![2, 1, 1, 2], &[-1., 1., 1., -1.]).unwrap(),
            false,
        );
        let g = tape.leaf(Tensor::from_f64_data(vec![1], &[1.]).unwrap(), false);
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        let (y, stats) = tape.batch_norm(x, g, b, None, 1e-5).unwrap();
        let (mean, var) = stats.unwrap();
        assert_eq!(mean, vec![0.0]);
        assert_eq!(var, vec![1.0]);
        for (o, i) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert!((o - i).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_norm_training_needs_two_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 1, 2, 2]), false);
        let g = tape.leaf(Tensor::from_f64_data(vec![1], &[1.]).unwrap(), false);
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        assert!(matches!(
            tape.batch_norm(x, g, b, None, 1e-5),
            Err(Error::Statistics(_))
        ));
        // Eval mode is fine with a single example.
        let rm = [0.0];
        let rv = [1.0];
        assert!(tape.batch_norm(x, g, b, Some((&rm, &rv)), 1e-5).is_ok());
    }

    #[test]
    fn leaky_relu_uses_slope_at_exactly_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_data(vec![3], &[-2., 0., 2.]).unwrap(), true);
        let y = tape.leaky_relu(x, 0.01).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.02, 0., 2.]);
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.01, 0.01, 1.0]);
    }

    #[test]
    fn row_margin_tie_picks_lowest_rival() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(t2([1, 4], &[3., 7., 7., 1.]), true);
        let m = tape.row_margin(z, &[0]).unwrap();
        assert_eq!(tape.value(m).data(), &[4.0]);
        let s = tape.sum_all(m).unwrap();
        tape.backward(s).unwrap();
        // Rival must be column 1 (lowest of the tied 7s).
        assert_eq!(tape.grad(z).unwrap().data(), &[-1., 1., 0., 0.]);
    }

    #[test]
    fn pad_hw_centers_and_crops_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_data(vec![1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap(), true);
        let y = tape.pad_hw(x, 4, 4).unwrap();
        let yv = tape.value(y);
        assert_eq!(yv.shape(), &[1, 1, 4, 4]);
        assert_eq!(yv.data()[5], 1.0);
        assert_eq!(yv.data()[10], 4.0);
        assert_eq!(yv.data()[0], 0.0);
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1., 1., 1., 1.]);
    }

    #[test]
    fn gradient_flow_stops_at_non_required_leaves() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::scalar(2.0), true);
        let b = tape.leaf(Tensor::scalar(5.0), false);
        let c = tape.add(a, b).unwrap();
        tape.backward(c).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0]);
        assert!(tape.grad(b).is_none());
    }
}
