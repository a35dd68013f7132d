//! Network definitions: the convolutional classifier used for image work, a
//! two-layer perceptron for fast experiments, and the plumbing both need —
//! seeded initialization, named parameters, and forward passes in training
//! and evaluation mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.01;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

// ---------------------------------------------------------------------------
// architecture descriptor
// ---------------------------------------------------------------------------

/// Everything needed to rebuild a model's layer structure from scratch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchSpec {
    /// conv(64)-BN-LReLU-pool, conv(128)-BN-LReLU-pool, conv(256)-BN-LReLU-
    /// pool, flatten, FC(1024), FC(classes). 3x3 stride-1 pad-1 kernels,
    /// 2x2 stride-2 pooling.
    MiddleCnn {
        in_channels: usize,
        image_size: usize,
        classes: usize,
        /// Zero-pad smaller inputs up to 32x32 instead of rejecting them.
        pad_to_32: bool,
    },
    /// FC(hidden)-LReLU-FC(classes) over a flat input.
    TinyMlp {
        input_dim: usize,
        hidden: usize,
        classes: usize,
    },
}

impl ArchSpec {
    pub fn classes(&self) -> usize {
        match *self {
            ArchSpec::MiddleCnn { classes, .. } | ArchSpec::TinyMlp { classes, .. } => classes,
        }
    }

    /// Input shape as `[channels, height, width]`.
    pub fn input_shape(&self) -> [usize; 3] {
        match *self {
            ArchSpec::MiddleCnn {
                in_channels,
                image_size,
                ..
            } => [in_channels, image_size, image_size],
            ArchSpec::TinyMlp { input_dim, .. } => [1, 1, input_dim],
        }
    }

    /// Compact single-line encoding, stable across versions; used as the
    /// architecture identifier inside checkpoints.
    pub fn id_string(&self) -> String {
        match *self {
            ArchSpec::MiddleCnn {
                in_channels,
                image_size,
                classes,
                pad_to_32,
            } => format!(
                "middle_cnn:in={in_channels},size={image_size},classes={classes},pad32={}",
                u8::from(pad_to_32)
            ),
            ArchSpec::TinyMlp {
                input_dim,
                hidden,
                classes,
            } => format!("tiny_mlp:in={input_dim},hidden={hidden},classes={classes}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("unrecognized architecture id {s:?}"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let mut fields = std::collections::BTreeMap::new();
        for part in rest.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            let v: usize = v.parse().map_err(|_| bad())?;
            fields.insert(k.to_string(), v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(bad);
        match kind {
            "middle_cnn" => Ok(ArchSpec::MiddleCnn {
                in_channels: get("in")?,
                image_size: get("size")?,
                classes: get("classes")?,
                pad_to_32: get("pad32")? != 0,
            }),
            "tiny_mlp" => Ok(ArchSpec::TinyMlp {
                input_dim: get("in")?,
                hidden: get("hidden")?,
                classes: get("classes")?,
            }),
            _ => Err(bad()),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ArchSpec::MiddleCnn {
                in_channels,
                image_size,
                classes,
                pad_to_32,
            } => {
                if in_channels == 0 || classes == 0 || image_size == 0 {
                    return Err(Error::Config(
                        "channels, classes and image size must all be >= 1".into(),
                    ));
                }
                if pad_to_32 {
                    if image_size > 32 {
                        return Err(Error::Config(format!(
                            "image size {image_size} exceeds the 32x32 padding target"
                        )));
                    }
                } else if image_size % 8 != 0 {
                    return Err(Error::Config(format!(
                        "image size {image_size} is not divisible by 8 (three 2x pools); \
                         enable padding to 32 for smaller inputs"
                    )));
                }
            }
            ArchSpec::TinyMlp {
                input_dim,
                hidden,
                classes,
            } => {
                if input_dim == 0 || hidden == 0 || classes == 0 {
                    return Err(Error::Config("all layer widths must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Builds the model with seeded Kaiming-uniform weights, zero biases,
    /// and identity batch-norm statistics.
    pub fn build<T: Element>(&self, seed: u64) -> Result<Model<T>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        match *self {
            ArchSpec::MiddleCnn {
                in_channels,
                image_size,
                classes,
                pad_to_32,
            } => {
                let effective = if pad_to_32 { 32 } else { image_size };
                if pad_to_32 && image_size != 32 {
                    layers.push(Layer::PadTo { size: 32 });
                }
                let widths = [64usize, 128, 256];
                let mut c_in = in_channels;
                for (i, &c_out) in widths.iter().enumerate() {
                    let n = i + 1;
                    layers.push(Layer::Conv {
                        name: format!("conv{n}"),
                        weight: kaiming_conv(c_out, c_in, 3, &mut rng),
                        bias: Tensor::zeros(vec![c_out]),
                        stride: 1,
                        padding: 1,
                    });
                    layers.push(Layer::BatchNorm {
                        name: format!("bn{n}"),
                        gamma: Tensor::full(vec![c_out], T::one()),
                        beta: Tensor::zeros(vec![c_out]),
                        running_mean: Tensor::zeros(vec![c_out]),
                        running_var: Tensor::full(vec![c_out], T::one()),
                    });
                    layers.push(Layer::LeakyRelu);
                    layers.push(Layer::MaxPool { window: 2, stride: 2 });
                    c_in = c_out;
                }
                layers.push(Layer::Flatten);
                let flat = 256 * (effective / 8) * (effective / 8);
                layers.push(Layer::Linear {
                    name: "fc1".into(),
                    weight: kaiming_linear(flat, 1024, &mut rng),
                    bias: Tensor::zeros(vec![1024]),
                });
                layers.push(Layer::Linear {
                    name: "fc2".into(),
                    weight: kaiming_linear(1024, classes, &mut rng),
                    bias: Tensor::zeros(vec![classes]),
                });
            }
            ArchSpec::TinyMlp {
                input_dim,
                hidden,
                classes,
            } => {
                layers.push(Layer::Flatten);
                layers.push(Layer::Linear {
                    name: "fc1".into(),
                    weight: kaiming_linear(input_dim, hidden, &mut rng),
                    bias: Tensor::zeros(vec![hidden]),
                });
                layers.push(Layer::LeakyRelu);
                layers.push(Layer::Linear {
                    name: "fc2".into(),
                    weight: kaiming_linear(hidden, classes, &mut rng),
                    bias: Tensor::zeros(vec![classes]),
                });
            }
        }
        Ok(Model {
            arch: self.clone(),
            layers,
            iteration: 0,
        })
    }
}

/// Kaiming-uniform fan-in bound with the leaky-relu gain.
fn kaiming_bound(fan_in: usize) -> f64 {
    let gain2 = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
    (gain2 * 3.0 / fan_in as f64).sqrt()
}

fn kaiming_conv<T: Element>(
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let b = kaiming_bound(c_in * k * k);
    Tensor::uniform(vec![c_out, c_in, k, k], -b, b, rng)
}

/// Linear weights are stored `[in, out]` so the forward pass is a plain
/// `x @ W` without transposition.
fn kaiming_linear<T: Element>(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let b = kaiming_bound(d_in);
    Tensor::uniform(vec![d_in, d_out], -b, b, rng)
}

// ---------------------------------------------------------------------------
// layers and the model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Layer<T: Element> {
    /// Zero-pads height and width up to `size`, centered.
    PadTo { size: usize },
    Conv {
        name: String,
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        name: String,
        gamma: Tensor<T>,
        beta: Tensor<T>,
        running_mean: Tensor<T>,
        running_var: Tensor<T>,
    },
    LeakyRelu,
    MaxPool { window: usize, stride: usize },
    Flatten,
    Linear {
        name: String,
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
}

/// Result of a forward pass that tracked parameters on the tape.
pub struct ForwardPass {
    pub logits: VarId,
    /// Parameter variables in the same order as [`Model::named_params`].
    pub params: Vec<VarId>,
}

#[derive(Debug, Clone)]
pub struct Model<T: Element> {
    arch: ArchSpec,
    layers: Vec<Layer<T>>,
    /// Completed training steps; carried through checkpoints.
    pub iteration: u64,
}

enum Mode {
    EvalFrozen,
    EvalTracked,
    Train,
}

impl<T: Element> Model<T> {
    pub fn middle_cnn(
        in_channels: usize,
        image_size: usize,
        classes: usize,
        pad_to_32: bool,
        seed: u64,
    ) -> Result<Self> {
        ArchSpec::MiddleCnn {
            in_channels,
            image_size,
            classes,
            pad_to_32,
        }
        .build(seed)
    }

    pub fn tiny_mlp(input_dim: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        ArchSpec::TinyMlp {
            input_dim,
            hidden,
            classes,
        }
        .build(seed)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input_shape()
    }

    /// Trainable parameters in a fixed order: layer by layer, weight before
    /// bias, gamma before beta. Running statistics are not included.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv {
                    name, weight, bias, ..
                }
                | Layer::Linear { name, weight, bias } => {
                    out.push((format!("{name}.weight"), weight));
                    out.push((format!("{name}.bias"), bias));
                }
                Layer::BatchNorm {
                    name, gamma, beta, ..
                } => {
                    out.push((format!("{name}.gamma"), gamma));
                    out.push((format!("{name}.beta"), beta));
                }
                _ => {}
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv {
                    name, weight, bias, ..
                }
                | Layer::Linear { name, weight, bias } => {
                    out.push((format!("{name}.weight"), weight));
                    out.push((format!("{name}.bias"), bias));
                }
                Layer::BatchNorm {
                    name, gamma, beta, ..
                } => {
                    out.push((format!("{name}.gamma"), gamma));
                    out.push((format!("{name}.beta"), beta));
                }
                _ => {}
            }
        }
        out
    }

    /// Everything a checkpoint must carry: trainable parameters plus batch
    /// norm running statistics, in a fixed order.
    pub fn state_entries(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv {
                    name, weight, bias, ..
                }
                | Layer::Linear { name, weight, bias } => {
                    out.push((format!("{name}.weight"), weight));
                    out.push((format!("{name}.bias"), bias));
                }
                Layer::BatchNorm {
                    name,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    out.push((format!("{name}.gamma"), gamma));
                    out.push((format!("{name}.beta"), beta));
                    out.push((format!("{name}.running_mean"), running_mean));
                    out.push((format!("{name}.running_var"), running_var));
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrites one state tensor by name; shape and count must match.
    pub fn load_state_entry(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        for layer in &mut self.layers {
            let slot: Option<&mut Tensor<T>> = match layer {
                Layer::Conv {
                    name: n,
                    weight,
                    bias,
                    ..
                }
                | Layer::Linear {
                    name: n,
                    weight,
                    bias,
                } => match name.strip_prefix(n.as_str()).and_then(|s| s.strip_prefix('.')) {
                    Some("weight") => Some(weight),
                    Some("bias") => Some(bias),
                    _ => None,
                },
                Layer::BatchNorm {
                    name: n,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => match name.strip_prefix(n.as_str()).and_then(|s| s.strip_prefix('.')) {
                    Some("gamma") => Some(gamma),
                    Some("beta") => Some(beta),
                    Some("running_mean") => Some(running_mean),
                    Some("running_var") => Some(running_var),
                    _ => None,
                },
                _ => None,
            };
            if let Some(slot) = slot {
                if slot.shape() != value.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "{name}: stored shape {:?}, architecture expects {:?}",
                        value.shape(),
                        slot.shape()
                    )));
                }
                *slot = value;
                return Ok(());
            }
        }
        Err(Error::ShapeMismatch(format!(
            "state tensor {name:?} does not exist in this architecture"
        )))
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Flat spans of each named parameter inside [`Self::param_vector`].
    pub fn param_spans(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (name, t) in self.named_params() {
            out.push((name, offset..offset + t.numel()));
            offset += t.numel();
        }
        out
    }

    pub fn param_vector(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, t) in self.named_params() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn set_param_vector(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.param_count(), "parameter vector length");
        let mut offset = 0;
        for (_, t) in self.named_params_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = self.input_shape();
        if shape.len() != 4 || shape[1..] != want || shape[0] == 0 {
            return Err(Error::Dimension(format!(
                "input must be [batch, {}, {}, {}] with batch >= 1, got {:?}",
                want[0], want[1], want[2], shape
            )));
        }
        Ok(())
    }

    /// Eval-mode forward with parameters held constant on the tape. Input
    /// gradients still flow if `x` requires them.
    pub fn forward_eval(&self, tape: &mut Tape<T>, x: VarId) -> Result<VarId> {
        let (logits, _, _) = self.forward_core(tape, x, Mode::EvalFrozen)?;
        Ok(logits)
    }

    /// Eval-mode forward with parameters registered as differentiable
    /// leaves.
    pub fn forward_eval_with_params(&self, tape: &mut Tape<T>, x: VarId) -> Result<ForwardPass> {
        let (logits, params, _) = self.forward_core(tape, x, Mode::EvalTracked)?;
        Ok(ForwardPass { logits, params })
    }

    /// Training-mode forward: batch norm uses batch statistics and folds
    /// them into the running estimates (momentum 0.1, unbiased variance).
    pub fn forward_train(&mut self, tape: &mut Tape<T>, x: VarId) -> Result<ForwardPass> {
        let (logits, params, updates) = self.forward_core(tape, x, Mode::Train)?;
        let momentum = T::from_f64(BN_MOMENTUM);
        let keep = T::one() - momentum;
        for (index, mean, var, n) in updates {
            let bessel = T::from_f64(n as f64 / (n as f64 - 1.0));
            if let Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } = &mut self.layers[index]
            {
                for (r, &m) in running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = keep * *r + momentum * m;
                }
                for (r, &v) in running_var.data_mut().iter_mut().zip(&var) {
                    *r = keep * *r + momentum * (v * bessel);
                }
            }
        }
        Ok(ForwardPass { logits, params })
    }

    #[allow(clippy::type_complexity)]
    fn forward_core(
        &self,
        tape: &mut Tape<T>,
        x: VarId,
        mode: Mode,
    ) -> Result<(VarId, Vec<VarId>, Vec<(usize, Vec<T>, Vec<T>, usize)>)> {
        self.check_input(tape.value(x).shape())?;
        let track = !matches!(mode, Mode::EvalFrozen);
        let train = matches!(mode, Mode::Train);
        let mut params = Vec::new();
        let mut updates = Vec::new();
        let mut cur = x;
        for (index, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::PadTo { size } => tape.pad_hw(cur, *size, *size)?,
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                    padding,
                    ..
                } => {
                    let w = tape.leaf(weight.clone(), track);
                    let b = tape.leaf(bias.clone(), track);
                    if track {
                        params.push(w);
                        params.push(b);
                    }
                    tape.conv2d(cur, w, b, *stride, *padding)?
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                } => {
                    let g = tape.leaf(gamma.clone(), track);
                    let b = tape.leaf(beta.clone(), track);
                    if track {
                        params.push(g);
                        params.push(b);
                    }
                    let running = if train {
                        None
                    } else {
                        Some((running_mean.data(), running_var.data()))
                    };
                    let (out, stats) = tape.batch_norm(cur, g, b, running, BN_EPS)?;
                    if let Some((mean, var)) = stats {
                        let shape = tape.value(cur).shape();
                        let n = shape[0] * shape[2] * shape[3];
                        updates.push((index, mean, var, n));
                    }
                    out
                }
                Layer::LeakyRelu => tape.leaky_relu(cur, LEAKY_SLOPE)?,
                Layer::MaxPool { window, stride } => tape.max_pool2d(cur, *window, *stride)?,
                Layer::Flatten => {
                    let shape = tape.value(cur).shape().to_vec();
                    let flat = shape[1..].iter().product();
                    tape.reshape(cur, vec![shape[0], flat])?
                }
                Layer::Linear { weight, bias, .. } => {
                    let w = tape.leaf(weight.clone(), track);
                    let b = tape.leaf(bias.clone(), track);
                    if track {
                        params.push(w);
                        params.push(b);
                    }
                    let y = tape.matmul(cur, w)?;
                    tape.add_bias_row(y, b)?
                }
            };
        }
        Ok((cur, params, updates))
    }

    /// Eval-mode logits on a fresh tape.
    pub fn logits_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let z = self.forward_eval(&mut tape, xv)?;
        Ok(tape.value(z).clone())
    }

    /// Argmax class per example in eval mode, ties to the lowest index.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.logits_eval(x)?;
        let k = self.classes();
        let data = logits.data();
        Ok((0..logits.shape()[0])
            .map(|i| {
                let row = &data[i * k..(i + 1) * k];
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
