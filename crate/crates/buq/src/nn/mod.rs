//! Minimal from-scratch feedforward and convolutional classifiers.
//!
//! The scope is deliberately small: dense and convolutional stacks with
//! ReLU, max-pooling, inverted dropout and a softmax head, trained by
//! mini-batch SGD with momentum on cross-entropy plus an L2 penalty. No
//! autodiff graph; each layer has a hand-written backward rule validated
//! against central finite differences (see [`grad_check`]).
//!
//! Weights are `f32`; loss and entropy reductions accumulate in `f64`.

mod buqm;
mod gradcheck;
mod net;
mod train;

pub use gradcheck::grad_check;
pub use train::{dataset_accuracy, dataset_loss, train, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::TensorF32;
use crate::uq::ProbabilityVector;
use net::{ActShape, Cache, DropoutPass, LayerWb, Net};

/// One layer of a classifier chain.
///
/// Convolutions are "valid" (no padding); `MaxPool2d` floors partial
/// windows away. Dropout probability must lie in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool2d { kernel: usize, stride: usize },
    Relu,
    Dropout { p: f32 },
    Flatten,
    GlobalAvgPool,
    Softmax,
}

/// A named layer chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub id: String,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(id: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        let arch = Self {
            id: id.into(),
            layers,
        };
        arch.validate()?;
        Ok(arch)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("architecture has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { input, output } if input == 0 || output == 0 => {
                    return Err(Error::Config(format!("layer {i}: zero-sized dense layer")));
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 => {
                    return Err(Error::Config(format!("layer {i}: zero conv dimension")));
                }
                LayerSpec::MaxPool2d { kernel, stride } if kernel == 0 || stride == 0 => {
                    return Err(Error::Config(format!("layer {i}: zero pool dimension")));
                }
                LayerSpec::Dropout { p } if !(0.0..1.0).contains(&p) => {
                    return Err(Error::Config(format!(
                        "layer {i}: dropout probability {p} outside [0, 1)"
                    )));
                }
                LayerSpec::Softmax if i != self.layers.len() - 1 => {
                    return Err(Error::Config(format!(
                        "layer {i}: softmax only allowed as the final layer"
                    )));
                }
                _ => {}
            }
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Softmax)) {
            return Err(Error::Config("architecture must end with softmax".into()));
        }
        Ok(())
    }

    /// True when the chain contains at least one dropout layer.
    pub fn has_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Dropout { .. }))
    }
}

/// The three-layer fully connected classifier: two 128-neuron ReLU hidden
/// layers with dropout after each, then a softmax head.
pub fn dense_arch(input_pixels: usize, classes: usize, dropout_p: f32) -> Architecture {
    Architecture::new(
        "dense",
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                input: input_pixels,
                output: 128,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout { p: dropout_p },
            LayerSpec::Dense {
                input: 128,
                output: 128,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout { p: dropout_p },
            LayerSpec::Dense {
                input: 128,
                output: classes,
            },
            LayerSpec::Softmax,
        ],
    )
    .expect("dense architecture is valid")
}

/// The fully convolutional classifier used as this repo's fixed "cnn":
/// five 3x3 valid convolutions (channels 32-32-64-64-classes), two 2x2
/// max-pools with dropout after each block, and a global average pool to
/// the logits.
///
/// This is a desk-scale stand-in with the same overall structure as the
/// five-layer max-pooled architecture it imitates, not a parameter-exact
/// replication of any published model.
pub fn cnn_arch(in_channels: usize, classes: usize, dropout_p: f32) -> Architecture {
    let conv = |in_c: usize, out_c: usize| LayerSpec::Conv2d {
        in_channels: in_c,
        out_channels: out_c,
        kernel: 3,
        stride: 1,
    };
    Architecture::new(
        "cnn",
        vec![
            conv(in_channels, 32),
            LayerSpec::Relu,
            conv(32, 32),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
            LayerSpec::Dropout { p: dropout_p },
            conv(32, 64),
            LayerSpec::Relu,
            conv(64, 64),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
            LayerSpec::Dropout { p: dropout_p },
            conv(64, classes),
            LayerSpec::GlobalAvgPool,
            LayerSpec::Softmax,
        ],
    )
    .expect("cnn architecture is valid")
}

/// Builds the named architecture (`dense` or `cnn`) for a given input
/// geometry.
pub fn arch_by_id(
    id: &str,
    in_channels: usize,
    height: usize,
    width: usize,
    classes: usize,
    dropout_p: f32,
) -> Result<Architecture> {
    match id {
        "dense" => Ok(dense_arch(in_channels * height * width, classes, dropout_p)),
        "cnn" => Ok(cnn_arch(in_channels, classes, dropout_p)),
        other => Err(Error::Config(format!(
            "unknown architecture {other:?} (expected dense or cnn)"
        ))),
    }
}

/// Dropout behavior of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    /// Dropout layers are the identity.
    Off,
    /// Dropout layers sample masks from the given seed; retained units are
    /// scaled by `1/(1-p)` so `Off` is the expectation of `Sample`.
    Sample(u64),
}

/// Trained (or initialized) parameters for one layer chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: String,
    seed: u64,
    layers: Vec<LayerSpec>,
    wb: Vec<LayerWb<f32>>,
}

impl ModelParams {
    /// Fresh parameters: weights uniform in `±sqrt(6/fan_in)`, biases zero,
    /// drawn layer by layer from a ChaCha stream seeded with `seed`.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(arch, seed, &mut rng)
    }

    pub(crate) fn init_with_rng(arch: &Architecture, seed: u64, rng: &mut ChaCha8Rng) -> Self {
        let mut wb = Vec::with_capacity(arch.layers.len());
        for layer in &arch.layers {
            wb.push(match *layer {
                LayerSpec::Dense { input, output } => {
                    let limit = (6.0 / input as f32).sqrt();
                    let w = (0..input * output)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect();
                    LayerWb {
                        w,
                        b: vec![0.0; output],
                    }
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = (in_channels * kernel * kernel) as f32;
                    let limit = (6.0 / fan_in).sqrt();
                    let w = (0..out_channels * in_channels * kernel * kernel)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect();
                    LayerWb {
                        w,
                        b: vec![0.0; out_channels],
                    }
                }
                _ => LayerWb::empty(),
            });
        }
        Self {
            arch: arch.id.clone(),
            seed,
            layers: arch.layers.clone(),
            wb,
        }
    }

    /// All-zero parameters (useful for structural gradient tests).
    pub fn zeros(arch: &Architecture) -> Self {
        let mut model = Self::init(arch, 0);
        for wb in &mut model.wb {
            wb.w.iter_mut().for_each(|v| *v = 0.0);
            wb.b.iter_mut().for_each(|v| *v = 0.0);
        }
        model
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.wb.iter().map(|wb| wb.w.len() + wb.b.len()).sum()
    }

    /// Squared L2 norm of all parameters, accumulated in f64.
    pub fn l2_norm_sq(&self) -> f64 {
        self.wb
            .iter()
            .flat_map(|wb| wb.w.iter().chain(wb.b.iter()))
            .map(|&v| (v as f64) * (v as f64))
            .sum()
    }

    /// Flat view of one layer's weights (empty for parameterless layers).
    pub fn layer_weights(&self, layer: usize) -> &[f32] {
        &self.wb[layer].w
    }

    pub(crate) fn wb(&self) -> &[LayerWb<f32>] {
        &self.wb
    }

    pub(crate) fn wb_mut(&mut self) -> &mut [LayerWb<f32>] {
        &mut self.wb
    }

    pub(crate) fn from_parts(
        arch: String,
        seed: u64,
        layers: Vec<LayerSpec>,
        wb: Vec<LayerWb<f32>>,
    ) -> Self {
        Self {
            arch,
            seed,
            layers,
            wb,
        }
    }

    /// Number of classes produced by the softmax head.
    pub fn num_classes(&self) -> usize {
        for layer in self.layers.iter().rev() {
            match *layer {
                LayerSpec::Dense { output, .. } => return output,
                LayerSpec::Conv2d { out_channels, .. } => return out_channels,
                _ => {}
            }
        }
        0
    }

    fn input_shape_of(&self, x: &TensorF32) -> Result<ActShape> {
        let shape = match *x.shape() {
            [d] => ActShape::Flat(d),
            [h, w] => ActShape::Spatial { c: 1, h, w },
            [c, h, w] => ActShape::Spatial { c, h, w },
            ref other => {
                return Err(Error::InputShape {
                    expected: "[d], [h, w] or [c, h, w]".into(),
                    got: format!("{other:?}"),
                })
            }
        };
        // walk the chain once so mismatches surface as errors, not panics
        let mut s = shape;
        for layer in &self.layers {
            s = net::infer_shape(layer, s)?;
        }
        Ok(shape)
    }

    /// Class probabilities for one input.
    ///
    /// With `DropoutMode::Sample`, masks are drawn once per dropout layer
    /// (shared across any internal batching), making the pass a fixed
    /// parameter sample: the same seed always yields bit-identical output.
    pub fn forward(&self, x: &TensorF32, mode: DropoutMode) -> Result<ProbabilityVector> {
        let logits = self.forward_logits(x, mode)?;
        let m = logits.len();
        let probs = net::softmax_rows(logits.data(), 1, m);
        ProbabilityVector::new(probs.iter().map(|&v| v as f64).collect())
    }

    /// Pre-softmax activations for one input.
    pub fn forward_logits(&self, x: &TensorF32, mode: DropoutMode) -> Result<TensorF32> {
        let shape = self.input_shape_of(x)?;
        let net = Net {
            layers: &self.layers,
            wb: &self.wb,
        };
        let mut rng;
        let pass = match mode {
            DropoutMode::Off => DropoutPass::Off,
            DropoutMode::Sample(seed) => {
                rng = ChaCha8Rng::seed_from_u64(seed);
                DropoutPass::PerFeature(&mut rng)
            }
        };
        let (logits, out_shape) = net.forward_logits(x.data(), 1, shape, pass, None)?;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow {
                context: "forward pass logits".into(),
            });
        }
        Ok(TensorF32::new(vec![out_shape.numel()], logits))
    }

    /// Class probabilities for a contiguous batch of inputs, all sharing
    /// `shape`. Returns `batch * classes` values row-major.
    pub(crate) fn forward_probs_batch(
        &self,
        data: &[f32],
        batch: usize,
        shape: &[usize],
        mode: DropoutMode,
    ) -> Result<Vec<f32>> {
        let shape = match *shape {
            [d] => ActShape::Flat(d),
            [h, w] => ActShape::Spatial { c: 1, h, w },
            [c, h, w] => ActShape::Spatial { c, h, w },
            ref other => {
                return Err(Error::InputShape {
                    expected: "[d], [h, w] or [c, h, w]".into(),
                    got: format!("{other:?}"),
                })
            }
        };
        let net = Net {
            layers: &self.layers,
            wb: &self.wb,
        };
        let mut rng;
        let pass = match mode {
            DropoutMode::Off => DropoutPass::Off,
            DropoutMode::Sample(seed) => {
                rng = ChaCha8Rng::seed_from_u64(seed);
                DropoutPass::PerFeature(&mut rng)
            }
        };
        let (logits, out_shape) = net.forward_logits(data, batch, shape, pass, None)?;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow {
                context: "batched forward pass logits".into(),
            });
        }
        Ok(net::softmax_rows(&logits, batch, out_shape.numel()))
    }

    /// Persists the parameters in the BUQM binary format.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        buqm::save(self, path)
    }

    /// Loads parameters from a BUQM file. Architecture id and seed are not
    /// part of the format; the caller (or an ensemble manifest) supplies
    /// them via [`ModelParams::set_meta`].
    pub fn load(path: &std::path::Path) -> Result<Self> {
        buqm::load(path)
    }

    /// Restores metadata that the BUQM payload does not carry.
    pub fn set_meta(&mut self, arch: impl Into<String>, seed: u64) {
        self.arch = arch.into();
        self.seed = seed;
    }

    /// Cross-entropy gradients for a single labeled input, dropout off.
    /// Exposed for structural gradient tests; training uses the batched
    /// internal path.
    pub fn loss_gradients(&self, x: &TensorF32, label: usize) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
        let shape = self.input_shape_of(x)?;
        let net = Net {
            layers: &self.layers,
            wb: &self.wb,
        };
        let mut caches: Vec<Cache<f32>> = Vec::with_capacity(self.layers.len());
        let (logits, out_shape) =
            net.forward_logits(x.data(), 1, shape, DropoutPass::Off, Some(&mut caches))?;
        let m = out_shape.numel();
        let (_, dlogits) = net::cross_entropy(&logits, &[label], 1, m);
        let grads = net.backward(&caches, dlogits, 1);
        Ok(grads.into_iter().map(|g| (g.w, g.b)).collect())
    }
}
