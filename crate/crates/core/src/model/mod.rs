//! Shallow per-node networks.
//!
//! A [`BackboneSpec`] lists the layers of a node network; the classifier head
//! (a linear layer with one output per group) is appended when the network is
//! made. Shipped specs live in `specs/` next to this crate.

mod checkpoint;
pub mod layers;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Backbone, NormMode};
use crate::error::{fsx, Error, Result};
use crate::seed::SeedSource;
use crate::sim::ProbabilityModel;
use crate::tensor::{ImageShape, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, TensorEntry, WEIGHTS_FORMAT};
use layers::{Cache, Conv, Layer, Linear, Norm, Param};

const MOBILENET_SPEC: &str = include_str!("../../specs/mobilenet.yaml");
const VGG_SPEC: &str = include_str!("../../specs/vgg.yaml");

/// One layer descriptor in a backbone file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    /// One filter per input channel; output channels equal input channels.
    DepthwiseConv {
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Norm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<NormMode>,
    },
    Relu,
    MaxPool {
        kernel: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
    },
    GlobalAvgPool,
    Linear {
        out_features: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub family: Backbone,
    pub input_shape: ImageShape,
    /// Default mode for `norm` blocks that do not name one.
    #[serde(default = "batch")]
    pub norm: NormMode,
    pub blocks: Vec<LayerSpec>,
}

fn batch() -> NormMode {
    NormMode::Batch
}

impl BackboneSpec {
    pub fn from_yaml(text: &str) -> Result<Self> {
        serde_yaml::from_str(text).map_err(|e| Error::Model(format!("backbone spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_yaml(&fsx::read_to_string(path)?)
    }

    /// The shipped spec for `family`, adapted to `input_shape`.
    pub fn shipped(family: Backbone, input_shape: ImageShape) -> Self {
        let text = match family {
            Backbone::Mobilenet => MOBILENET_SPEC,
            Backbone::Vgg => VGG_SPEC,
        };
        let mut s = Self::from_yaml(text).expect("shipped specs parse");
        s.input_shape = input_shape;
        s
    }

    pub fn with_norm(mut self, mode: NormMode) -> Self {
        self.norm = mode;
        for b in &mut self.blocks {
            if let LayerSpec::Norm { mode: m } = b {
                *m = None;
            }
        }
        self
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("spec serializes")
    }
}

/// A plain stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input_shape: ImageShape,
    pub layers: Vec<Layer>,
}

/// Cached activations from a training forward pass.
pub struct Trace {
    caches: Vec<Cache>,
    shapes: Vec<ImageShape>,
}

impl Network {
    /// Build layers from `blocks` for `input_shape`, checking shapes as it goes.
    pub fn build(
        blocks: &[LayerSpec],
        input_shape: ImageShape,
        default_norm: NormMode,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        let mut shape = input_shape;
        let mut layers = Vec::with_capacity(blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            let layer = match *b {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::ShapeInference {
                            layer: i,
                            message: "conv sizes must be >= 1".into(),
                        });
                    }
                    Layer::Conv(Conv::new(shape.channels, out_channels, kernel, stride, padding, 1, rng))
                }
                LayerSpec::DepthwiseConv {
                    kernel,
                    stride,
                    padding,
                } => {
                    if kernel == 0 || stride == 0 {
                        return Err(Error::ShapeInference {
                            layer: i,
                            message: "conv sizes must be >= 1".into(),
                        });
                    }
                    let c = shape.channels;
                    Layer::Conv(Conv::new(c, c, kernel, stride, padding, c, rng))
                }
                LayerSpec::Norm { mode } => Layer::Norm(Norm::new(mode.unwrap_or(default_norm), shape.channels)),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { kernel, stride } => {
                    let stride = stride.unwrap_or(kernel);
                    if kernel == 0 || stride == 0 {
                        return Err(Error::ShapeInference {
                            layer: i,
                            message: "pool sizes must be >= 1".into(),
                        });
                    }
                    Layer::MaxPool { kernel, stride }
                }
                LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
                LayerSpec::Linear { out_features } => {
                    if out_features == 0 {
                        return Err(Error::ShapeInference {
                            layer: i,
                            message: "linear out_features must be >= 1".into(),
                        });
                    }
                    Layer::Linear(Linear::new(shape.len(), out_features, rng))
                }
            };
            shape = layer.output_shape(shape).map_err(|m| Error::ShapeInference {
                layer: i,
                message: format!("{}: {m}", layer.name()),
            })?;
            layers.push(layer);
        }
        Ok(Self { input_shape, layers })
    }

    pub fn output_shape(&self) -> ImageShape {
        self.layers
            .iter()
            .fold(self.input_shape, |s, l| l.output_shape(s).expect("checked at build"))
    }

    /// Inference-mode forward (running statistics for batch norm).
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward_eval(&cur);
        }
        cur
    }

    /// Training-mode forward keeping what [`Network::backward`] needs.
    pub fn forward_train(&mut self, x: &Tensor) -> (Tensor, Trace) {
        let mut trace = Trace {
            caches: Vec::with_capacity(self.layers.len()),
            shapes: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x.clone();
        for l in &mut self.layers {
            trace.shapes.push(cur.image_shape());
            let (y, c) = l.forward_train(&cur);
            trace.caches.push(c);
            cur = y;
        }
        (cur, trace)
    }

    /// Backpropagate `dy` through the traced pass; accumulates into parameter gradients.
    pub fn backward(&mut self, trace: &Trace, dy: Tensor) -> Tensor {
        let mut g = dy;
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            g = l.backward(&trace.caches[i], &g, trace.shapes[i]);
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn num_params(&self) -> usize {
        let mut c = self.clone();
        c.params_mut().iter().map(|p| p.value.len()).sum()
    }

    pub fn norm_layers(&self) -> impl Iterator<Item = &Norm> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Norm(n) => Some(n),
            _ => None,
        })
    }
}

impl AsRef<Network> for Network {
    fn as_ref(&self) -> &Network {
        self
    }
}

/// A node's network: backbone plus a head with `out_groups` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeNetwork {
    pub spec: BackboneSpec,
    pub out_groups: usize,
    pub net: Network,
}

impl AsRef<Network> for NodeNetwork {
    fn as_ref(&self) -> &Network {
        &self.net
    }
}

/// Seed for the initial weights of `node`, independent of training order.
pub fn init_seed(global_seed: u64, node: &str) -> u64 {
    SeedSource::new(global_seed).derive(&format!("init/{node}"))
}

pub fn make_node_network(spec: &BackboneSpec, out_groups: usize, init_seed: u64) -> Result<NodeNetwork> {
    if out_groups == 0 {
        return Err(Error::Model("out_groups must be >= 1".into()));
    }
    let mut rng = SeedSource::new(init_seed).rng("weights");
    let mut blocks = spec.blocks.clone();
    blocks.push(LayerSpec::Linear {
        out_features: out_groups,
    });
    let net = Network::build(&blocks, spec.input_shape, spec.norm, &mut rng)?;
    Ok(NodeNetwork {
        spec: spec.clone(),
        out_groups,
        net,
    })
}

/// Replace every normalization layer by a fresh one of `mode`.
pub fn set_norm_mode(mut network: NodeNetwork, mode: NormMode) -> NodeNetwork {
    for l in &mut network.net.layers {
        if let Layer::Norm(n) = l {
            *n = Norm::new(mode, n.channels);
        }
    }
    network.spec = network.spec.with_norm(mode);
    network
}

/// FLOPs of one forward pass of a single image of `input_shape`.
pub fn count_flops<N: AsRef<Network>>(network: &N, input_shape: ImageShape) -> Result<u64> {
    let net = network.as_ref();
    let mut shape = input_shape;
    let mut total = 0u64;
    for (i, l) in net.layers.iter().enumerate() {
        let next = l.output_shape(shape).map_err(|m| Error::ShapeInference {
            layer: i,
            message: format!("{}: {m}", l.name()),
        })?;
        total += l.flops(shape);
        shape = next;
    }
    Ok(total)
}

/// Row-wise softmax of an `N x K` logit tensor.
pub fn softmax(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.sample_len();
    logits
        .data
        .chunks(k)
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`), and its
/// gradient with respect to the logits.
pub fn nll_loss(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let probs = softmax(logits);
    let n = labels.len() as f64;
    let k = logits.sample_len();
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (i, (p, &y)) in probs.iter().zip(labels).enumerate() {
        let row = &p[..];
        let m = logits.sample(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.sample(i).iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - logits.sample(i)[y];
        for j in 0..k {
            grad.data[i * k + j] = (row[j] - if j == y { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad)
}

impl NodeNetwork {
    pub fn input_shape(&self) -> ImageShape {
        self.spec.input_shape
    }

    /// Per-image group probabilities (inference mode).
    pub fn probabilities(&self, batch: &Tensor) -> Vec<Vec<f64>> {
        softmax(&self.net.forward(batch))
    }

    pub fn flops(&self) -> u64 {
        count_flops(self, self.input_shape()).expect("shape checked at build")
    }

    /// Replace the head with a fresh one of `out_groups` outputs.
    pub fn replace_head(&mut self, out_groups: usize, init_seed: u64) -> Result<()> {
        if out_groups == 0 {
            return Err(Error::Model("out_groups must be >= 1".into()));
        }
        let head = self.net.layers.pop().expect("network has a head");
        let in_features = match head {
            Layer::Linear(l) => l.in_features,
            _ => unreachable!("last layer is the head"),
        };
        let mut rng = SeedSource::new(init_seed).rng("head");
        self.net
            .layers
            .push(Layer::Linear(Linear::new(in_features, out_groups, &mut rng)));
        self.out_groups = out_groups;
        Ok(())
    }
}

impl ProbabilityModel for NodeNetwork {
    fn num_outputs(&self) -> usize {
        self.out_groups
    }

    fn predict(&self, batch: &Tensor) -> Vec<Vec<f64>> {
        self.probabilities(batch)
    }
}
