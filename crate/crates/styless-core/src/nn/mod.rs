//! Small CNN classifiers with a designated split point.
//!
//! A model is an ordered list of layers; `split_index` marks the boundary
//! between the front part (the style encoder) and the back part, so the
//! composite forward F2(F1(x)) is a pure re-bracketing of the unsplit pass.

mod checkpoint;
mod dataset;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, TrainingMeta};
pub use dataset::{load_dataset, save_dataset, Dataset, DatasetError, IMAGE_LEN, IMAGE_SHAPE};
pub use train::{evaluate_accuracy, train, EpochStats, TrainConfig, TrainError};

use crate::tensor::{Result, Tape, Tensor, TensorError, TensorId};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;

/// The four locally trainable architecture families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchName {
    ConvnetA,
    ConvnetB,
    ConvnetC,
    ConvnetD,
}

impl ArchName {
    pub const ALL: [ArchName; 4] = [
        ArchName::ConvnetA,
        ArchName::ConvnetB,
        ArchName::ConvnetC,
        ArchName::ConvnetD,
    ];

    pub fn parse(name: &str) -> Option<ArchName> {
        match name {
            "convnet_a" => Some(ArchName::ConvnetA),
            "convnet_b" => Some(ArchName::ConvnetB),
            "convnet_c" => Some(ArchName::ConvnetC),
            "convnet_d" => Some(ArchName::ConvnetD),
            _ => None,
        }
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchName::ConvnetA => "convnet_a",
            ArchName::ConvnetB => "convnet_b",
            ArchName::ConvnetC => "convnet_c",
            ArchName::ConvnetD => "convnet_d",
        };
        f.write_str(s)
    }
}

/// Architecture-level layer descriptor (no parameters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        out_features: usize,
    },
}

/// A layer descriptor together with its parameter tensors
/// (conv and linear layers carry `[weight, bias]`; the rest none).
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Tensor>,
}

/// Activation shape as it flows through the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat { features: usize },
}

/// A layered classifier with a split point.
#[derive(Debug, Clone)]
pub struct Model {
    arch: ArchName,
    layers: Vec<Layer>,
    split_index: usize,
    num_classes: usize,
    input_shape: (usize, usize, usize),
}

fn arch_specs(arch: ArchName, num_classes: usize) -> (Vec<LayerSpec>, usize) {
    use LayerSpec::*;
    let linear = Linear {
        out_features: num_classes,
    };
    match arch {
        // Two 3x3 conv blocks, max pooling.
        ArchName::ConvnetA => (
            vec![
                Conv { out_channels: 12, kernel: 3, stride: 1, padding: 1 },
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                Conv { out_channels: 24, kernel: 3, stride: 1, padding: 1 },
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                Flatten,
                linear,
            ],
            3,
        ),
        // Three conv blocks, 5x5 front kernel, mixed avg/max pooling.
        ArchName::ConvnetB => (
            vec![
                Conv { out_channels: 10, kernel: 5, stride: 1, padding: 2 },
                Relu,
                AvgPool { kernel: 2, stride: 2 },
                Conv { out_channels: 20, kernel: 3, stride: 1, padding: 1 },
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                Conv { out_channels: 28, kernel: 3, stride: 1, padding: 1 },
                Relu,
                AvgPool { kernel: 2, stride: 2 },
                Flatten,
                linear,
            ],
            3,
        ),
        // Double conv before the first pool, 5x5 mid kernel.
        ArchName::ConvnetC => (
            vec![
                Conv { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
                Relu,
                Conv { out_channels: 14, kernel: 3, stride: 1, padding: 1 },
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                Conv { out_channels: 24, kernel: 5, stride: 1, padding: 2 },
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                Flatten,
                linear,
            ],
            5,
        ),
        // Wide 7x7 front kernel, shallow.
        ArchName::ConvnetD => (
            vec![
                Conv { out_channels: 14, kernel: 7, stride: 1, padding: 3 },
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                Conv { out_channels: 20, kernel: 3, stride: 1, padding: 1 },
                Relu,
                AvgPool { kernel: 2, stride: 2 },
                Flatten,
                linear,
            ],
            3,
        ),
    }
}

/// Walk the specs and compute the activation shape after each layer.
/// Index 0 is the input shape; index i+1 follows layer i.
fn shape_trace(
    specs: &[LayerSpec],
    input_shape: (usize, usize, usize),
) -> Result<Vec<ActShape>> {
    use crate::tensor::conv_output_extent as ext;
    let (c0, h0, w0) = input_shape;
    let mut shapes = vec![ActShape::Spatial { c: c0, h: h0, w: w0 }];
    for spec in specs {
        let next = match (spec, shapes.last().unwrap()) {
            (
                LayerSpec::Conv { out_channels, kernel, stride, padding },
                ActShape::Spatial { h, w, .. },
            ) => ActShape::Spatial {
                c: *out_channels,
                h: ext("conv2d", *h, *kernel, *stride, *padding)?,
                w: ext("conv2d", *w, *kernel, *stride, *padding)?,
            },
            (LayerSpec::Relu, s) => s.clone(),
            (LayerSpec::MaxPool { kernel, stride }, ActShape::Spatial { c, h, w })
            | (LayerSpec::AvgPool { kernel, stride }, ActShape::Spatial { c, h, w }) => {
                ActShape::Spatial {
                    c: *c,
                    h: ext("pool", *h, *kernel, *stride, 0)?,
                    w: ext("pool", *w, *kernel, *stride, 0)?,
                }
            }
            (LayerSpec::Flatten, ActShape::Spatial { c, h, w }) => {
                ActShape::Flat { features: c * h * w }
            }
            (LayerSpec::Linear { out_features }, ActShape::Flat { .. }) => {
                ActShape::Flat { features: *out_features }
            }
            (spec, shape) => {
                return Err(TensorError::BadArgument {
                    op: "model",
                    reason: format!("layer {spec:?} cannot follow activation {shape:?}"),
                })
            }
        };
        shapes.push(next);
    }
    Ok(shapes)
}

fn init_params(
    specs: &[LayerSpec],
    shapes: &[ActShape],
    rng: &mut ChaCha12Rng,
) -> Vec<Layer> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let params = match (spec, &shapes[i]) {
                (
                    LayerSpec::Conv { out_channels, kernel, .. },
                    ActShape::Spatial { c, .. },
                ) => {
                    let fan_in = c * kernel * kernel;
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let n = out_channels * c * kernel * kernel;
                    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                    vec![
                        Tensor::new(w, vec![*out_channels, *c, *kernel, *kernel]).unwrap(),
                        Tensor::zeros(vec![*out_channels]),
                    ]
                }
                (LayerSpec::Linear { out_features }, ActShape::Flat { features }) => {
                    let bound = (6.0 / *features as f64).sqrt();
                    let n = features * out_features;
                    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                    vec![
                        Tensor::new(w, vec![*features, *out_features]).unwrap(),
                        Tensor::zeros(vec![*out_features]),
                    ]
                }
                _ => Vec::new(),
            };
            Layer { spec: *spec, params }
        })
        .collect()
}

impl Model {
    /// Build one of the four architectures with seeded parameter init.
    pub fn build(
        arch: ArchName,
        num_classes: usize,
        input_shape: (usize, usize, usize),
        seed: u64,
    ) -> Result<Model> {
        if num_classes == 0 {
            return Err(TensorError::BadArgument {
                op: "build",
                reason: "num_classes must be positive".into(),
            });
        }
        let (specs, split_index) = arch_specs(arch, num_classes);
        let shapes = shape_trace(&specs, input_shape)?;
        let mut rng = crate::rng::stream_rng(seed, crate::rng::Stream::Training);
        let layers = init_params(&specs, &shapes, &mut rng);
        let model = Model {
            arch,
            layers,
            split_index,
            num_classes,
            input_shape,
        };
        model.validate_split(split_index)?;
        Ok(model)
    }

    pub(crate) fn from_parts(
        arch: ArchName,
        layers: Vec<Layer>,
        split_index: usize,
        num_classes: usize,
        input_shape: (usize, usize, usize),
    ) -> Result<Model> {
        let model = Model {
            arch,
            layers,
            split_index,
            num_classes,
            input_shape,
        };
        model.validate_split(split_index)?;
        Ok(model)
    }

    pub fn arch(&self) -> ArchName {
        self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        let (c, h, w) = self.input_shape;
        c * h * w
    }

    /// Activation shapes along the network; entry 0 is the input.
    pub fn shape_trace(&self) -> Vec<ActShape> {
        let specs: Vec<LayerSpec> = self.layers.iter().map(|l| l.spec).collect();
        shape_trace(&specs, self.input_shape).expect("validated at construction")
    }

    /// Channel count of the activation entering the split point.
    pub fn split_channels(&self) -> usize {
        match self.shape_trace()[self.split_index] {
            ActShape::Spatial { c, .. } => c,
            ActShape::Flat { .. } => unreachable!("split activation validated 4-D"),
        }
    }

    fn validate_split(&self, idx: usize) -> Result<()> {
        if idx == 0 || idx >= self.layers.len() {
            return Err(TensorError::BadArgument {
                op: "split_index",
                reason: format!("split {idx} out of range (1..{})", self.layers.len()),
            });
        }
        match self.shape_trace()[idx] {
            ActShape::Spatial { c, h, w } if c >= 1 && h * w >= 2 => Ok(()),
            ref s => Err(TensorError::BadArgument {
                op: "split_index",
                reason: format!(
                    "activation at split {idx} is {s:?}; need 4-D with >= 2 spatial cells"
                ),
            }),
        }
    }

    /// Same weights, different split point (for the insertion-depth ablation).
    pub fn with_split_index(&self, idx: usize) -> Result<Model> {
        let mut m = self.clone();
        m.validate_split(idx)?;
        m.split_index = idx;
        Ok(m)
    }

    /// Split points that satisfy the 4-D / >= 2 spatial cells requirement.
    pub fn valid_split_indices(&self) -> Vec<usize> {
        (1..self.layers.len())
            .filter(|&i| self.validate_split(i).is_ok())
            .collect()
    }

    /// Register every parameter on the tape. `trainable` controls whether
    /// gradients are accumulated for them.
    pub fn register_params(&self, tape: &mut Tape, trainable: bool) -> Vec<Vec<TensorId>> {
        self.layers
            .iter()
            .map(|layer| {
                layer
                    .params
                    .iter()
                    .map(|p| {
                        let mut t = p.clone();
                        t.set_requires_grad(trainable);
                        tape.leaf(t)
                    })
                    .collect()
            })
            .collect()
    }

    /// Forward through `layers[range]` with pre-registered parameters.
    pub fn forward_registered(
        &self,
        tape: &mut Tape,
        param_ids: &[Vec<TensorId>],
        input: TensorId,
        range: Range<usize>,
    ) -> Result<TensorId> {
        let mut h = input;
        for (layer, ids) in self.layers[range.clone()].iter().zip(&param_ids[range]) {
            h = match layer.spec {
                LayerSpec::Conv { stride, padding, .. } => {
                    let conv = tape.conv2d(h, ids[0], stride, padding)?;
                    let n_bias = tape.value(ids[1]).len();
                    let ones = tape.constant(vec![1.0; n_bias], vec![n_bias])?;
                    tape.affine_per_channel(conv, ones, ids[1])?
                }
                LayerSpec::Relu => tape.relu(h)?,
                LayerSpec::MaxPool { kernel, stride } => tape.max_pool2d(h, kernel, stride)?,
                LayerSpec::AvgPool { kernel, stride } => tape.avg_pool2d(h, kernel, stride)?,
                LayerSpec::Flatten => tape.flatten(h)?,
                LayerSpec::Linear { .. } => {
                    let mm = tape.matmul(h, ids[0])?;
                    let n_bias = tape.value(ids[1]).len();
                    let ones = tape.constant(vec![1.0; n_bias], vec![n_bias])?;
                    tape.affine_per_channel(mm, ones, ids[1])?
                }
            };
        }
        Ok(h)
    }

    /// Forward through a layer range, registering parameters as constants.
    pub fn forward_range(
        &self,
        tape: &mut Tape,
        input: TensorId,
        range: Range<usize>,
    ) -> Result<TensorId> {
        let ids = self.register_params(tape, false);
        self.forward_registered(tape, &ids, input, range)
    }

    /// Full forward pass to logits.
    pub fn forward(&self, tape: &mut Tape, input: TensorId) -> Result<TensorId> {
        self.forward_range(tape, input, 0..self.layers.len())
    }

    /// Front part F1: layers before the split.
    pub fn forward_front(&self, tape: &mut Tape, input: TensorId) -> Result<TensorId> {
        self.forward_range(tape, input, 0..self.split_index)
    }

    /// Back part F2: layers from the split to the logits.
    pub fn forward_back(&self, tape: &mut Tape, activation: TensorId) -> Result<TensorId> {
        self.forward_range(tape, activation, self.split_index..self.layers.len())
    }

    /// Logits for a batch of flat images, on a throwaway tape.
    pub fn logits_batch(&self, images: &[&[f64]]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = batch_input(&mut tape, images, self.input_shape, false)?;
        let logits = self.forward(&mut tape, x)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// Predicted labels for a batch; ties break to the lowest class index.
    pub fn predict_batch(&self, images: &[&[f64]]) -> Result<Vec<usize>> {
        let logits = self.logits_batch(images)?;
        Ok(logits.chunks(self.num_classes).map(argmax).collect())
    }

    pub fn predict(&self, image: &[f64]) -> Result<usize> {
        Ok(self.predict_batch(&[image])?[0])
    }

    /// Mean cross-entropy of a batch.
    pub fn loss_batch(&self, images: &[&[f64]], labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let x = batch_input(&mut tape, images, self.input_shape, false)?;
        let logits = self.forward(&mut tape, x)?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        Ok(tape.value(loss).item())
    }

    pub fn loss(&self, image: &[f64], label: usize) -> Result<f64> {
        self.loss_batch(&[image], &[label])
    }
}

/// Lowest-index argmax.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Stack flat images into a (batch, c, h, w) tape leaf.
pub fn batch_input(
    tape: &mut Tape,
    images: &[&[f64]],
    (c, h, w): (usize, usize, usize),
    requires_grad: bool,
) -> Result<TensorId> {
    let per = c * h * w;
    let mut data = Vec::with_capacity(images.len() * per);
    for img in images {
        if img.len() != per {
            return Err(TensorError::BadShape {
                op: "batch_input",
                shape: vec![img.len()],
                reason: format!("image length must be {per}"),
            });
        }
        data.extend_from_slice(img);
    }
    let shape = vec![images.len(), c, h, w];
    if requires_grad {
        tape.variable(data, shape)
    } else {
        tape.constant(data, shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut ChaCha12Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn build_produces_batch_by_classes_logits() {
        let model = Model::build(ArchName::ConvnetA, 10, (3, 32, 32), 1).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let img = random_image(&mut rng, model.input_len());
        let logits = model.logits_batch(&[&img]).unwrap();
        assert_eq!(logits.len(), 10);
    }

    #[test]
    fn unknown_arch_name_is_rejected() {
        assert!(ArchName::parse("convnet_e").is_none());
        assert_eq!(ArchName::parse("convnet_c"), Some(ArchName::ConvnetC));
    }

    #[test]
    fn split_forward_equals_unsplit_forward_bit_identically() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for arch in ArchName::ALL {
            let model = Model::build(arch, 10, (3, 32, 32), 7).unwrap();
            for _ in 0..25 {
                let img = random_image(&mut rng, model.input_len());
                let direct = model.logits_batch(&[&img]).unwrap();

                let mut tape = Tape::new();
                let x = batch_input(&mut tape, &[&img], model.input_shape(), false).unwrap();
                let mid = model.forward_front(&mut tape, x).unwrap();
                let logits = model.forward_back(&mut tape, mid).unwrap();
                let split = tape.value(logits).data();

                assert!(direct
                    .iter()
                    .zip(split)
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn split_activation_is_spatial_with_cells() {
        for arch in ArchName::ALL {
            let model = Model::build(arch, 10, (3, 32, 32), 7).unwrap();
            match model.shape_trace()[model.split_index()] {
                ActShape::Spatial { c, h, w } => {
                    assert!(c >= 1 && h * w >= 2, "{arch}: bad split shape");
                }
                ActShape::Flat { .. } => panic!("{arch}: split activation is flat"),
            }
        }
    }

    #[test]
    fn split_index_bounds_are_enforced() {
        let model = Model::build(ArchName::ConvnetA, 10, (3, 32, 32), 7).unwrap();
        assert!(model.with_split_index(0).is_err());
        assert!(model.with_split_index(model.layers().len()).is_err());
        // Post-flatten boundary is not 4-D.
        assert!(model.with_split_index(7).is_err());
        assert!(model.with_split_index(5).is_ok());
    }

    #[test]
    fn uniform_logits_predict_class_zero() {
        assert_eq!(argmax(&[0.5; 10]), 0);
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
    }

    #[test]
    fn loss_is_nonnegative() {
        let model = Model::build(ArchName::ConvnetB, 10, (3, 32, 32), 9).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..5 {
            let img = random_image(&mut rng, model.input_len());
            let loss = model.loss(&img, rng.gen_range(0..10)).unwrap();
            assert!(loss >= 0.0);
        }
    }
}
