//! The dual-branch irradiance forecast network.
//!
//! A ResNet-style convolutional trunk reads the four-frame sky-image stack
//! (two exposures at t and t−2 min); a small dense branch reads the scalar
//! metadata vector; a fused head regresses normalized GHI at t+h.
//!
//! Trunk layout: a stride-2 stem convolution, then five stages of one
//! stride-2 downsampling convolution followed by a residual block (two
//! stride-1 convolutions with an identity skip, post-activation). The map
//! is then flattened and passed through two dense layers. All convolutions
//! are 3×3 with same-padding.

use crate::dataset::SkySample;
use crate::seed::{rng_for, standard_normal};
use crate::tensor::{Graph, NodeId, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Convolution kernel edge length used throughout the trunk.
pub const KERNEL_SIZE: usize = 3;
/// Frames per sample: short and long exposures at t and t−2 min.
pub const IMAGE_CHANNELS: usize = 4;
/// Scalar metadata entries per sample.
pub const METADATA_DIM: usize = 8;
/// Number of downsampling stages after the stem.
pub const STAGES: usize = 5;
/// Smallest frame size the fixed trunk can digest: every stride-2
/// convolution must see at least a 2×2 map.
pub const MIN_INPUT_SIZE: usize = 33;
/// Horizons at or below this many minutes default to the narrow network.
pub const SHORT_HORIZON_MAX_MIN: u32 = 4;

/// Model construction or inference failure.
#[derive(Debug, Error)]
pub enum ModelError {
    /// Configuration rejected before building anything.
    #[error("invalid network configuration: {details}")]
    InvalidConfig {
        /// What was wrong.
        details: String,
    },
    /// The trunk ran out of pixels: a stride-2 convolution would receive a
    /// map smaller than 2×2.
    #[error(
        "trunk degenerates at `{layer}`: it would receive a {size}x{size} map; \
         the smallest supported input is {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}"
    )]
    DegenerateTrunk {
        /// First convolution that cannot run.
        layer: String,
        /// Spatial size it would receive.
        size: usize,
    },
    /// The trunk's receptive field does not cover the input frame.
    #[error("receptive field {rf} px does not cover the {input_size} px input")]
    ReceptiveField {
        /// Receptive field of the last convolution.
        rf: usize,
        /// Configured frame size.
        input_size: usize,
    },
    /// A layer produced NaN or infinity.
    #[error("non-finite values leaving layer `{layer}`")]
    NonFiniteActivation {
        /// Layer whose pre-activation output went non-finite.
        layer: String,
    },
    /// forward_batch called with no samples.
    #[error("batch is empty")]
    EmptyBatch,
    /// A sample does not match the configured input geometry.
    #[error("sample tensor shape {got:?} does not match the expected {expected:?}")]
    SampleShape {
        /// Shape the network was built for.
        expected: Vec<usize>,
        /// Shape found in the batch.
        got: Vec<usize>,
    },
    /// Underlying tensor-engine failure.
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Network hyperparameters. Everything about the architecture is a pure
/// function of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Filters in every trunk convolution.
    pub filters_per_conv: usize,
    /// Input frame edge length S (frames are S×S).
    pub input_size: usize,
    /// Image channels per sample (exposures × timestamps).
    #[serde(default = "default_image_channels")]
    pub image_channels: usize,
    /// Metadata vector length.
    #[serde(default = "default_metadata_dim")]
    pub metadata_dim: usize,
    /// Dense widths after the flattened trunk.
    #[serde(default = "default_cnn_dense")]
    pub cnn_dense: [usize; 2],
    /// Dense widths of the metadata branch (equal, for the identity skip).
    #[serde(default = "default_ann_widths")]
    pub ann_widths: [usize; 2],
    /// Dense widths of the fused head before the output node.
    #[serde(default = "default_head_widths")]
    pub head_widths: [usize; 2],
    /// Forecast horizon this network is trained for, minutes.
    pub horizon_min: u32,
    /// Root seed for parameter initialization.
    #[serde(default)]
    pub init_seed: u64,
}

fn default_image_channels() -> usize {
    IMAGE_CHANNELS
}
fn default_metadata_dim() -> usize {
    METADATA_DIM
}
fn default_cnn_dense() -> [usize; 2] {
    [512, 64]
}
fn default_ann_widths() -> [usize; 2] {
    [16, 16]
}
fn default_head_widths() -> [usize; 2] {
    [64, 32]
}

impl NetworkConfig {
    /// Default configuration for a horizon: 32 filters, narrowed to 16 for
    /// horizons of at most [`SHORT_HORIZON_MAX_MIN`] minutes.
    pub fn for_horizon(horizon_min: u32, input_size: usize, init_seed: u64) -> Self {
        let filters = if horizon_min <= SHORT_HORIZON_MAX_MIN {
            16
        } else {
            32
        };
        NetworkConfig {
            filters_per_conv: filters,
            input_size,
            image_channels: default_image_channels(),
            metadata_dim: default_metadata_dim(),
            cnn_dense: default_cnn_dense(),
            ann_widths: default_ann_widths(),
            head_widths: default_head_widths(),
            horizon_min,
            init_seed,
        }
    }

    /// Validates field ranges; trunk geometry is checked at build time.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |details: String| Err(ModelError::InvalidConfig { details });
        if self.filters_per_conv == 0 {
            return fail("filters_per_conv must be positive".into());
        }
        if self.image_channels == 0 {
            return fail("image_channels must be positive".into());
        }
        if self.metadata_dim == 0 {
            return fail("metadata_dim must be positive".into());
        }
        if self.input_size == 0 {
            return fail("input_size must be positive".into());
        }
        for w in self
            .cnn_dense
            .iter()
            .chain(&self.ann_widths)
            .chain(&self.head_widths)
        {
            if *w == 0 {
                return fail("dense widths must be positive".into());
            }
        }
        if self.ann_widths[0] != self.ann_widths[1] {
            return fail(format!(
                "metadata branch widths must match for the identity skip, got {:?}",
                self.ann_widths
            ));
        }
        Ok(())
    }
}

/// Which branch a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Convolutional image branch.
    Cnn,
    /// Dense metadata branch.
    Ann,
    /// Fused regression head.
    Head,
}

/// Parameterized layer type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3×3 same-padded convolution.
    Conv {
        /// Spatial stride (1 or 2).
        stride: usize,
    },
    /// Fully connected layer.
    Dense,
}

/// One parameterized layer: a name, its branch, and where its weight and
/// bias tensors live in the network's parameter list.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    /// Stable dotted name, e.g. `cnn.stage1.down`.
    pub name: String,
    /// Owning branch.
    pub branch: Branch,
    /// Convolution or dense.
    pub kind: LayerKind,
    /// Index of the weight tensor in [`Network::params`].
    pub weight: usize,
    /// Index of the bias tensor in [`Network::params`].
    pub bias: usize,
}

/// A built network: immutable topology plus its parameter tensors.
///
/// Forward passes never mutate the network, so shared references may run
/// concurrently; parameter updates require exclusive access.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<LayerSpec>,
    params: Vec<Tensor>,
    spatial_trace: Vec<usize>,
}

/// A recorded forward pass: the op graph plus handles into it.
pub struct ForwardPass {
    /// The autodiff graph holding all activations.
    pub graph: Graph,
    /// Output node, shape `[n, 1]` (normalized GHI).
    pub output: NodeId,
    /// Leaf holding the image batch `[n, C, S, S]`.
    pub images: NodeId,
    /// Leaf holding the metadata batch `[n, M]`.
    pub metadata: NodeId,
    /// Parameter leaves, parallel to [`Network::params`].
    pub param_nodes: Vec<NodeId>,
    /// Named activation nodes in forward order: for each layer its raw
    /// linear output as `"<name>.pre"` and its propagated (post-ReLU,
    /// post-skip) output under the bare layer name.
    pub taps: Vec<(String, NodeId)>,
}

impl ForwardPass {
    /// Node of the named layer's post-activation output.
    pub fn tap(&self, name: &str) -> Option<NodeId> {
        self.taps
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
    }
}

/// Receptive field of a chain of same-padded 3×3 convolutions with the
/// given strides, via the standard recurrence
/// `rf += (k−1)·jump; jump *= stride`.
pub fn receptive_field_for_strides(strides: &[usize]) -> usize {
    let mut rf = 1usize;
    let mut jump = 1usize;
    for &stride in strides {
        rf += (KERNEL_SIZE - 1) * jump;
        jump *= stride;
    }
    rf
}

/// Spatial edge length after each stride-2 convolution of the trunk
/// (stem, then one per stage). Fails if any of them would receive a map
/// smaller than 2×2.
pub fn trunk_spatial_trace(input_size: usize) -> Result<Vec<usize>, ModelError> {
    let mut sizes = Vec::with_capacity(STAGES + 1);
    let mut s = input_size;
    for step in 0..=STAGES {
        let layer = if step == 0 {
            "cnn.stem".to_string()
        } else {
            format!("cnn.stage{step}.down")
        };
        if s < 2 {
            return Err(ModelError::DegenerateTrunk { layer, size: s });
        }
        s = s.div_ceil(2);
        sizes.push(s);
    }
    Ok(sizes)
}

/// Builds and He-initializes the network described by `config`.
pub fn build_network(config: &NetworkConfig) -> Result<Network, ModelError> {
    config.validate()?;
    let trace = trunk_spatial_trace(config.input_size)?;

    let f = config.filters_per_conv;
    // (name, branch, kind, weight shape) in forward order.
    let mut plan: Vec<(String, Branch, LayerKind, Vec<usize>)> = Vec::new();
    let conv = |c_in: usize| vec![f, c_in, KERNEL_SIZE, KERNEL_SIZE];
    plan.push((
        "cnn.stem".into(),
        Branch::Cnn,
        LayerKind::Conv { stride: 2 },
        conv(config.image_channels),
    ));
    for stage in 1..=STAGES {
        plan.push((
            format!("cnn.stage{stage}.down"),
            Branch::Cnn,
            LayerKind::Conv { stride: 2 },
            conv(f),
        ));
        for block in 1..=2 {
            plan.push((
                format!("cnn.stage{stage}.res{block}"),
                Branch::Cnn,
                LayerKind::Conv { stride: 1 },
                conv(f),
            ));
        }
    }

    let conv_strides: Vec<usize> = plan
        .iter()
        .filter_map(|(_, _, kind, _)| match kind {
            LayerKind::Conv { stride } => Some(*stride),
            LayerKind::Dense => None,
        })
        .collect();
    let rf = receptive_field_for_strides(&conv_strides);
    if rf < config.input_size {
        return Err(ModelError::ReceptiveField {
            rf,
            input_size: config.input_size,
        });
    }

    let final_edge = *trace.last().expect("trace is non-empty");
    let flatten_dim = final_edge * final_edge * f;
    let dense_plan = [
        ("cnn.fc1", Branch::Cnn, flatten_dim, config.cnn_dense[0]),
        ("cnn.fc2", Branch::Cnn, config.cnn_dense[0], config.cnn_dense[1]),
        ("ann.fc1", Branch::Ann, config.metadata_dim, config.ann_widths[0]),
        ("ann.fc2", Branch::Ann, config.ann_widths[0], config.ann_widths[1]),
        (
            "head.fc1",
            Branch::Head,
            config.cnn_dense[1] + config.ann_widths[1],
            config.head_widths[0],
        ),
        ("head.fc2", Branch::Head, config.head_widths[0], config.head_widths[1]),
        ("head.out", Branch::Head, config.head_widths[1], 1),
    ];
    for (name, branch, d_in, d_out) in dense_plan {
        plan.push((name.into(), branch, LayerKind::Dense, vec![d_out, d_in]));
    }

    let mut layers = Vec::with_capacity(plan.len());
    let mut params = Vec::with_capacity(plan.len() * 2);
    for (name, branch, kind, weight_shape) in plan {
        let fan_in: usize = weight_shape[1..].iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        let mut rng = rng_for(config.init_seed, &format!("init.{name}.weight"));
        let weight_data: Vec<f32> = (0..weight_shape.iter().product::<usize>())
            .map(|_| (standard_normal(&mut rng) * std) as f32)
            .collect();
        let weight = Tensor::from_vec(weight_shape.clone(), weight_data)
            .expect("planned weight shape is consistent")
            .with_grad();
        let bias_len = match kind {
            LayerKind::Conv { .. } => weight_shape[0],
            LayerKind::Dense => weight_shape[0],
        };
        let bias = Tensor::zeros(vec![bias_len]).with_grad();

        let weight_idx = params.len();
        params.push(weight);
        let bias_idx = params.len();
        params.push(bias);
        layers.push(LayerSpec {
            name,
            branch,
            kind,
            weight: weight_idx,
            bias: bias_idx,
        });
    }

    Ok(Network {
        config: config.clone(),
        layers,
        params,
        spatial_trace: trace,
    })
}

impl Network {
    /// The configuration the network was built from.
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Layer descriptions in forward order.
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Parameter tensors (weight, bias alternating, in layer order).
    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access for optimizers and checkpoint loading.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Spatial edge length after each stride-2 trunk convolution.
    pub fn spatial_trace(&self) -> &[usize] {
        &self.spatial_trace
    }

    /// Length of the flattened trunk output.
    pub fn flatten_dim(&self) -> usize {
        let edge = *self.spatial_trace.last().expect("trace is non-empty");
        edge * edge * self.config.filters_per_conv
    }

    /// Receptive field of the last trunk convolution, in input pixels.
    pub fn receptive_field(&self) -> usize {
        let strides: Vec<usize> = self
            .layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Conv { stride } => Some(stride),
                LayerKind::Dense => None,
            })
            .collect();
        receptive_field_for_strides(&strides)
    }

    /// Records a full forward pass over explicit input tensors.
    ///
    /// `images` must be `[n, C, S, S]` and `metadata` `[n, M]` for the
    /// configured C, S, M. Set `requires_grad` on the inputs beforehand to
    /// obtain input gradients (used by the filter-visualization tools).
    pub fn forward_graph(&self, images: Tensor, metadata: Tensor) -> Result<ForwardPass, ModelError> {
        let c = self.config.image_channels;
        let s = self.config.input_size;
        let m = self.config.metadata_dim;
        if images.shape().len() != 4 || images.shape()[1..] != [c, s, s] {
            return Err(ModelError::SampleShape {
                expected: vec![images.shape().first().copied().unwrap_or(0), c, s, s],
                got: images.shape().to_vec(),
            });
        }
        let n = images.shape()[0];
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if metadata.shape() != [n, m] {
            return Err(ModelError::SampleShape {
                expected: vec![n, m],
                got: metadata.shape().to_vec(),
            });
        }

        let mut graph = Graph::new();
        let images_node = graph.leaf(images);
        let metadata_node = graph.leaf(metadata);
        let param_nodes: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| graph.leaf(p.clone()))
            .collect();

        let mut cursor = 0usize;
        let mut taps: Vec<(String, NodeId)> = Vec::with_capacity(self.layers.len());

        // Applies the next planned layer to `x`, returning the raw linear
        // output after verifying it is finite. That raw output is tapped as
        // "<name>.pre" so tooling can reach responses the nonlinearity (or
        // a residual add) would mask.
        let mut linear = |graph: &mut Graph,
                          taps: &mut Vec<(String, NodeId)>,
                          x: NodeId,
                          expect: &str|
         -> Result<NodeId, ModelError> {
            let layer = &self.layers[cursor];
            debug_assert_eq!(layer.name, expect, "layer order drifted from the build plan");
            cursor += 1;
            let w = param_nodes[layer.weight];
            let b = param_nodes[layer.bias];
            let out = match layer.kind {
                LayerKind::Conv { stride } => graph.conv2d(x, w, b, stride)?,
                LayerKind::Dense => graph.dense(x, w, b)?,
            };
            if !graph.value(out)?.is_finite() {
                return Err(ModelError::NonFiniteActivation {
                    layer: layer.name.clone(),
                });
            }
            taps.push((format!("{}.pre", layer.name), out));
            Ok(out)
        };

        // --- Convolutional trunk ---
        let stem = linear(&mut graph, &mut taps, images_node, "cnn.stem")?;
        let mut x = graph.relu(stem)?;
        taps.push(("cnn.stem".into(), x));
        for stage in 1..=STAGES {
            let down = linear(&mut graph, &mut taps, x, &format!("cnn.stage{stage}.down"))?;
            let down_act = graph.relu(down)?;
            taps.push((format!("cnn.stage{stage}.down"), down_act));

            let res1 = linear(&mut graph, &mut taps, down_act, &format!("cnn.stage{stage}.res1"))?;
            let res1_act = graph.relu(res1)?;
            taps.push((format!("cnn.stage{stage}.res1"), res1_act));

            let res2 = linear(&mut graph, &mut taps, res1_act, &format!("cnn.stage{stage}.res2"))?;
            let sum = graph.add(res2, down_act)?;
            x = graph.relu(sum)?;
            taps.push((format!("cnn.stage{stage}.res2"), x));
        }
        let flat = graph.flatten(x)?;
        let fc1 = linear(&mut graph, &mut taps, flat, "cnn.fc1")?;
        let fc1_act = graph.relu(fc1)?;
        taps.push(("cnn.fc1".into(), fc1_act));
        let fc2 = linear(&mut graph, &mut taps, fc1_act, "cnn.fc2")?;
        let cnn_out = graph.relu(fc2)?;
        taps.push(("cnn.fc2".into(), cnn_out));

        // --- Metadata branch with identity skip ---
        let a1 = linear(&mut graph, &mut taps, metadata_node, "ann.fc1")?;
        let a1_act = graph.relu(a1)?;
        taps.push(("ann.fc1".into(), a1_act));
        let a2 = linear(&mut graph, &mut taps, a1_act, "ann.fc2")?;
        let a_sum = graph.add(a2, a1_act)?;
        let ann_out = graph.relu(a_sum)?;
        taps.push(("ann.fc2".into(), ann_out));

        // --- Fused head ---
        let merged = graph.concat(cnn_out, ann_out, 1)?;
        let h1 = linear(&mut graph, &mut taps, merged, "head.fc1")?;
        let h1_act = graph.relu(h1)?;
        taps.push(("head.fc1".into(), h1_act));
        let h2 = linear(&mut graph, &mut taps, h1_act, "head.fc2")?;
        let h2_act = graph.relu(h2)?;
        taps.push(("head.fc2".into(), h2_act));
        let out = linear(&mut graph, &mut taps, h2_act, "head.out")?;
        taps.push(("head.out".into(), out));

        debug_assert_eq!(cursor, self.layers.len(), "unconsumed layers after forward");

        Ok(ForwardPass {
            graph,
            output: out,
            images: images_node,
            metadata: metadata_node,
            param_nodes,
            taps,
        })
    }

    /// Runs a batch of assembled samples through the network, returning the
    /// `[n, 1]` normalized-GHI predictions (multiply by 1000 for W/m²).
    pub fn forward_batch(&self, samples: &[SkySample]) -> Result<Tensor, ModelError> {
        let (images, metadata) = batch_inputs(samples, &self.config)?;
        let pass = self.forward_graph(images, metadata)?;
        Ok(pass.graph.value(pass.output)?.clone())
    }
}

/// Stacks samples into network input tensors `([n, C, S, S], [n, M])`.
pub fn batch_inputs(
    samples: &[SkySample],
    config: &NetworkConfig,
) -> Result<(Tensor, Tensor), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let c = config.image_channels;
    let s = config.input_size;
    let m = config.metadata_dim;
    let n = samples.len();
    let expected = vec![c, s, s];
    let mut images = Vec::with_capacity(n * c * s * s);
    let mut metadata = Vec::with_capacity(n * m);
    for sample in samples {
        if sample.image_stack.shape() != expected.as_slice() {
            return Err(ModelError::SampleShape {
                expected,
                got: sample.image_stack.shape().to_vec(),
            });
        }
        if sample.metadata.len() != m {
            return Err(ModelError::SampleShape {
                expected: vec![m],
                got: vec![sample.metadata.len()],
            });
        }
        images.extend_from_slice(sample.image_stack.data());
        metadata.extend_from_slice(&sample.metadata);
    }
    let images = Tensor::from_vec(vec![n, c, s, s], images).expect("sized image buffer");
    let metadata = Tensor::from_vec(vec![n, m], metadata).expect("sized metadata buffer");
    Ok((images, metadata))
}

/// Stacks sample targets into an `[n, 1]` tensor of normalized GHI.
pub fn batch_targets(samples: &[SkySample]) -> Result<Tensor, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let data: Vec<f32> = samples.iter().map(|s| s.target).collect();
    Ok(Tensor::from_vec(vec![samples.len(), 1], data).expect("sized target buffer"))
}
