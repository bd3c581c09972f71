//! Looking inside a trained network: per-filter activation maps, blank
//! (dead) filter detection over a probe batch, and gradient-ascent
//! synthesis of inputs that excite a chosen filter.

use crate::dataset::SkySample;
use crate::model::{batch_inputs, LayerKind, ModelError, Network};
use crate::plot::{save_gray_tiles, PlotError};
use crate::seed::{rng_for, uniform01};
use crate::tensor::{Tensor, TensorError};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Default variance threshold below which a filter counts as dead.
pub const DEFAULT_VARIANCE_EPS: f64 = 1e-6;
/// Default number of gradient-ascent steps.
pub const DEFAULT_ASCENT_STEPS: usize = 40;
/// Default gradient-ascent step size (applied to the RMS-normalized
/// gradient).
pub const DEFAULT_ASCENT_STEP_SIZE: f32 = 1.0;

/// Introspection failure.
#[derive(Debug, Error)]
pub enum IntrospectionError {
    /// No layer by that name.
    #[error("unknown layer `{name}`")]
    UnknownLayer {
        /// The requested name.
        name: String,
    },
    /// The operation only makes sense on a convolutional layer.
    #[error("layer `{name}` is not convolutional")]
    NotConvolutional {
        /// The requested name.
        name: String,
    },
    /// Filter index beyond the layer's filter count.
    #[error("layer `{layer}` has {count} filters, no index {filter}")]
    FilterOutOfRange {
        /// The layer.
        layer: String,
        /// The requested filter.
        filter: usize,
        /// How many filters exist.
        count: usize,
    },
    /// The probe batch was empty.
    #[error("probe batch is empty")]
    EmptyProbe,
    /// Metadata vector of the wrong length.
    #[error("frozen metadata has {got} entries, the network expects {expected}")]
    MetadataLength {
        /// Configured metadata width.
        expected: usize,
        /// Supplied width.
        got: usize,
    },
    /// Forward/backward failure.
    #[error(transparent)]
    Model(ModelError),
    /// Tensor-level failure.
    #[error(transparent)]
    Tensor(TensorError),
    /// Image emission failure.
    #[error(transparent)]
    Plot(PlotError),
    /// Filesystem failure.
    #[error("{path}: {source}")]
    Io {
        /// Path being written.
        path: PathBuf,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },
}

impl From<ModelError> for IntrospectionError {
    fn from(e: ModelError) -> Self {
        IntrospectionError::Model(e)
    }
}
impl From<TensorError> for IntrospectionError {
    fn from(e: TensorError) -> Self {
        IntrospectionError::Tensor(e)
    }
}
impl From<PlotError> for IntrospectionError {
    fn from(e: PlotError) -> Self {
        IntrospectionError::Plot(e)
    }
}

/// Checks that `name` is a convolutional layer and returns its filter
/// count (first axis of its weight tensor).
fn conv_filter_count(network: &Network, name: &str) -> Result<usize, IntrospectionError> {
    let layer = network
        .layers()
        .iter()
        .find(|l| l.name == name)
        .ok_or_else(|| IntrospectionError::UnknownLayer {
            name: name.to_string(),
        })?;
    match layer.kind {
        LayerKind::Conv { .. } => Ok(network.params()[layer.weight].shape()[0]),
        LayerKind::Dense => Err(IntrospectionError::NotConvolutional {
            name: name.to_string(),
        }),
    }
}

/// The activation maps one sample produces at one convolutional layer.
///
/// Maps hold the layer's propagated output (after its nonlinearity and,
/// for the second residual convolution, the skip addition) — exactly the
/// values the next layer consumes.
#[derive(Debug, Clone)]
pub struct ActivationGrid {
    /// Layer name.
    pub layer: String,
    /// Map height.
    pub map_h: usize,
    /// Map width.
    pub map_w: usize,
    /// One row-major map per filter, raw (un-normalized) values.
    pub maps: Vec<Vec<f32>>,
    /// Population variance of each map's values.
    pub variances: Vec<f64>,
}

impl ActivationGrid {
    /// Writes the maps as a tiled 8-bit grayscale PNG, each map min-max
    /// normalized on its own (a constant map renders mid-gray).
    pub fn save_png(&self, path: &Path) -> Result<(), IntrospectionError> {
        let columns = (self.maps.len() as f64).sqrt().ceil() as usize;
        save_gray_tiles(path, &self.maps, self.map_h, self.map_w, columns.max(1))?;
        Ok(())
    }
}

/// Conventional file name for an activation-grid export.
pub fn activation_grid_filename(layer: &str) -> String {
    format!("activations_L{layer}.png")
}

/// Conventional file name for a synthesized filter image.
pub fn filter_image_filename(layer: &str, filter: usize) -> String {
    format!("filter_L{layer}_F{filter}.png")
}

fn population_variance(sum: f64, sum_sq: f64, n: f64) -> f64 {
    (sum_sq / n - (sum / n).powi(2)).max(0.0)
}

/// Runs one sample through the network and returns the per-filter maps at
/// the named convolutional layer, taken from the same forward pass the
/// model itself uses (no separate truncated path).
pub fn activation_maps(
    network: &Network,
    sample: &SkySample,
    layer: &str,
) -> Result<ActivationGrid, IntrospectionError> {
    conv_filter_count(network, layer)?;
    let (images, metadata) = batch_inputs(std::slice::from_ref(sample), network.config())?;
    let pass = network.forward_graph(images, metadata)?;
    let node = pass
        .tap(layer)
        .expect("every convolutional layer has a propagated-output tap");
    let value = pass.graph.value(node)?;
    let shape = value.shape();
    debug_assert_eq!(shape.len(), 4);
    let (filters, map_h, map_w) = (shape[1], shape[2], shape[3]);
    let data = value.data();
    let mut maps = Vec::with_capacity(filters);
    let mut variances = Vec::with_capacity(filters);
    for f in 0..filters {
        let map = data[f * map_h * map_w..(f + 1) * map_h * map_w].to_vec();
        let (sum, sum_sq) = map
            .iter()
            .fold((0.0f64, 0.0f64), |(s, q), &v| (s + v as f64, q + (v as f64).powi(2)));
        variances.push(population_variance(sum, sum_sq, map.len() as f64));
        maps.push(map);
    }
    Ok(ActivationGrid {
        layer: layer.to_string(),
        map_h,
        map_w,
        maps,
        variances,
    })
}

/// Health record for one filter of a probed layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterHealth {
    /// Filter index within the layer.
    pub filter: usize,
    /// Population variance of the filter's propagated output over every
    /// pixel of every probe sample.
    pub variance: f64,
    /// Whether the variance falls below the report's threshold.
    pub dead: bool,
}

/// Dead-filter survey of one convolutional layer over a probe batch.
#[derive(Debug, Clone)]
pub struct DeadFilterReport {
    /// Layer name.
    pub layer: String,
    /// Threshold used for the `dead` flags.
    pub variance_eps: f64,
    /// One record per filter, in filter order.
    pub filters: Vec<FilterHealth>,
}

impl DeadFilterReport {
    /// Fraction of filters flagged dead.
    pub fn fraction_dead(&self) -> f64 {
        if self.filters.is_empty() {
            return 0.0;
        }
        self.filters.iter().filter(|f| f.dead).count() as f64 / self.filters.len() as f64
    }

    /// CSV rendering, header `layer,filter,variance,dead`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,filter,variance,dead\n");
        for f in &self.filters {
            out.push_str(&format!(
                "{},{},{:.6e},{}\n",
                self.layer, f.filter, f.variance, f.dead
            ));
        }
        out
    }

    /// Writes [`DeadFilterReport::to_csv`] to a file.
    pub fn save_csv(&self, path: &Path) -> Result<(), IntrospectionError> {
        std::fs::write(path, self.to_csv()).map_err(|source| IntrospectionError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Flags filters whose propagated output is (near-)constant across a probe
/// batch: variance below `variance_eps` (see [`DEFAULT_VARIANCE_EPS`]).
///
/// A filter that never fires — zero weights, or responses the ReLU clips
/// everywhere — produces a blank map on every input and shows up here.
pub fn dead_filter_report(
    network: &Network,
    probe: &[SkySample],
    layer: &str,
    variance_eps: f64,
) -> Result<DeadFilterReport, IntrospectionError> {
    let filters = conv_filter_count(network, layer)?;
    if probe.is_empty() {
        return Err(IntrospectionError::EmptyProbe);
    }
    let mut sums = vec![0.0f64; filters];
    let mut sum_sqs = vec![0.0f64; filters];
    let mut count = 0f64;
    for chunk in probe.chunks(32) {
        let (images, metadata) = batch_inputs(chunk, network.config())?;
        let pass = network.forward_graph(images, metadata)?;
        let node = pass
            .tap(layer)
            .expect("every convolutional layer has a propagated-output tap");
        let value = pass.graph.value(node)?;
        let shape = value.shape();
        let (n, map_px) = (shape[0], shape[2] * shape[3]);
        let data = value.data();
        for s in 0..n {
            for f in 0..filters {
                let base = (s * filters + f) * map_px;
                for &v in &data[base..base + map_px] {
                    sums[f] += v as f64;
                    sum_sqs[f] += (v as f64).powi(2);
                }
            }
        }
        count += (n * map_px) as f64;
    }
    let records = (0..filters)
        .map(|f| {
            let variance = population_variance(sums[f], sum_sqs[f], count);
            FilterHealth {
                filter: f,
                variance,
                dead: variance < variance_eps,
            }
        })
        .collect();
    Ok(DeadFilterReport {
        layer: layer.to_string(),
        variance_eps,
        filters: records,
    })
}

/// Settings for gradient-ascent filter visualization.
#[derive(Debug, Clone)]
pub struct AscentOptions {
    /// Number of ascent steps.
    pub steps: usize,
    /// Step size applied to the RMS-normalized gradient.
    pub step_size: f32,
    /// Seed for the initial noise image.
    pub seed: u64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            steps: DEFAULT_ASCENT_STEPS,
            step_size: DEFAULT_ASCENT_STEP_SIZE,
            seed: 0,
        }
    }
}

/// An input synthesized to excite one filter.
#[derive(Debug, Clone)]
pub struct FilterImage {
    /// Layer name.
    pub layer: String,
    /// Filter index.
    pub filter: usize,
    /// Synthesized input, `[C, S, S]`, values in `[0, 1]`.
    pub image: Tensor,
    /// Objective (mean filter response) at the initial noise image.
    pub initial_objective: f32,
    /// Objective after the final step.
    pub final_objective: f32,
    /// Objective before each step plus the final value
    /// (`steps + 1` entries; first is `initial_objective`, last is
    /// `final_objective`).
    pub objectives: Vec<f32>,
    /// Steps taken.
    pub steps: usize,
    /// True when the gradient was zero at every step — the filter never
    /// responded, and `image` is the untouched initial noise.
    pub degenerate: bool,
}

impl FilterImage {
    /// Writes the synthesized input as a 2×2 grid of grayscale tiles, one
    /// per channel, mapping [0, 1] directly to [0, 255].
    pub fn save_png(&self, path: &Path) -> Result<(), IntrospectionError> {
        let shape = self.image.shape();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let data = self.image.data();
        let channels: Vec<Vec<f32>> = (0..c)
            .map(|ch| data[ch * h * w..(ch + 1) * h * w].to_vec())
            .collect();
        save_anchored_tiles(path, &channels, h, w)
    }
}

/// Writes `[0,1]`-valued tiles in a 2-column grid with a fixed scale.
fn save_anchored_tiles(
    path: &Path,
    tiles: &[Vec<f32>],
    h: usize,
    w: usize,
) -> Result<(), IntrospectionError> {
    use image::{Rgb, RgbImage};
    let columns = 2usize;
    let gutter = 2usize;
    let rows = tiles.len().div_ceil(columns);
    let width = columns * w + (columns - 1) * gutter;
    let height = rows * h + (rows - 1) * gutter;
    let mut img = RgbImage::from_pixel(width as u32, height as u32, Rgb([40, 40, 40]));
    for (i, tile) in tiles.iter().enumerate() {
        let (ox, oy) = ((i % columns) * (w + gutter), (i / columns) * (h + gutter));
        for y in 0..h {
            for x in 0..w {
                let byte = (tile[y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel((ox + x) as u32, (oy + y) as u32, Rgb([byte, byte, byte]));
            }
        }
    }
    img.save(path).map_err(|e| {
        let source = match e {
            image::ImageError::IoError(io) => io,
            other => std::io::Error::other(other),
        };
        IntrospectionError::Io {
            path: path.to_path_buf(),
            source,
        }
    })
}

/// Synthesizes an input that maximizes the mean raw response of one filter
/// by gradient ascent on the pixels.
///
/// The image starts as uniform noise in [0.45, 0.55] over all channels;
/// each step adds `step_size · g / (RMS(g) + 1e-8)` where `g` is the
/// gradient of the mean response, then clamps to [0, 1]. The objective is
/// the filter's linear (pre-nonlinearity) map: from a flat gray start many
/// healthy filters sit entirely in the ReLU's silent region, where the
/// propagated output would give no ascent direction at all. `metadata` is
/// held fixed (dataset means, typically) so gradients flow only through
/// the pixels; its length must match the network's metadata width.
pub fn filter_visualization(
    network: &Network,
    layer: &str,
    filter: usize,
    metadata: &[f32],
    options: &AscentOptions,
) -> Result<FilterImage, IntrospectionError> {
    let count = conv_filter_count(network, layer)?;
    if filter >= count {
        return Err(IntrospectionError::FilterOutOfRange {
            layer: layer.to_string(),
            filter,
            count,
        });
    }
    let config = network.config();
    if metadata.len() != config.metadata_dim {
        return Err(IntrospectionError::MetadataLength {
            expected: config.metadata_dim,
            got: metadata.len(),
        });
    }
    let (c, s) = (config.image_channels, config.input_size);
    let mut rng = rng_for(options.seed, &format!("introspect.ascent.{layer}.{filter}"));
    let mut pixels: Vec<f32> = (0..c * s * s)
        .map(|_| 0.45 + 0.1 * uniform01(&mut rng) as f32)
        .collect();
    let metadata_tensor = Tensor::from_vec(vec![1, config.metadata_dim], metadata.to_vec())?;

    // One forward (+ optional backward) pass; returns the objective and,
    // when requested, the gradient of the objective w.r.t. the pixels.
    let evaluate = |pixels: &[f32],
                    want_grad: bool|
     -> Result<(f32, Option<Vec<f32>>), IntrospectionError> {
        let mut images = Tensor::from_vec(vec![1, c, s, s], pixels.to_vec())?;
        if want_grad {
            images = images.with_grad();
        }
        let mut pass = network.forward_graph(images, metadata_tensor.clone())?;
        let pre = pass
            .tap(&format!("{layer}.pre"))
            .expect("every layer has a raw-output tap");
        let map = pass.graph.narrow(pre, 1, filter, 1)?;
        let objective = pass.graph.mean(map)?;
        let value = pass.graph.value(objective)?.data()[0];
        if !want_grad {
            return Ok((value, None));
        }
        pass.graph.backward(objective)?;
        let grad = pass
            .graph
            .grad(pass.images)?
            .expect("images leaf was created with requires_grad")
            .to_vec();
        Ok((value, Some(grad)))
    };

    let mut objectives = Vec::with_capacity(options.steps + 1);
    // "Degenerate" means every attempted step saw a zero gradient; with no
    // steps there is no evidence either way.
    let mut degenerate = options.steps > 0;
    for _ in 0..options.steps {
        let (value, grad) = evaluate(&pixels, true)?;
        objectives.push(value);
        let grad = grad.expect("gradient requested");
        let rms = (grad.iter().map(|&g| (g as f64).powi(2)).sum::<f64>()
            / grad.len() as f64)
            .sqrt() as f32;
        if rms == 0.0 {
            continue;
        }
        degenerate = false;
        let scale = options.step_size / (rms + 1e-8);
        for (p, &g) in pixels.iter_mut().zip(&grad) {
            *p = (*p + scale * g).clamp(0.0, 1.0);
        }
    }
    let (final_objective, _) = evaluate(&pixels, false)?;
    objectives.push(final_objective);
    let initial_objective = objectives[0];

    Ok(FilterImage {
        layer: layer.to_string(),
        filter,
        image: Tensor::from_vec(vec![c, s, s], pixels)?,
        initial_objective,
        final_objective,
        objectives,
        steps: options.steps,
        degenerate,
    })
}
