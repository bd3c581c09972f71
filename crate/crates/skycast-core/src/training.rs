//! Minibatch training on unregularized mean squared error, with
//! deterministic shuffling, early stopping on validation MSE, and a
//! versioned binary checkpoint format.

use crate::dataset::SkySample;
use crate::model::{batch_inputs, batch_targets, build_network, ModelError, Network, NetworkConfig};
use crate::seed::rng_for;
use crate::tensor::{OptimizerState, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Checkpoint file magic: format name plus a two-digit version.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SKYCNN01";

/// Training failure.
#[derive(Debug, Error)]
pub enum TrainingError {
    /// Configuration rejected before training.
    #[error("invalid training configuration: {details}")]
    InvalidConfig {
        /// What was wrong.
        details: String,
    },
    /// A sample set was empty.
    #[error("{side} set is empty")]
    EmptySet {
        /// Which set.
        side: &'static str,
    },
    /// A sample's horizon does not match the network's.
    #[error("sample horizon {got} min does not match the network's {expected} min")]
    HorizonMismatch {
        /// Horizon the network was built for.
        expected: u32,
        /// Offending sample horizon.
        got: u32,
    },
    /// The loss went non-finite; parameters were restored to the best
    /// validation checkpoint seen so far.
    #[error("training diverged (non-finite loss) in epoch {epoch}; parameters restored to the best checkpoint")]
    Diverged {
        /// Epoch (1-based) in which divergence was detected.
        epoch: usize,
    },
    /// Filesystem failure.
    #[error("{path}: {source}")]
    Io {
        /// Path involved.
        path: PathBuf,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },
    /// A checkpoint file violates the format contract.
    #[error("bad checkpoint {path}: {details}")]
    CheckpointFormat {
        /// Offending file.
        path: PathBuf,
        /// What was wrong.
        details: String,
    },
    /// Model-level failure during forward passes.
    #[error(transparent)]
    Model(ModelError),
    /// Tensor-engine failure.
    #[error(transparent)]
    Tensor(TensorError),
}

impl From<ModelError> for TrainingError {
    fn from(e: ModelError) -> Self {
        TrainingError::Model(e)
    }
}
impl From<TensorError> for TrainingError {
    fn from(e: TensorError) -> Self {
        TrainingError::Tensor(e)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Adam learning rate.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Samples per optimizer step.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Upper bound on training epochs.
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Stop after this many epochs without validation improvement. A
    /// patience at or above `max_epochs` effectively disables early
    /// stopping.
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    /// Root seed for per-epoch shuffling.
    #[serde(default)]
    pub shuffle_seed: u64,
}

fn default_learning_rate() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    32
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            early_stop_patience: default_patience(),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Validates that every count and rate is positive and finite.
    pub fn validate(&self) -> Result<(), TrainingError> {
        let fail = |details: String| Err(TrainingError::InvalidConfig { details });
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be positive".into());
        }
        if self.early_stop_patience == 0 {
            return fail("early_stop_patience must be positive".into());
        }
        Ok(())
    }
}

/// One epoch's losses (normalized units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training MSE over the epoch's optimizer steps.
    pub train_mse: f64,
    /// Validation MSE with end-of-epoch parameters.
    pub val_mse: f64,
}

/// What happened during a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Per-epoch losses, in order.
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Validation MSE of the best epoch (the minimum over all epochs).
    pub best_val_mse: f64,
    /// Whether the patience rule ended training before max_epochs.
    pub stopped_early: bool,
    /// Wall-clock training time, seconds.
    pub wall_time_s: f64,
}

/// Mean squared error of the network over a sample set, in normalized
/// units, accumulated in f64. Batched to bound graph memory.
pub fn mse_over(
    network: &Network,
    samples: &[SkySample],
    batch_size: usize,
) -> Result<f64, TrainingError> {
    if samples.is_empty() {
        return Err(TrainingError::EmptySet { side: "evaluation" });
    }
    let mut sum_sq = 0.0_f64;
    for chunk in samples.chunks(batch_size.max(1)) {
        let preds = network.forward_batch(chunk)?;
        for (pred, sample) in preds.data().iter().zip(chunk) {
            let err = f64::from(*pred) - f64::from(sample.target);
            sum_sq += err * err;
        }
    }
    Ok(sum_sq / samples.len() as f64)
}

fn check_horizons(network: &Network, samples: &[SkySample]) -> Result<(), TrainingError> {
    let expected = network.config().horizon_min;
    for sample in samples {
        if sample.horizon_min != expected {
            return Err(TrainingError::HorizonMismatch {
                expected,
                got: sample.horizon_min,
            });
        }
    }
    Ok(())
}

fn snapshot(network: &Network) -> Vec<Tensor> {
    network.params().to_vec()
}

fn restore(network: &mut Network, params: &[Tensor]) {
    for (dst, src) in network.params_mut().iter_mut().zip(params) {
        dst.data_mut().copy_from_slice(src.data());
    }
}

/// Trains the network in place, minimizing plain MSE on normalized targets
/// (no regularization term). On return — including the divergence error —
/// the network holds the parameters of the best validation epoch.
///
/// Per-epoch sample order comes from `shuffle_seed` and the epoch number
/// only, so identical inputs and seeds reproduce the run exactly.
pub fn train_model(
    network: &mut Network,
    train: &[SkySample],
    val: &[SkySample],
    config: &TrainConfig,
) -> Result<TrainHistory, TrainingError> {
    train_model_with(network, train, val, config, |_| {})
}

/// [`train_model`] with a per-epoch observer, called after each epoch's
/// record is final. Lets callers stream progress without changing how
/// training behaves; the observer sees exactly what [`TrainHistory::epochs`]
/// will contain.
pub fn train_model_with(
    network: &mut Network,
    train: &[SkySample],
    val: &[SkySample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory, TrainingError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainingError::EmptySet { side: "training" });
    }
    if val.is_empty() {
        return Err(TrainingError::EmptySet { side: "validation" });
    }
    check_horizons(network, train)?;
    check_horizons(network, val)?;

    let start = Instant::now();
    let mut optimizer = OptimizerState::adam(config.learning_rate as f32);
    let mut best_params = snapshot(network);
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut since_improvement = 0usize;
    let mut epochs = Vec::new();

    let diverged = |network: &mut Network, best: &[Tensor], epoch: usize| {
        restore(network, best);
        TrainingError::Diverged { epoch }
    };

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = rng_for(config.shuffle_seed, &format!("train.epoch{epoch}.shuffle"));
        crate::seed::shuffle(&mut rng, &mut order);

        let mut sum_sq = 0.0_f64;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<SkySample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (images, metadata) = batch_inputs(&batch, network.config())?;
            let targets = batch_targets(&batch)?;

            let mut pass = match network.forward_graph(images, metadata) {
                Ok(pass) => pass,
                Err(ModelError::NonFiniteActivation { .. }) => {
                    return Err(diverged(network, &best_params, epoch));
                }
                Err(e) => return Err(e.into()),
            };
            let target_node = pass.graph.leaf(targets);
            let loss = pass.graph.mse(pass.output, target_node)?;
            let loss_value = f64::from(pass.graph.value(loss)?.data()[0]);
            if !loss_value.is_finite() {
                return Err(diverged(network, &best_params, epoch));
            }
            sum_sq += loss_value * batch.len() as f64;

            pass.graph.backward(loss)?;
            let mut grads: Vec<&[f32]> = Vec::with_capacity(pass.param_nodes.len());
            for &node in &pass.param_nodes {
                let grad = pass
                    .graph
                    .grad(node)?
                    .expect("parameter leaves always require gradients");
                grads.push(grad);
            }
            let mut params: Vec<&mut Tensor> = network.params_mut().iter_mut().collect();
            match optimizer.step(&mut params, &grads) {
                Ok(()) => {}
                Err(TensorError::NonFiniteGradient { .. }) => {
                    return Err(diverged(network, &best_params, epoch));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let train_mse = sum_sq / train.len() as f64;
        let val_mse = match mse_over(network, val, config.batch_size) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(TrainingError::Model(ModelError::NonFiniteActivation { .. })) => {
                return Err(diverged(network, &best_params, epoch));
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_mse,
            val_mse,
        };
        on_epoch(&record);
        epochs.push(record);

        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = snapshot(network);
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.early_stop_patience {
                restore(network, &best_params);
                return Ok(TrainHistory {
                    epochs,
                    best_epoch,
                    best_val_mse: best_val,
                    stopped_early: true,
                    wall_time_s: start.elapsed().as_secs_f64(),
                });
            }
        }
    }

    restore(network, &best_params);
    Ok(TrainHistory {
        epochs,
        best_epoch,
        best_val_mse: best_val,
        stopped_early: false,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: NetworkConfig,
    param_count: usize,
}

/// Serializes the network to `path`: an 8-byte magic (`SKYCNN01`), a
/// little-endian u32 JSON header length, the JSON header (network
/// configuration and scalar parameter count), then every parameter tensor's
/// data as little-endian f32 in layer order.
pub fn save_checkpoint(network: &Network, path: &Path) -> Result<(), TrainingError> {
    let header = CheckpointHeader {
        config: network.config().clone(),
        param_count: network.param_count(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes =
        Vec::with_capacity(12 + header_json.len() + network.param_count() * 4);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&u32::try_from(header_json.len()).expect("header fits u32").to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for param in network.params() {
        for &value in param.data() {
            bytes.extend_from_slice(&value.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|source| TrainingError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a checkpoint written by [`save_checkpoint`], rebuilding the
/// network topology from the stored configuration and restoring every
/// parameter bitwise.
pub fn load_checkpoint(path: &Path) -> Result<Network, TrainingError> {
    let bad = |details: String| TrainingError::CheckpointFormat {
        path: path.to_path_buf(),
        details,
    };
    let bytes = std::fs::read(path).map_err(|source| TrainingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 12 {
        return Err(bad(format!("file is {} bytes, too short for a header", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad(format!(
            "magic {:?} does not match {:?}",
            &bytes[..8],
            CHECKPOINT_MAGIC
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(bad(format!(
            "declared header length {header_len} exceeds remaining {} bytes",
            body.len()
        )));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])
        .map_err(|e| bad(format!("header is not valid JSON: {e}")))?;
    let mut network = build_network(&header.config)?;
    if network.param_count() != header.param_count {
        return Err(bad(format!(
            "header claims {} parameters but the configuration builds {}",
            header.param_count,
            network.param_count()
        )));
    }
    let payload = &body[header_len..];
    if payload.len() != header.param_count * 4 {
        return Err(bad(format!(
            "parameter payload is {} bytes, expected {}",
            payload.len(),
            header.param_count * 4
        )));
    }
    let mut offset = 0usize;
    for param in network.params_mut() {
        for value in param.data_mut() {
            *value = f32::from_le_bytes(payload[offset..offset + 4].try_into().expect("4 bytes"));
            offset += 4;
        }
    }
    Ok(network)
}
