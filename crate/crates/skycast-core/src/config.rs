//! Layered run configuration: built-in defaults, then a TOML file, then
//! command-line overrides. Unknown keys are rejected with a
//! nearest-key suggestion, the effective configuration is echoed to
//! `<out>/config.echo.json`, and one global seed fans out into labeled
//! sub-seeds for the split, initialization, shuffling, and synthesis.

use crate::clearsky::ClearSkyParams;
use crate::dataset::{validate_horizon, SplitKind, SplitSpec, SynthConfig};
use crate::evaluation::SweepConfig;
use crate::model::{NetworkConfig, MIN_INPUT_SIZE};
use crate::seed::derive_seed;
use crate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Configuration failure.
#[derive(Debug, Error)]
pub enum ConfigError {
    /// File could not be read or written.
    #[error("{path}: {source}")]
    Io {
        /// Offending path.
        path: PathBuf,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },
    /// TOML syntax error.
    #[error("{path}: {details}")]
    Parse {
        /// Offending file.
        path: PathBuf,
        /// Parser message.
        details: String,
    },
    /// Key not in the schema.
    #[error("unknown key `{key}`{}; valid keys: {valid}", suggestion.as_ref().map(|s| format!("; did you mean `{s}`?")).unwrap_or_default())]
    UnknownKey {
        /// Dotted path of the offending key.
        key: String,
        /// Closest valid key, if any is close enough.
        suggestion: Option<String>,
        /// Comma-separated valid keys at that position.
        valid: String,
    },
    /// A value failed to deserialize into its field's type.
    #[error("invalid configuration value: {details}")]
    Value {
        /// Deserializer message (names the field).
        details: String,
    },
    /// A well-formed value violates a field invariant.
    #[error("invalid `{field}`: {details}")]
    Invalid {
        /// Dotted field name.
        field: String,
        /// What is wrong.
        details: String,
    },
}

/// Network knobs exposed to configuration. Everything else about the
/// architecture is fixed by the model family; the filter count is the one
/// documented variation (halved automatically for the shortest horizons
/// when unset).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkOverrides {
    /// Fixed filters-per-convolution, or `None` for the horizon policy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
}

/// The complete, merged configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Global seed; every random choice derives from it.
    pub seed: u64,
    /// Output (run) directory.
    pub out: PathBuf,
    /// Archive root the dataset verbs read (and `synth` writes).
    pub archive: PathBuf,
    /// Forecast horizon, minutes.
    pub horizon_min: u32,
    /// Model input side length; archive frames are resized to this.
    pub image_size: usize,
    /// Site geometry and clear-sky model.
    pub site: ClearSkyParams,
    /// Train/validation split protocol.
    pub split: SplitSpec,
    /// Network overrides.
    pub network: NetworkOverrides,
    /// Optimization settings.
    pub training: TrainConfig,
    /// Synthetic-archive generator settings (the `synth` verb).
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            archive: PathBuf::from("data/synth"),
            horizon_min: 10,
            image_size: 64,
            site: ClearSkyParams::default(),
            split: SplitSpec::default(),
            network: NetworkOverrides::default(),
            training: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Split protocol selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    /// Random day-disjoint partition.
    DistinctDays,
    /// Morning training, afternoon validation.
    Afternoon,
}

/// Command-line overrides; `None` fields leave the file/default value.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    /// `--out DIR`
    pub out: Option<PathBuf>,
    /// `--seed N`
    pub seed: Option<u64>,
    /// `--horizon MIN`
    pub horizon_min: Option<u32>,
    /// `--split distinct-days|afternoon`
    pub split: Option<SplitChoice>,
    /// `--cutoff HH:MM` (afternoon split only), minutes after midnight.
    pub cutoff_local: Option<u32>,
    /// `--filters N`
    pub filters: Option<usize>,
    /// `--lr F`
    pub learning_rate: Option<f64>,
    /// `--epochs N`
    pub epochs: Option<usize>,
    /// `--archive PATH`
    pub archive: Option<PathBuf>,
}

const TOP_KEYS: &[&str] = &[
    "seed",
    "out",
    "archive",
    "horizon_min",
    "image_size",
    "site",
    "split",
    "network",
    "training",
    "synth",
];
const SITE_KEYS: &[&str] = &["lat_deg", "lon_deg", "elevation_m", "linke_turbidity", "model"];
const NETWORK_KEYS: &[&str] = &["filters"];
const TRAINING_KEYS: &[&str] = &[
    "learning_rate",
    "batch_size",
    "max_epochs",
    "early_stop_patience",
];
const SYNTH_KEYS: &[&str] = &[
    "days",
    "start_date",
    "image_size",
    "cadence_min",
    "clear_fraction",
    "broken_fraction",
    "overcast_fraction",
];

/// Levenshtein edit distance (classic dynamic program over bytes).
fn edit_distance(a: &str, b: &str) -> usize {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

fn unknown_key(path: &str, key: &str, valid: &[&str]) -> ConfigError {
    let dotted = if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    };
    let suggestion = valid
        .iter()
        .map(|v| (edit_distance(key, v), *v))
        .min()
        .filter(|&(d, _)| d <= 3)
        .map(|(_, v)| v.to_string());
    ConfigError::UnknownKey {
        key: dotted,
        suggestion,
        valid: valid.join(", "),
    }
}

fn check_keys(table: &toml::Table, path: &str, valid: &[&str]) -> Result<(), ConfigError> {
    for key in table.keys() {
        if !valid.contains(&key.as_str()) {
            return Err(unknown_key(path, key, valid));
        }
    }
    Ok(())
}

fn as_table<'v>(value: &'v toml::Value, field: &str) -> Result<&'v toml::Table, ConfigError> {
    value.as_table().ok_or_else(|| ConfigError::Invalid {
        field: field.to_string(),
        details: "expected a table".into(),
    })
}

/// Rejects keys outside the schema, with kind-aware checking of the
/// `[split]` table (each protocol accepts only its own parameter).
fn validate_file_tree(tree: &toml::Table) -> Result<(), ConfigError> {
    check_keys(tree, "", TOP_KEYS)?;
    for (section, keys) in [
        ("site", SITE_KEYS),
        ("network", NETWORK_KEYS),
        ("training", TRAINING_KEYS),
        ("synth", SYNTH_KEYS),
    ] {
        if let Some(value) = tree.get(section) {
            check_keys(as_table(value, section)?, section, keys)?;
        }
    }
    if let Some(value) = tree.get("split") {
        let table = as_table(value, "split")?;
        if table.is_empty() {
            return Ok(());
        }
        let kind = table
            .get("kind")
            .ok_or_else(|| ConfigError::Invalid {
                field: "split.kind".into(),
                details: "required when [split] is given".into(),
            })?
            .as_str()
            .ok_or_else(|| ConfigError::Invalid {
                field: "split.kind".into(),
                details: "expected a string".into(),
            })?;
        let allowed: &[&str] = match kind {
            "distinct_days" => &["kind", "train_ratio"],
            "afternoon_validation" => &["kind", "cutoff_local"],
            other => {
                return Err(ConfigError::Invalid {
                    field: "split.kind".into(),
                    details: format!(
                        "unknown kind `{other}`; valid kinds: distinct_days, afternoon_validation"
                    ),
                })
            }
        };
        check_keys(table, "split", allowed)?;
    }
    Ok(())
}

/// Deep merge: tables recurse, everything else is replaced by `over`.
fn merge_value(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `"HH:MM"` into minutes after midnight.
pub fn parse_hhmm(text: &str) -> Result<u32, ConfigError> {
    let invalid = || ConfigError::Invalid {
        field: "cutoff".into(),
        details: format!("`{text}` is not an HH:MM time"),
    };
    let (h, m) = text.split_once(':').ok_or_else(invalid)?;
    let h: u32 = h.parse().map_err(|_| invalid())?;
    let m: u32 = m.parse().map_err(|_| invalid())?;
    if h > 23 || m > 59 {
        return Err(invalid());
    }
    Ok(h * 60 + m)
}

fn apply_overrides(config: &mut RunConfig, over: &CliOverrides) -> Result<(), ConfigError> {
    if let Some(v) = over.seed {
        config.seed = v;
    }
    if let Some(v) = &over.out {
        config.out = v.clone();
    }
    if let Some(v) = &over.archive {
        config.archive = v.clone();
    }
    if let Some(v) = over.horizon_min {
        config.horizon_min = v;
    }
    if let Some(choice) = over.split {
        config.split.kind = match (choice, &config.split.kind) {
            (SplitChoice::DistinctDays, kind @ SplitKind::DistinctDays { .. }) => kind.clone(),
            (SplitChoice::DistinctDays, _) => SplitKind::DistinctDays { train_ratio: 0.8 },
            (SplitChoice::Afternoon, kind @ SplitKind::AfternoonValidation { .. }) => kind.clone(),
            (SplitChoice::Afternoon, _) => SplitKind::AfternoonValidation {
                cutoff_local: crate::dataset::DEFAULT_AFTERNOON_CUTOFF_MIN,
            },
        };
    }
    if let Some(cutoff) = over.cutoff_local {
        match &mut config.split.kind {
            SplitKind::AfternoonValidation { cutoff_local } => *cutoff_local = cutoff,
            SplitKind::DistinctDays { .. } => {
                return Err(ConfigError::Invalid {
                    field: "split".into(),
                    details: "--cutoff only applies to the afternoon split".into(),
                })
            }
        }
    }
    if let Some(v) = over.filters {
        config.network.filters = Some(v);
    }
    if let Some(v) = over.learning_rate {
        config.training.learning_rate = v;
    }
    if let Some(v) = over.epochs {
        config.training.max_epochs = v;
    }
    Ok(())
}

impl RunConfig {
    /// Validates every field against its module's invariants.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, details: String| ConfigError::Invalid {
            field: field.to_string(),
            details,
        };
        validate_horizon(self.horizon_min)
            .map_err(|e| invalid("horizon_min", e.to_string()))?;
        if self.image_size < MIN_INPUT_SIZE {
            return Err(invalid(
                "image_size",
                format!("{} is below the {MIN_INPUT_SIZE} px minimum", self.image_size),
            ));
        }
        self.site
            .validate()
            .map_err(|e| invalid("site", e.to_string()))?;
        match self.split.kind {
            SplitKind::DistinctDays { train_ratio } => {
                if !(train_ratio.is_finite() && 0.0 < train_ratio && train_ratio < 1.0) {
                    return Err(invalid(
                        "split.train_ratio",
                        format!("{train_ratio} is outside (0, 1)"),
                    ));
                }
            }
            SplitKind::AfternoonValidation { cutoff_local } => {
                if cutoff_local >= 24 * 60 {
                    return Err(invalid(
                        "split.cutoff_local",
                        format!("{cutoff_local} minutes is not a time of day"),
                    ));
                }
            }
        }
        if let Some(f) = self.network.filters {
            if f == 0 {
                return Err(invalid("network.filters", "must be at least 1".into()));
            }
        }
        self.training
            .validate()
            .map_err(|e| invalid("training", e.to_string()))?;
        self.synth
            .validate()
            .map_err(|e| invalid("synth", e.to_string()))?;
        Ok(())
    }

    /// The split specification with its sub-seed derived from the global
    /// seed.
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            kind: self.split.kind.clone(),
            seed: derive_seed(self.seed, "split"),
        }
    }

    /// Network configuration for `horizon_min`, honoring the filter
    /// override and deriving the initialization sub-seed.
    pub fn network_config(&self, horizon_min: u32) -> NetworkConfig {
        let init_seed = derive_seed(self.seed, &format!("init.h{horizon_min}"));
        let mut cfg = NetworkConfig::for_horizon(horizon_min, self.image_size, init_seed);
        if let Some(f) = self.network.filters {
            cfg.filters_per_conv = f;
        }
        cfg
    }

    /// Training configuration for `horizon_min` with the shuffle sub-seed
    /// derived from the global seed.
    pub fn train_config(&self, horizon_min: u32) -> TrainConfig {
        let mut cfg = self.training.clone();
        cfg.shuffle_seed = derive_seed(self.seed, &format!("shuffle.h{horizon_min}"));
        cfg
    }

    /// Sub-seed for the synthetic-archive generator.
    pub fn synth_seed(&self) -> u64 {
        derive_seed(self.seed, "synth")
    }

    /// Sub-seed for filter-visualization ascent noise.
    pub fn ascent_seed(&self) -> u64 {
        derive_seed(self.seed, "ascent")
    }

    /// Sweep settings bundling this configuration's site, split, and
    /// training sections (the sweep derives its own per-horizon seeds from
    /// the global seed).
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            image_size: self.image_size,
            site: self.site.clone(),
            split: self.split_spec(),
            train: self.training.clone(),
            seed: self.seed,
            filters: self.network.filters,
        }
    }
}

/// Loads the layered configuration: defaults, then `file` (if given),
/// then `overrides`; `SKYCAST_OUT` supplies the output root when neither
/// the file nor a flag names one. The result is fully validated.
pub fn load_config(
    file: Option<&Path>,
    overrides: &CliOverrides,
) -> Result<RunConfig, ConfigError> {
    let file_tree: toml::Table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                details: e.to_string(),
            })?
        }
        None => toml::Table::new(),
    };
    validate_file_tree(&file_tree)?;
    let file_set_out = file_tree.contains_key("out");

    let mut merged = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
    merge_value(&mut merged, toml::Value::Table(file_tree));
    let mut config: RunConfig = merged.try_into().map_err(|e: toml::de::Error| {
        ConfigError::Value {
            details: e.to_string(),
        }
    })?;

    if !file_set_out && overrides.out.is_none() {
        if let Ok(root) = std::env::var("SKYCAST_OUT") {
            if !root.is_empty() {
                config.out = PathBuf::from(root);
            }
        }
    }
    apply_overrides(&mut config, overrides)?;
    config.validate()?;
    Ok(config)
}

/// Serializes the effective configuration to `<out>/config.echo.json`,
/// creating the directory, and returns the echo path.
pub fn echo_config(config: &RunConfig, out_dir: &Path) -> Result<PathBuf, ConfigError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ConfigError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let path = out_dir.join("config.echo.json");
    let mut body = serde_json::to_string_pretty(config).expect("config serializes");
    body.push('\n');
    std::fs::write(&path, body).map_err(|source| ConfigError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
