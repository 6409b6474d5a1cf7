//! Run configuration: dataset paths plus the flat training keys, read from a
//! TOML file or recovered from a previous run's manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dmage_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Keys of the config file that name input files rather than training knobs.
const DATA_KEYS: [&str; 3] = ["edges", "features", "labels"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataPaths,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: RunConfig,
    /// SHA-256 of every input file, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub timings_secs: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> CliResult<Self> {
        let mut input_hashes = BTreeMap::new();
        let d = &config.data;
        for p in [Some(&d.edges), Some(&d.features), d.labels.as_ref()].into_iter().flatten() {
            input_hashes.insert(p.display().to_string(), file_sha256(p)?);
        }
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            input_hashes,
            outputs: BTreeMap::new(),
            timings_secs: BTreeMap::new(),
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        dmage_core::container::write_atomic(path, text.as_bytes())?;
        Ok(())
    }
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::data_io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn take_path(table: &mut toml::Table, key: &str, base: &Path) -> CliResult<Option<PathBuf>> {
    match table.remove(key) {
        None => Ok(None),
        Some(toml::Value::String(s)) => Ok(Some(resolve(base, PathBuf::from(s)))),
        Some(other) => Err(CliError::Config(format!("{key} must be a path string, got {other}"))),
    }
}

/// Reads a flat TOML config, layered over an optional preset. A JSON file is
/// taken to be a run manifest and its recorded configuration is reused.
pub fn load_run_config(path: &Path, preset: Option<&str>, seed: Option<u64>) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let is_manifest = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    let mut cfg = if is_manifest {
        if preset.is_some() {
            return Err(CliError::Config("--preset cannot be combined with a manifest".into()));
        }
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: not a run manifest: {e}", path.display())))?;
        m.config
    } else {
        parse_toml_config(&text, path, preset)?
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn parse_toml_config(text: &str, path: &Path, preset: Option<&str>) -> CliResult<RunConfig> {
    let mut file: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let edges = take_path(&mut file, DATA_KEYS[0], base)?;
    let features = take_path(&mut file, DATA_KEYS[1], base)?;
    let labels = take_path(&mut file, DATA_KEYS[2], base)?;
    let (Some(edges), Some(features)) = (edges, features) else {
        return Err(CliError::Config(format!(
            "{}: `edges` and `features` are required",
            path.display()
        )));
    };

    let start = match preset {
        Some(name) => TrainConfig::preset(name)?,
        None => TrainConfig::default(),
    };
    let mut merged = toml::Table::try_from(&start).expect("config serializes to a table");
    for (k, v) in file {
        merged.insert(k, v);
    }
    let train: TrainConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
    Ok(RunConfig {
        data: DataPaths { edges, features, labels },
        train,
    })
}
