//! JSON run configuration shared by every CLI command.
//!
//! Unknown keys are rejected and every error names the offending path, e.g.
//! `train.batch_size` or `tables.rows[3].spec.ratio`. Table rows are partial
//! model specs merged over the top-level `model` section.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::architectures::ModelSpec;
use crate::cost::{CountingConvention, InputSpec};
use crate::error::{Error, Result};
use crate::tables::TableRow;
use crate::train::{SyntheticDatasetSpec, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTableRow {
    pub model: String,
    #[serde(default)]
    pub variant: String,
    #[serde(default)]
    pub components: Vec<String>,
    #[serde(default)]
    pub baseline: Option<usize>,
    #[serde(default)]
    pub spec: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesSection {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub rows: Vec<RawTableRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: u32,
    #[serde(default)]
    model: Value,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    data: SyntheticDatasetSpec,
    #[serde(default)]
    cost: CountingConvention,
    #[serde(default)]
    tables: Option<TablesSection>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub data: SyntheticDatasetSpec,
    pub cost: CountingConvention,
    pub title: String,
    pub rows: Vec<TableRow>,
}

fn join_path(prefix: &str, inner: &str) -> String {
    match (prefix.is_empty(), inner.is_empty() || inner == ".") {
        (_, true) => prefix.to_string(),
        (true, false) => inner.to_string(),
        (false, false) if inner.starts_with('[') => format!("{prefix}{inner}"),
        (false, false) => format!("{prefix}.{inner}"),
    }
}

fn decode<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| Error::Config {
        path: join_path(prefix, &e.path().to_string()),
        message: e.inner().to_string(),
    })
}

/// `overlay` written over `base`, recursing into objects.
fn merge(base: &Value, overlay: &Value) -> Value {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            let mut out = b.clone();
            for (k, v) in o {
                let merged = match b.get(k) {
                    Some(bv) => merge(bv, v),
                    None => v.clone(),
                };
                out.insert(k.clone(), merged);
            }
            Value::Object(out)
        }
        (_, Value::Null) => base.clone(),
        _ => overlay.clone(),
    }
}

fn model_spec(value: Value, prefix: &str) -> Result<ModelSpec> {
    let value = if value.is_null() { Value::Object(Default::default()) } else { value };
    let spec: ModelSpec = decode(value, prefix)?;
    spec.validate().map_err(|e| Error::Config {
        path: prefix.to_string(),
        message: e.to_string(),
    })?;
    Ok(spec)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config {
            path: String::new(),
            message: e.to_string(),
        })?;
        let raw: RawConfig = decode(value, "")?;
        if raw.version != CONFIG_VERSION {
            return Err(Error::Config {
                path: "version".into(),
                message: format!("unsupported version {}, expected {CONFIG_VERSION}", raw.version),
            });
        }
        raw.train.validate()?;
        raw.data.validate()?;
        let model = model_spec(raw.model.clone(), "model")?;
        let tables = raw.tables.unwrap_or_default();
        let rows = tables
            .rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let spec = model_spec(merge(&raw.model, &row.spec), &format!("tables.rows[{i}].spec"))?;
                Ok(TableRow {
                    model: row.model,
                    variant: row.variant,
                    components: row.components,
                    baseline: row.baseline,
                    spec,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            train: raw.train,
            data: raw.data,
            cost: raw.cost,
            title: tables.title,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The model trained by `train`: input geometry and class count come from
    /// the `data` section and dropout from the `train` section.
    pub fn training_spec(&self) -> Result<ModelSpec> {
        let spec = ModelSpec {
            input: InputSpec {
                frames: self.data.frames,
                height: self.data.height,
                width: self.data.width,
                channels: 1,
            },
            num_classes: self.data.num_classes,
            dropout: self.train.dropout,
            ..self.model.clone()
        };
        spec.validate().map_err(|e| Error::Config {
            path: "model".into(),
            message: e.to_string(),
        })?;
        Ok(spec)
    }

    /// Every section with its defaults filled in, as pretty JSON.
    pub fn defaults_json() -> String {
        let defaults = RunConfig::default();
        let doc = serde_json::json!({
            "version": CONFIG_VERSION,
            "model": defaults.model,
            "train": defaults.train,
            "data": defaults.data,
            "cost": defaults.cost,
            "tables": TablesSection::default(),
        });
        serde_json::to_string_pretty(&doc).expect("defaults serialize") + "\n"
    }
}
