//! Network descriptor files: a named, ordered list of layers in JSON.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::mapper::{LayerDescriptor, LayerPrecision, MapError};

/// ResNet-50 conv and fc layer shapes.
pub const RESNET50_JSON: &str = include_str!("../data/resnet50.json");

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{0}")]
    Structure(String),
    #[error("layer {index} ({name}): {message}")]
    Layer { index: usize, name: String, message: String },
    #[error("workload has no layers")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadFile {
    pub network: String,
    pub layers: Vec<LayerDescriptor>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkload {
    network: String,
    /// Applied to every layer that has no `precision` of its own.
    #[serde(default)]
    precision: LayerPrecision,
    layers: Vec<Value>,
}

fn layer_label(index: usize, v: &Value) -> String {
    match v.get("name").and_then(Value::as_str) {
        Some(n) => format!("`{n}`"),
        None => format!("#{index}"),
    }
}

impl WorkloadFile {
    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let raw: RawWorkload = serde_json::from_str(text).map_err(|e| {
            if e.is_syntax() || e.is_eof() {
                WorkloadError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
            } else {
                WorkloadError::Structure(e.to_string())
            }
        })?;
        if raw.layers.is_empty() {
            return Err(WorkloadError::Empty);
        }
        let default_precision = serde_json::to_value(raw.precision).expect("precision serializes");
        let mut layers = Vec::with_capacity(raw.layers.len());
        for (index, mut v) in raw.layers.into_iter().enumerate() {
            let name = layer_label(index, &v);
            let fail = |message: String| WorkloadError::Layer { index, name: name.clone(), message };
            if let Value::Object(map) = &mut v {
                map.entry("precision").or_insert_with(|| default_precision.clone());
            }
            let mut layer: LayerDescriptor = serde_json::from_value(v).map_err(|e| fail(e.to_string()))?;
            if layer.name.is_empty() {
                layer.name = format!("layer{index}");
            }
            match layer.validate() {
                Ok(()) => {}
                Err(MapError::Malformed { reason, .. }) => return Err(fail(reason)),
                Err(e) => return Err(fail(e.to_string())),
            }
            layers.push(layer);
        }
        Ok(WorkloadFile { network: raw.network, layers })
    }

    pub fn resnet50() -> Self {
        WorkloadFile::parse(RESNET50_JSON).expect("bundled workload parses")
    }
}
