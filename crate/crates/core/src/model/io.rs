//! JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DenseLayer, HiddenActivation, Mlp, ModelError, OutputActivation};
use crate::matrix::Matrix;

pub const FORMAT_TAG: &str = "otfuse-mlp";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("not an otfuse model file (format tag {0:?})")]
    UnknownFormat(Option<String>),
    #[error("unsupported model file version {found}, expected {expected}")]
    Version { expected: u64, found: String },
    #[error("inconsistent model shape: {0}")]
    Shape(#[from] ModelError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

/// On-disk representation of an [`Mlp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    format: String,
    version: u64,
    layer_sizes: Vec<usize>,
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
    layers: Vec<LayerFile>,
}

impl From<&Mlp> for ModelFile {
    fn from(model: &Mlp) -> Self {
        Self {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            layer_sizes: model.layer_sizes().to_vec(),
            hidden_activation: model.hidden_activation(),
            output_activation: model.output_activation(),
            layers: model
                .layers()
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights().to_rows(),
                    biases: l.biases().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for Mlp {
    type Error = ModelFileError;

    fn try_from(file: ModelFile) -> Result<Self, Self::Error> {
        let mut layers = Vec::with_capacity(file.layers.len());
        for (l, layer) in file.layers.into_iter().enumerate() {
            let weights = Matrix::from_rows(&layer.weights).map_err(|e| {
                ModelFileError::Shape(ModelError::WeightShape {
                    layer: l,
                    rows: file.layer_sizes.get(l + 1).copied().unwrap_or(0),
                    cols: file.layer_sizes.get(l).copied().unwrap_or(0),
                    found_rows: layer.weights.len(),
                    found_cols: e.found,
                })
            })?;
            // an empty row list carries no column count
            let weights = if layer.weights.is_empty() {
                Matrix::zeros(0, file.layer_sizes.get(l).copied().unwrap_or(0))
            } else {
                weights
            };
            layers.push(DenseLayer::new(weights, layer.biases));
        }
        Ok(Mlp::from_parts(
            file.layer_sizes,
            layers,
            file.hidden_activation,
            file.output_activation,
        )?)
    }
}

impl Mlp {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile::from(self)).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelFileError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelFileError::Malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| ModelFileError::Malformed("top level is not an object".into()))?;
        let format = obj.get("format").and_then(|f| f.as_str());
        if format != Some(FORMAT_TAG) {
            return Err(ModelFileError::UnknownFormat(format.map(str::to_string)));
        }
        match obj.get("version") {
            Some(v) if v.as_u64() == Some(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(ModelFileError::Version {
                    expected: FORMAT_VERSION,
                    found: v.to_string(),
                })
            }
            None => return Err(ModelFileError::Malformed("missing field `version`".into())),
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| ModelFileError::Malformed(e.to_string()))?;
        Mlp::try_from(file)
    }
}

pub fn save_model(model: &Mlp, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
    let path = path.as_ref();
    std::fs::write(path, model.to_json()).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Mlp, ModelFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Mlp::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{functional_distance, ProbeSet};

    fn model() -> Mlp {
        Mlp::glorot_seeded(
            &[5, 7, 3],
            HiddenActivation::Tanh,
            OutputActivation::Softmax,
            42,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.params()
                .iter()
                .map(|p| p.to_bits())
                .collect::<Vec<_>>(),
            m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(
            functional_distance(&m, &back, &ProbeSet::standard(5, 0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn schema_fields() {
        let v: serde_json::Value = serde_json::from_str(&model().to_json()).unwrap();
        assert_eq!(v["format"], "otfuse-mlp");
        assert_eq!(v["version"], 1);
        assert_eq!(v["layer_sizes"], serde_json::json!([5, 7, 3]));
        assert_eq!(v["hidden_activation"], "tanh");
        assert_eq!(v["output_activation"], "softmax");
        assert_eq!(v["layers"][0]["weights"].as_array().unwrap().len(), 7);
        assert_eq!(v["layers"][0]["weights"][0].as_array().unwrap().len(), 5);
    }

    #[test]
    fn distinct_errors() {
        let good: serde_json::Value = serde_json::from_str(&model().to_json()).unwrap();

        assert!(matches!(
            Mlp::from_json("{not json"),
            Err(ModelFileError::Malformed(_))
        ));

        let mut v = good.clone();
        v["version"] = serde_json::json!(2);
        assert!(matches!(
            Mlp::from_json(&v.to_string()),
            Err(ModelFileError::Version { .. })
        ));

        let mut v = good.clone();
        v["layer_sizes"] = serde_json::json!([5, 8, 3]);
        assert!(matches!(
            Mlp::from_json(&v.to_string()),
            Err(ModelFileError::Shape(ModelError::WeightShape {
                layer: 0,
                ..
            }))
        ));

        let mut v = good.clone();
        v["layers"][1]["weights"][0] = serde_json::json!([1.0]);
        assert!(matches!(
            Mlp::from_json(&v.to_string()),
            Err(ModelFileError::Shape(_))
        ));

        let mut v = good.clone();
        v["format"] = serde_json::json!("other");
        assert!(matches!(
            Mlp::from_json(&v.to_string()),
            Err(ModelFileError::UnknownFormat(_))
        ));

        let mut v = good;
        v["hidden_activation"] = serde_json::json!("sigmoid");
        assert!(matches!(
            Mlp::from_json(&v.to_string()),
            Err(ModelFileError::Malformed(_))
        ));
    }
}
