use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{ModelConfig, NamedTensor, PredictorModel};
use super::tensor::Tensor;
use super::train::TrainConfig;
use crate::error::{field, invalid, Result};
use crate::sphere_layout::GraphSpec;

pub const CHECKPOINT_FORMAT: &str = "dsglight-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 over node count, k, axes and the normalized adjacency.
pub fn graph_hash(graph: &GraphSpec<f64>) -> String {
    let mut h = Sha256::new();
    h.update((graph.layout.n() as u64).to_le_bytes());
    h.update((graph.k as u64).to_le_bytes());
    for a in graph.layout.axes() {
        for v in a.to_array() {
            h.update(v.to_le_bytes());
        }
    }
    for v in &graph.normalized {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f64s(text: &str, what: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| field(what, format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(field(what, "byte length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Little-endian `f64` values, base64.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationRecord {
    pub input_seed: u64,
    pub output_shape: Vec<usize>,
    pub output: String,
}

/// Self-describing model snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model_config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub graph_hash: String,
    pub tensors: Vec<TensorRecord>,
    pub validation: ValidationRecord,
}

/// Deterministic pseudo-random input used to pin checkpoint outputs.
pub fn validation_image(config: &ModelConfig, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = config.input_height * config.input_width * 3;
    let data = (0..len).map(|_| rng.gen::<f64>()).collect();
    Tensor::new(vec![config.input_height, config.input_width, 3], data).expect("positive dims")
}

impl Checkpoint {
    pub fn from_model(model: &PredictorModel, train_config: Option<&TrainConfig>) -> Result<Self> {
        let input_seed = model.seed() ^ 0x00dd_ba11;
        let out = model.model_forward(&validation_image(model.config(), input_seed))?;
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: model.seed(),
            model_config: model.config().clone(),
            train_config: train_config.cloned(),
            graph_hash: graph_hash(model.graph()),
            tensors: model
                .params()
                .iter()
                .map(|p| TensorRecord {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    data: encode_f64s(p.tensor.data()),
                })
                .collect(),
            validation: ValidationRecord {
                input_seed,
                output_shape: out.shape().to_vec(),
                output: encode_f64s(out.data()),
            },
        })
    }

    /// Rebuilds the model, refusing on graph mismatch or non-reproducing outputs.
    pub fn to_model(&self) -> Result<PredictorModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(field(
                "format",
                format!("unsupported checkpoint {} v{}", self.format, self.version),
            ));
        }
        let params = self
            .tensors
            .iter()
            .map(|r| {
                let data = decode_f64s(&r.data, &format!("tensors.{}", r.name))?;
                Ok(NamedTensor {
                    name: r.name.clone(),
                    tensor: Tensor::new(r.shape.clone(), data)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = PredictorModel::from_parts(self.model_config.clone(), params, self.seed)?;
        let hash = graph_hash(model.graph());
        if hash != self.graph_hash {
            return Err(field(
                "graph_hash",
                format!("stored {} but graph hashes to {hash}", self.graph_hash),
            ));
        }
        let expected = decode_f64s(&self.validation.output, "validation.output")?;
        let got = model.model_forward(&validation_image(model.config(), self.validation.input_seed))?;
        let same = got.shape() == self.validation.output_shape.as_slice()
            && got.data().len() == expected.len()
            && got
                .data()
                .iter()
                .zip(&expected)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(field("validation", "model outputs do not reproduce the stored values"));
        }
        Ok(model)
    }

    /// Fails unless the checkpoint was built for `graph`.
    pub fn require_graph(&self, graph: &GraphSpec<f64>) -> Result<()> {
        let h = graph_hash(graph);
        if h != self.graph_hash {
            return Err(field(
                "graph_hash",
                format!("checkpoint graph {} differs from requested {h}", self.graph_hash),
            ));
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| invalid(format!("checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
