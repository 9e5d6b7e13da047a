//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `TEGRAPH\0` |
//! | 4 | format version (`u32`) |
//! | 4 | header length `h` in bytes (`u32`) |
//! | h | UTF-8 JSON header |
//! | 8·k | parameter values as `f64`, tensors in header order, row-major |

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dense, DurationBoundaries, ModelError, ModelKind, ModelParams, TrainConfig};
use crate::behavior::{ClassCentroids, DichotomizationThresholds};
use crate::features::{ActionVocabulary, FeatureNormalizer};
use crate::graph::TimeExpandedGraph;
use crate::ingest::WindowConfig;
use crate::tensor::Tensor2;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TEGRAPH\0";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Everything fitted on the training split besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub window: WindowConfig,
    pub vocabulary: ActionVocabulary,
    pub normalizer: FeatureNormalizer,
    pub thresholds: DichotomizationThresholds,
    pub centroids: ClassCentroids,
    pub boundaries: DurationBoundaries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub params: ModelParams,
    pub preprocessing: Preprocessing,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct TensorShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    kind: ModelKind,
    config_digest: String,
    seed: u64,
    config: TrainConfig,
    preprocessing: Preprocessing,
    tensors: Vec<TensorShape>,
}

/// SHA-256 of the JSON encoding of a training config, hex encoded.
pub fn config_digest(config: &TrainConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

fn format_err(msg: impl Into<String>) -> ModelError {
    ModelError::Format(msg.into())
}

fn take<'b>(bytes: &mut &'b [u8], n: usize) -> Result<&'b [u8], ModelError> {
    if bytes.len() < n {
        return Err(format_err("truncated checkpoint"));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32, ModelError> {
    Ok(u32::from_le_bytes(
        take(bytes, 4)?.try_into().expect("4 bytes"),
    ))
}

impl ModelCheckpoint {
    pub fn kind(&self) -> ModelKind {
        self.params.kind
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self
            .params
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    TensorShape {
                        name: format!("layer{i}.weight"),
                        rows: l.weight.rows(),
                        cols: l.weight.cols(),
                    },
                    TensorShape {
                        name: format!("layer{i}.bias"),
                        rows: l.bias.rows(),
                        cols: l.bias.cols(),
                    },
                ]
            })
            .collect();
        let header = Header {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind: self.params.kind,
            config_digest: config_digest(&self.config),
            seed: self.config.seed,
            config: self.config.clone(),
            preprocessing: self.preprocessing.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_SCHEMA_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, ModelError> {
        let bytes = &mut bytes;
        if take(bytes, 8)? != CHECKPOINT_MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = read_u32(bytes)?;
        if version != CHECKPOINT_SCHEMA_VERSION {
            return Err(ModelError::SchemaVersion {
                found: version,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let header_len = read_u32(bytes)? as usize;
        let header: Header = serde_json::from_slice(take(bytes, header_len)?)
            .map_err(|e| format_err(format!("header: {e}")))?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(ModelError::SchemaVersion {
                found: header.schema_version,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        if header.config_digest != config_digest(&header.config) {
            return Err(format_err("config digest does not match config"));
        }
        if header.tensors.len() % 2 != 0 || header.tensors.is_empty() {
            return Err(format_err("tensor table must list weight/bias pairs"));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for shape in &header.tensors {
            let raw = take(bytes, shape.rows * shape.cols * 8)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor2::from_vec(shape.rows, shape.cols, values)?);
        }
        if !bytes.is_empty() {
            return Err(format_err("trailing bytes after parameter blobs"));
        }
        let mut layers = Vec::with_capacity(tensors.len() / 2);
        let mut it = tensors.into_iter();
        while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
            if bias.rows() != 1 || bias.cols() != weight.cols() {
                return Err(format_err("bias shape does not match weight"));
            }
            if let Some(prev) = layers.last().map(|l: &Dense| l.weight.cols()) {
                if prev != weight.rows() {
                    return Err(format_err("layer widths do not chain"));
                }
            }
            layers.push(Dense { weight, bias });
        }
        let params = ModelParams {
            kind: header.kind,
            layers,
        };
        let expected = header.preprocessing.vocabulary.feature_width();
        if params.input_width() != expected {
            return Err(ModelError::DimensionMismatch {
                found: params.input_width(),
                expected,
            });
        }
        Ok(ModelCheckpoint {
            params,
            preprocessing: header.preprocessing,
            config: header.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        ModelCheckpoint::from_bytes(&std::fs::read(path)?)
    }

    /// Class probabilities of one graph.
    pub fn predict_graph(&self, graph: &TimeExpandedGraph) -> Result<[f64; 3], ModelError> {
        self.params
            .predict_graph(graph, &self.preprocessing.normalizer)
    }
}
