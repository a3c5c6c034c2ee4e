//! Model directory format: `manifest.json` plus `tensors.bin`, a
//! concatenation of little-endian f32 tensors in row-major order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::model::{EncoderWeights, LayerNormWeights, LayerWeights, Linear, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into `tensors.bin`.
    pub offset: u64,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        self.numel() as u64 * 4
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenizerMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cls_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sep_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<TokenizerMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel<T> {
    pub model: Model<T>,
    pub tokenizer: Option<TokenizerMeta>,
}

/// Tensor names and shapes in canonical blob order.
fn tensor_layout<T: Scalar>(config: &ModelConfig, weights: &EncoderWeights<T>) -> Vec<(String, Vec<usize>)> {
    let d = config.hidden_size;
    let f = config.ffn_size;
    let mut out = vec![
        ("embeddings.word".to_string(), vec![config.vocab_size, d]),
        ("embeddings.position".to_string(), vec![config.max_sequence, d]),
    ];
    if let Some(tt) = &weights.token_type_embeddings {
        out.push(("embeddings.token_type".into(), vec![tt.rows(), d]));
    }
    out.push(("embeddings.ln.gamma".into(), vec![d]));
    out.push(("embeddings.ln.beta".into(), vec![d]));
    for l in 0..config.num_layers {
        for part in ["query", "key", "value", "output"] {
            out.push((format!("layers.{l}.attn.{part}.weight"), vec![d, d]));
            out.push((format!("layers.{l}.attn.{part}.bias"), vec![d]));
        }
        out.push((format!("layers.{l}.ln1.gamma"), vec![d]));
        out.push((format!("layers.{l}.ln1.beta"), vec![d]));
        out.push((format!("layers.{l}.ffn.in.weight"), vec![d, f]));
        out.push((format!("layers.{l}.ffn.in.bias"), vec![f]));
        out.push((format!("layers.{l}.ffn.out.weight"), vec![f, d]));
        out.push((format!("layers.{l}.ffn.out.bias"), vec![d]));
        out.push((format!("layers.{l}.ln2.gamma"), vec![d]));
        out.push((format!("layers.{l}.ln2.beta"), vec![d]));
    }
    if weights.pooler.is_some() {
        out.push(("pooler.weight".into(), vec![d, d]));
        out.push(("pooler.bias".into(), vec![d]));
    }
    out.push(("classifier.weight".into(), vec![d, config.num_classes]));
    out.push(("classifier.bias".into(), vec![config.num_classes]));
    out
}

fn flat_tensor<'a, T: Scalar>(weights: &'a EncoderWeights<T>, name: &str) -> &'a [T] {
    let parts: Vec<&str> = name.split('.').collect();
    let linear = |lin: &'a Linear<T>, kind: &str| -> &'a [T] {
        if kind == "weight" {
            lin.weight.as_slice()
        } else {
            &lin.bias
        }
    };
    let ln = |ln: &'a LayerNormWeights<T>, kind: &str| -> &'a [T] {
        if kind == "gamma" {
            &ln.gamma
        } else {
            &ln.beta
        }
    };
    match parts.as_slice() {
        ["embeddings", "word"] => weights.word_embeddings.as_slice(),
        ["embeddings", "position"] => weights.position_embeddings.as_slice(),
        ["embeddings", "token_type"] => weights
            .token_type_embeddings
            .as_ref()
            .map(|m| m.as_slice())
            .unwrap_or(&[]),
        ["embeddings", "ln", kind] => ln(&weights.embedding_ln, kind),
        ["layers", l, rest @ ..] => {
            let layer = &weights.layers[l.parse::<usize>().expect("canonical layer index")];
            match rest {
                ["attn", "query", k] => linear(&layer.query, k),
                ["attn", "key", k] => linear(&layer.key, k),
                ["attn", "value", k] => linear(&layer.value, k),
                ["attn", "output", k] => linear(&layer.output, k),
                ["ln1", k] => ln(&layer.ln1, k),
                ["ln2", k] => ln(&layer.ln2, k),
                ["ffn", "in", k] => linear(&layer.ffn_in, k),
                ["ffn", "out", k] => linear(&layer.ffn_out, k),
                _ => unreachable!("non-canonical tensor name {name}"),
            }
        }
        ["pooler", k] => weights.pooler.as_ref().map(|p| linear(p, k)).unwrap_or(&[]),
        ["classifier", k] => linear(&weights.classifier, k),
        _ => unreachable!("non-canonical tensor name {name}"),
    }
}

/// Writes `manifest.json` and `tensors.bin` into `dir`, creating it if needed.
pub fn save_model<T: Scalar>(dir: &Path, model: &Model<T>, tokenizer: Option<&TokenizerMeta>) -> Result<ModelManifest> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape) in tensor_layout(&model.config, &model.weights) {
        let data = flat_tensor(&model.weights, &name);
        tensors.push(TensorEntry {
            name,
            shape,
            dtype: "f32".into(),
            offset: blob.len() as u64,
        });
        for v in data {
            let x = v.to_f32().unwrap_or(f32::NAN);
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        tensors,
        tokenizer: tokenizer.cloned(),
    };
    fs::write(dir.join(TENSORS_FILE), &blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<ModelManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    // Check the version before the rest of the schema so old files get a clear error.
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Manifest("missing format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version.min(u32::MAX as u64) as u32,
            supported: FORMAT_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|e| Error::Manifest(e.to_string()))
}

struct Tensors<'a> {
    entries: HashMap<&'a str, (&'a TensorEntry, Vec<f32>)>,
}

impl<'a> Tensors<'a> {
    fn take(&mut self, name: &str, expected: &[usize]) -> Result<Vec<f32>> {
        let (entry, data) = self
            .entries
            .remove(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if entry.shape != expected {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: entry.shape.clone(),
            });
        }
        Ok(data)
    }

    fn matrix<T: Scalar>(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix<T>> {
        let data = self.take(name, &[rows, cols])?;
        Matrix::from_vec(rows, cols, data.into_iter().map(|v| T::narrow(v as f64)).collect())
    }

    fn vector<T: Scalar>(&mut self, name: &str, len: usize) -> Result<Vec<T>> {
        Ok(self.take(name, &[len])?.into_iter().map(|v| T::narrow(v as f64)).collect())
    }

    fn linear<T: Scalar>(&mut self, prefix: &str, inputs: usize, outputs: usize) -> Result<Linear<T>> {
        Ok(Linear {
            weight: self.matrix(&format!("{prefix}.weight"), inputs, outputs)?,
            bias: self.vector(&format!("{prefix}.bias"), outputs)?,
        })
    }

    fn ln<T: Scalar>(&mut self, prefix: &str, d: usize) -> Result<LayerNormWeights<T>> {
        Ok(LayerNormWeights {
            gamma: self.vector(&format!("{prefix}.gamma"), d)?,
            beta: self.vector(&format!("{prefix}.beta"), d)?,
        })
    }
}

/// Loads and validates a model directory.
pub fn load_model<T: Scalar>(dir: &Path) -> Result<LoadedModel<T>> {
    let manifest = read_manifest(dir)?;
    let config = manifest.config.clone();
    config.validate()?;
    let blob = fs::read(dir.join(TENSORS_FILE))?;

    let mut entries = HashMap::new();
    let mut cursor = 0u64;
    for entry in &manifest.tensors {
        if entry.dtype != "f32" {
            return Err(Error::UnsupportedDtype {
                name: entry.name.clone(),
                dtype: entry.dtype.clone(),
            });
        }
        if entry.offset < cursor {
            return Err(Error::OverlappingTensors {
                name: entry.name.clone(),
                offset: entry.offset,
            });
        }
        let end = entry.offset + entry.byte_len();
        if end > blob.len() as u64 {
            return Err(Error::TruncatedBlob {
                name: entry.name.clone(),
                needed: end,
                available: blob.len() as u64,
            });
        }
        let data: Vec<f32> = blob[entry.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if entries.insert(entry.name.as_str(), (entry, data)).is_some() {
            return Err(Error::DuplicateTensor {
                name: entry.name.clone(),
            });
        }
        cursor = end;
    }

    let d = config.hidden_size;
    let f = config.ffn_size;
    let mut t = Tensors { entries };
    let word_embeddings = t.matrix("embeddings.word", config.vocab_size, d)?;
    let position_embeddings = t.matrix("embeddings.position", config.max_sequence, d)?;
    let token_type_embeddings = match t.entries.get("embeddings.token_type") {
        Some((entry, _)) => {
            let rows = entry.shape.first().copied().unwrap_or(0).max(1);
            Some(t.matrix("embeddings.token_type", rows, d)?)
        }
        None => None,
    };
    let embedding_ln = t.ln("embeddings.ln", d)?;
    let mut layers = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        let p = format!("layers.{l}");
        layers.push(LayerWeights {
            query: t.linear(&format!("{p}.attn.query"), d, d)?,
            key: t.linear(&format!("{p}.attn.key"), d, d)?,
            value: t.linear(&format!("{p}.attn.value"), d, d)?,
            output: t.linear(&format!("{p}.attn.output"), d, d)?,
            ln1: t.ln(&format!("{p}.ln1"), d)?,
            ffn_in: t.linear(&format!("{p}.ffn.in"), d, f)?,
            ffn_out: t.linear(&format!("{p}.ffn.out"), f, d)?,
            ln2: t.ln(&format!("{p}.ln2"), d)?,
        });
    }
    let pooler = if t.entries.contains_key("pooler.weight") || t.entries.contains_key("pooler.bias") {
        Some(t.linear("pooler", d, d)?)
    } else {
        None
    };
    let classifier = t.linear("classifier", d, config.num_classes)?;

    if let Some(extra) = t.entries.keys().min() {
        return Err(Error::Manifest(format!("unknown tensor `{extra}`")));
    }

    let weights = EncoderWeights {
        word_embeddings,
        position_embeddings,
        token_type_embeddings,
        embedding_ln,
        layers,
        pooler,
        classifier,
    };
    Ok(LoadedModel {
        model: Model::new(config, weights)?,
        tokenizer: manifest.tokenizer,
    })
}
