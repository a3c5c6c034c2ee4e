//! JSON-lines input sequences.
//!
//! Each non-blank line is one object with either `tokens` (vocabulary ids)
//! or `embeddings` (n×d word embeddings), plus optional `mask`, `label`,
//! `text`, `token_labels` and `special`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InputSequence, ModelConfig, TokenInput};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskBit {
    Bool(bool),
    Int(u8),
}

impl MaskBit {
    fn active(self) -> Option<bool> {
        match self {
            MaskBit::Bool(b) => Some(b),
            MaskBit::Int(0) => Some(false),
            MaskBit::Int(1) => Some(true),
            MaskBit::Int(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<MaskBit>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub special: Option<Vec<bool>>,
}

impl InputRecord {
    pub fn into_sequence<T: Scalar>(self, line: usize) -> Result<InputSequence<T>> {
        let bad = |message: String| Error::InputRecord { line, message };
        let tokens = match (self.tokens, self.embeddings) {
            (Some(ids), None) => TokenInput::Ids(ids),
            (None, Some(rows)) => {
                let width = rows.first().map(Vec::len).unwrap_or(0);
                if let Some(i) = rows.iter().position(|r| r.len() != width) {
                    return Err(bad(format!(
                        "ragged embeddings: row {i} has {} values, row 0 has {width}",
                        rows[i].len()
                    )));
                }
                let converted: Vec<Vec<T>> = rows
                    .iter()
                    .map(|r| r.iter().map(|&v| T::narrow(v)).collect())
                    .collect();
                TokenInput::Embeddings(Matrix::from_rows(&converted)?)
            }
            (Some(_), Some(_)) => return Err(bad("both `tokens` and `embeddings` given".into())),
            (None, None) => return Err(bad("one of `tokens` or `embeddings` is required".into())),
        };
        let n = match &tokens {
            TokenInput::Ids(ids) => ids.len(),
            TokenInput::Embeddings(m) => m.rows(),
        };
        let mask = match self.mask {
            None => vec![true; n],
            Some(bits) => bits
                .into_iter()
                .map(|b| b.active().ok_or_else(|| bad("mask entries must be 0/1 or booleans".into())))
                .collect::<Result<Vec<bool>>>()?,
        };
        Ok(InputSequence {
            tokens,
            mask,
            label: self.label,
            text: self.text,
            token_labels: self.token_labels,
            special: self.special,
        })
    }
}

/// Parses and validates every record against `config`.
pub fn parse_inputs<T: Scalar>(text: &str, config: &ModelConfig) -> Result<Vec<InputSequence<T>>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: InputRecord = serde_json::from_str(raw).map_err(|e| Error::InputRecord {
            line,
            message: e.to_string(),
        })?;
        let seq = record.into_sequence::<T>(line)?;
        seq.validate(config).map_err(|e| Error::AtLine {
            line,
            source: Box::new(e),
        })?;
        out.push(seq);
    }
    if out.is_empty() {
        return Err(Error::InputRecord {
            line: 0,
            message: "input file contains no records".into(),
        });
    }
    Ok(out)
}

pub fn load_inputs<T: Scalar>(path: &Path, config: &ModelConfig) -> Result<Vec<InputSequence<T>>> {
    parse_inputs(&fs::read_to_string(path)?, config)
}
