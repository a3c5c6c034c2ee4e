//! Model configuration, weights and input sequences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, Matrix, DEFAULT_LN_EPSILON};

/// Non-linearity between the two FFN projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// tanh approximation of GELU.
    #[default]
    Gelu,
    /// Exact erf-based GELU, as used by most BERT checkpoints.
    GeluErf,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        let v = x.wide();
        let out = match self {
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh())
            }
            Activation::GeluErf => 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)),
            Activation::Relu => v.max(0.0),
        };
        T::narrow(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub head_size: usize,
    pub ffn_size: usize,
    #[serde(default = "default_epsilon")]
    pub ln_epsilon: f64,
    pub max_sequence: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn default_epsilon() -> f64 {
    DEFAULT_LN_EPSILON
}

impl ModelConfig {
    /// A small config with `head_size = hidden / heads`.
    pub fn tiny(num_layers: usize, hidden_size: usize, num_heads: usize) -> Self {
        Self {
            num_layers,
            hidden_size,
            num_heads,
            head_size: hidden_size / num_heads.max(1),
            ffn_size: 2 * hidden_size,
            ln_epsilon: DEFAULT_LN_EPSILON,
            max_sequence: 16,
            vocab_size: 32,
            num_classes: 2,
            activation: Activation::Gelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("head_size", self.head_size),
            ("ffn_size", self.ffn_size),
            ("max_sequence", self.max_sequence),
            ("vocab_size", self.vocab_size),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Manifest(format!("{name} must be at least 1")));
            }
        }
        if self.num_heads * self.head_size != self.hidden_size {
            return Err(Error::Manifest(format!(
                "num_heads ({}) x head_size ({}) != hidden_size ({})",
                self.num_heads, self.head_size, self.hidden_size
            )));
        }
        if !(self.ln_epsilon >= 0.0 && self.ln_epsilon.is_finite()) {
            return Err(Error::Manifest("ln_epsilon must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Affine map `x · weight + bias` with `weight` stored input-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(inputs, outputs),
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        matmul(x, &self.weight)?.add_row_vector(&self.bias)
    }

    fn random<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (3.0 / inputs as f64).sqrt();
        Self {
            weight: random_matrix(inputs, outputs, bound, rng),
            bias: random_vec(outputs, 0.1, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormWeights<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> LayerNormWeights<T> {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: vec![T::one(); d],
            beta: vec![T::zero(); d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    /// Head-mixing projection; rows `h*d_v..(h+1)*d_v` are head `h`'s slice.
    pub output: Linear<T>,
    pub ln1: LayerNormWeights<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub ln2: LayerNormWeights<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<T> {
    pub word_embeddings: Matrix<T>,
    pub position_embeddings: Matrix<T>,
    /// Reserved for two-segment inputs; row 0 is added when present.
    pub token_type_embeddings: Option<Matrix<T>>,
    pub embedding_ln: LayerNormWeights<T>,
    pub layers: Vec<LayerWeights<T>>,
    /// Optional `tanh(cls · W + b)` pooler applied before the classifier.
    pub pooler: Option<Linear<T>>,
    pub classifier: Linear<T>,
}

fn random_matrix<T: Scalar, R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Matrix<T> {
    let data = (0..rows * cols)
        .map(|_| T::narrow(rng.gen_range(-bound..bound)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches")
}

fn random_vec<T: Scalar, R: Rng>(len: usize, bound: f64, rng: &mut R) -> Vec<T> {
    (0..len).map(|_| T::narrow(rng.gen_range(-bound..bound))).collect()
}

fn random_ln<T: Scalar, R: Rng>(d: usize, rng: &mut R) -> LayerNormWeights<T> {
    LayerNormWeights {
        gamma: (0..d)
            .map(|_| T::narrow(1.0 + rng.gen_range(-0.3..0.3)))
            .collect(),
        beta: random_vec(d, 0.1, rng),
    }
}

impl<T: Scalar> EncoderWeights<T> {
    /// Uniformly initialized weights with every shape consistent with `config`.
    pub fn random<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let d = config.hidden_size;
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                query: Linear::random(d, d, rng),
                key: Linear::random(d, d, rng),
                value: Linear::random(d, d, rng),
                output: Linear::random(d, d, rng),
                ln1: random_ln(d, rng),
                ffn_in: Linear::random(d, config.ffn_size, rng),
                ffn_out: Linear::random(config.ffn_size, d, rng),
                ln2: random_ln(d, rng),
            })
            .collect();
        Self {
            word_embeddings: random_matrix(config.vocab_size, d, 1.0, rng),
            position_embeddings: random_matrix(config.max_sequence, d, 0.5, rng),
            token_type_embeddings: None,
            embedding_ln: random_ln(d, rng),
            layers,
            pooler: None,
            classifier: Linear::random(d, config.num_classes, rng),
        }
    }

    /// Checks every tensor shape against `config` and rejects all-zero LN scales.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let d = config.hidden_size;
        let f = config.ffn_size;
        check_matrix("embeddings.word", &self.word_embeddings, config.vocab_size, d)?;
        check_matrix(
            "embeddings.position",
            &self.position_embeddings,
            config.max_sequence,
            d,
        )?;
        if let Some(tt) = &self.token_type_embeddings {
            if tt.cols() != d || tt.rows() == 0 {
                return Err(shape_err("embeddings.token_type", &[tt.rows().max(1), d], tt));
            }
        }
        check_ln("embeddings.ln", &self.embedding_ln, d)?;
        if self.layers.len() != config.num_layers {
            return Err(Error::Manifest(format!(
                "expected {} layers, found {}",
                config.num_layers,
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{l}");
            check_linear(&format!("{p}.attn.query"), &layer.query, d, d)?;
            check_linear(&format!("{p}.attn.key"), &layer.key, d, d)?;
            check_linear(&format!("{p}.attn.value"), &layer.value, d, d)?;
            check_linear(&format!("{p}.attn.output"), &layer.output, d, d)?;
            check_ln(&format!("{p}.ln1"), &layer.ln1, d)?;
            check_linear(&format!("{p}.ffn.in"), &layer.ffn_in, d, f)?;
            check_linear(&format!("{p}.ffn.out"), &layer.ffn_out, f, d)?;
            check_ln(&format!("{p}.ln2"), &layer.ln2, d)?;
        }
        if let Some(pooler) = &self.pooler {
            check_linear("pooler", pooler, d, d)?;
        }
        check_linear("classifier", &self.classifier, d, config.num_classes)
    }
}

fn shape_err<T: Scalar>(name: &str, expected: &[usize], found: &Matrix<T>) -> Error {
    Error::ShapeMismatch {
        name: name.to_string(),
        expected: expected.to_vec(),
        found: vec![found.rows(), found.cols()],
    }
}

fn check_matrix<T: Scalar>(name: &str, m: &Matrix<T>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(shape_err(name, &[rows, cols], m));
    }
    Ok(())
}

fn check_vec<T>(name: &str, v: &[T], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::ShapeMismatch {
            name: name.to_string(),
            expected: vec![len],
            found: vec![v.len()],
        });
    }
    Ok(())
}

fn check_linear<T: Scalar>(name: &str, lin: &Linear<T>, inputs: usize, outputs: usize) -> Result<()> {
    check_matrix(&format!("{name}.weight"), &lin.weight, inputs, outputs)?;
    check_vec(&format!("{name}.bias"), &lin.bias, outputs)
}

fn check_ln<T: Scalar>(name: &str, ln: &LayerNormWeights<T>, d: usize) -> Result<()> {
    check_vec(&format!("{name}.gamma"), &ln.gamma, d)?;
    check_vec(&format!("{name}.beta"), &ln.beta, d)?;
    if ln.gamma.iter().all(|g| g.is_zero()) {
        return Err(Error::DegenerateGamma(format!("{name}.gamma")));
    }
    Ok(())
}

/// Token ids looked up in the embedding table, or word embeddings supplied
/// directly (position embeddings and the embedding LN are still applied).
#[derive(Debug, Clone, PartialEq)]
pub enum TokenInput<T> {
    Ids(Vec<usize>),
    Embeddings(Matrix<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence<T> {
    pub tokens: TokenInput<T>,
    /// `true` = real token; `false` = padding that receives no attention.
    pub mask: Vec<bool>,
    pub label: Option<usize>,
    pub text: Option<String>,
    pub token_labels: Option<Vec<String>>,
    /// Tokens such as `[CLS]`/`[SEP]` that evaluation may drop.
    pub special: Option<Vec<bool>>,
}

impl<T: Scalar> InputSequence<T> {
    pub fn from_ids(ids: Vec<usize>) -> Self {
        let n = ids.len();
        Self::new(TokenInput::Ids(ids), n)
    }

    pub fn from_embeddings(embeddings: Matrix<T>) -> Self {
        let n = embeddings.rows();
        Self::new(TokenInput::Embeddings(embeddings), n)
    }

    fn new(tokens: TokenInput<T>, n: usize) -> Self {
        Self {
            tokens,
            mask: vec![true; n],
            label: None,
            text: None,
            token_labels: None,
            special: None,
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = mask;
        self
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        match &self.tokens {
            TokenInput::Ids(ids) => ids.len(),
            TokenInput::Embeddings(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::Contract("input sequence is empty".into()));
        }
        if n > config.max_sequence {
            return Err(Error::SequenceTooLong {
                len: n,
                max: config.max_sequence,
            });
        }
        if self.mask.len() != n {
            return Err(Error::Contract(format!(
                "mask length {} does not match sequence length {n}",
                self.mask.len()
            )));
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(Error::EmptyMask);
        }
        if !self.mask[0] {
            return Err(Error::Contract("position 0 (CLS) must not be masked".into()));
        }
        match &self.tokens {
            TokenInput::Ids(ids) => {
                if let Some((position, &id)) =
                    ids.iter().enumerate().find(|(_, &id)| id >= config.vocab_size)
                {
                    return Err(Error::OutOfVocabulary {
                        position,
                        id,
                        vocab: config.vocab_size,
                    });
                }
            }
            TokenInput::Embeddings(m) => {
                if m.cols() != config.hidden_size {
                    return Err(Error::Contract(format!(
                        "embedding width {} does not match hidden size {}",
                        m.cols(),
                        config.hidden_size
                    )));
                }
                if !m.is_finite() {
                    return Err(Error::Contract("embeddings contain non-finite values".into()));
                }
            }
        }
        if let Some(label) = self.label {
            if label >= config.num_classes {
                return Err(Error::Contract(format!(
                    "label {label} out of range for {} classes",
                    config.num_classes
                )));
            }
        }
        for (name, len) in [
            ("token_labels", self.token_labels.as_ref().map(Vec::len)),
            ("special", self.special.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != n {
                    return Err(Error::Contract(format!(
                        "{name} length {len} does not match sequence length {n}"
                    )));
                }
            }
        }
        Ok(())
    }
}
