//! Post-LN encoder forward pass with per-layer activation capture.
//!
//! Each layer computes
//! attention -> residual -> LN1 -> FFN -> residual -> LN2,
//! and [`LayerTrace`] records every intermediate the attribution methods read.

use crate::error::{Error, Result};
use crate::model::{EncoderWeights, InputSequence, LayerNormWeights, LayerWeights, ModelConfig, TokenInput};
use crate::scalar::Scalar;
use crate::tensor::{layer_norm_rows, matmul, softmax_in_place, vec_mat, Matrix};

/// Additive score applied to masked key positions before the softmax.
const MASK_PENALTY: f64 = -1e9;

/// Everything captured for one encoder layer, indexed by token position.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace<T> {
    pub layer_index: usize,
    pub mask: Vec<bool>,
    /// Layer input `x_i` (n×d).
    pub input_x: Matrix<T>,
    /// Per-head attention weights (H × n×n); masked columns are exactly 0.
    pub alpha: Vec<Matrix<T>>,
    /// Per-head transformed vectors `f^h(x_j) = v^h(x_j) W_O^h` (H × n×d).
    pub f_of_x: Vec<Matrix<T>>,
    /// Attention output bias `b_O`, kept apart from every token's contribution.
    pub attn_output_bias: Vec<T>,
    /// Attention output plus residual, before LN1.
    pub z_plus: Matrix<T>,
    pub s_z_plus: Vec<T>,
    /// LN1 output.
    pub z_tilde: Matrix<T>,
    /// `FFN(z̃_i)`.
    pub ffn_out: Matrix<T>,
    /// FFN output plus residual, before LN2.
    pub z_tilde_plus: Matrix<T>,
    pub s_z_tilde_plus: Vec<T>,
    /// Layer output.
    pub x_tilde: Matrix<T>,
    pub ln1: LayerNormWeights<T>,
    pub ln2: LayerNormWeights<T>,
    pub ln_epsilon: f64,
}

impl<T: Scalar> LayerTrace<T> {
    pub fn seq_len(&self) -> usize {
        self.input_x.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.input_x.cols()
    }

    pub fn num_heads(&self) -> usize {
        self.alpha.len()
    }
}

/// Dense n×n grid of d-dimensional vectors; `get(i, j)` is the vector from
/// input token `j` to output token `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Scalar> Contributions<T> {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            data: vec![T::zero(); n * n * d],
        }
    }

    pub fn seq_len(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> &[T] {
        let start = (i * self.n + j) * self.d;
        &self.data[start..start + self.d]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut [T] {
        let start = (i * self.n + j) * self.d;
        &mut self.data[start..start + self.d]
    }

    /// `Σ_j get(i, j)`, accumulated in f64.
    pub fn row_sum(&self, i: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        for j in 0..self.n {
            for (a, v) in acc.iter_mut().zip(self.get(i, j)) {
                *a += v.wide();
            }
        }
        acc
    }

    pub fn map_vectors(&self, mut f: impl FnMut(usize, usize, &[T]) -> Vec<T>) -> Self {
        let mut out = Self::zeros(self.n, self.d);
        for i in 0..self.n {
            for j in 0..self.n {
                let v = f(i, j, self.get(i, j));
                out.get_mut(i, j).copy_from_slice(&v);
            }
        }
        out
    }
}

/// `z_{i←j} = Σ_h α^h_{i,j} f^h(x_j)`.
pub fn per_head_contributions<T: Scalar>(trace: &LayerTrace<T>) -> Contributions<T> {
    let n = trace.seq_len();
    let d = trace.hidden_size();
    let mut out = Contributions::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let mut acc = vec![0.0f64; d];
            for (alpha, f) in trace.alpha.iter().zip(&trace.f_of_x) {
                let a = alpha[(i, j)].wide();
                if a == 0.0 {
                    continue;
                }
                for (s, v) in acc.iter_mut().zip(f.row(j)) {
                    *s += a * v.wide();
                }
            }
            for (o, s) in out.get_mut(i, j).iter_mut().zip(acc) {
                *o = T::narrow(s);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub logits: Vec<T>,
    pub traces: Vec<LayerTrace<T>>,
}

/// A validated configuration and weight set.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub weights: EncoderWeights<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, weights: EncoderWeights<T>) -> Result<Self> {
        config.validate()?;
        weights.validate(&config)?;
        Ok(Self { config, weights })
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    /// Runs the full encoder and classifier, capturing every layer.
    pub fn forward(&self, input: &InputSequence<T>) -> Result<ForwardOutput<T>> {
        input.validate(&self.config)?;
        let mut x = self.embed(&self.word_embeddings(input)?)?;
        let mut traces = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let (next, trace) = self.run_layer(l, &x, &input.mask, true)?;
            traces.push(trace.expect("capture requested"));
            x = next;
        }
        let logits = self.classify(&x)?;
        Ok(ForwardOutput { logits, traces })
    }

    /// Word embeddings for the input: table rows for ids, or the supplied matrix.
    pub fn word_embeddings(&self, input: &InputSequence<T>) -> Result<Matrix<T>> {
        match &input.tokens {
            TokenInput::Embeddings(m) => Ok(m.clone()),
            TokenInput::Ids(ids) => {
                let d = self.config.hidden_size;
                let mut out = Matrix::zeros(ids.len(), d);
                for (i, &id) in ids.iter().enumerate() {
                    if id >= self.weights.word_embeddings.rows() {
                        return Err(Error::OutOfVocabulary {
                            position: i,
                            id,
                            vocab: self.weights.word_embeddings.rows(),
                        });
                    }
                    out.row_mut(i)
                        .copy_from_slice(self.weights.word_embeddings.row(id));
                }
                Ok(out)
            }
        }
    }

    /// Adds position (and optional token-type) embeddings and applies the
    /// embedding layer norm, producing the first layer's input.
    pub fn embed(&self, words: &Matrix<T>) -> Result<Matrix<T>> {
        let n = words.rows();
        if n > self.weights.position_embeddings.rows() {
            return Err(Error::SequenceTooLong {
                len: n,
                max: self.weights.position_embeddings.rows(),
            });
        }
        let mut summed = words.add(&self.weights.position_embeddings.row_block(0, n))?;
        if let Some(tt) = &self.weights.token_type_embeddings {
            summed = summed.add_row_vector(tt.row(0))?;
        }
        let ln = &self.weights.embedding_ln;
        Ok(layer_norm_rows(&summed, &ln.gamma, &ln.beta, self.config.ln_epsilon).0)
    }

    /// Class logits from the final hidden states (CLS at row 0).
    pub fn classify(&self, hidden: &Matrix<T>) -> Result<Vec<T>> {
        let mut cls = hidden.row(0).to_vec();
        if let Some(pooler) = &self.weights.pooler {
            cls = vec_mat(&cls, &pooler.weight)?
                .into_iter()
                .zip(&pooler.bias)
                .map(|(v, &b)| (v + b).tanh())
                .collect();
        }
        Ok(vec_mat(&cls, &self.weights.classifier.weight)?
            .into_iter()
            .zip(&self.weights.classifier.bias)
            .map(|(v, &b)| v + b)
            .collect())
    }

    /// Logits from word embeddings, without capturing traces.
    pub fn logits_from_words(&self, words: &Matrix<T>, mask: &[bool]) -> Result<Vec<T>> {
        let mut x = self.embed(words)?;
        for l in 0..self.num_layers() {
            x = self.run_layer(l, &x, mask, false)?.0;
        }
        self.classify(&x)
    }

    /// Hidden states `e^0 … e^L` (embedding output, then each layer output).
    pub fn hidden_states(&self, input: &InputSequence<T>) -> Result<Vec<Matrix<T>>> {
        input.validate(&self.config)?;
        let mut x = self.embed(&self.word_embeddings(input)?)?;
        let mut states = vec![x.clone()];
        for l in 0..self.num_layers() {
            x = self.run_layer(l, &x, &input.mask, false)?.0;
            states.push(x.clone());
        }
        Ok(states)
    }

    /// Applies layer `layer` (0-based) to `x`.
    pub fn layer_forward(&self, layer: usize, x: &Matrix<T>, mask: &[bool]) -> Result<Matrix<T>> {
        if layer >= self.num_layers() {
            return Err(Error::LayerOutOfRange {
                layer,
                num_layers: self.num_layers(),
            });
        }
        Ok(self.run_layer(layer, x, mask, false)?.0)
    }

    fn run_layer(
        &self,
        layer: usize,
        x: &Matrix<T>,
        mask: &[bool],
        capture: bool,
    ) -> Result<(Matrix<T>, Option<LayerTrace<T>>)> {
        let w: &LayerWeights<T> = &self.weights.layers[layer];
        let cfg = &self.config;
        let n = x.rows();
        let dv = cfg.head_size;
        if mask.len() != n {
            return Err(Error::Contract(format!(
                "mask length {} does not match sequence length {n}",
                mask.len()
            )));
        }

        let q = w.query.apply(x)?;
        let k = w.key.apply(x)?;
        let v = w.value.apply(x)?;
        let scale = 1.0 / (dv as f64).sqrt();

        let mut context = Matrix::zeros(n, cfg.hidden_size);
        let mut alphas = Vec::with_capacity(cfg.num_heads);
        let mut fs = Vec::with_capacity(if capture { cfg.num_heads } else { 0 });
        for h in 0..cfg.num_heads {
            let qh = q.column_block(h * dv, dv);
            let kh = k.column_block(h * dv, dv);
            let vh = v.column_block(h * dv, dv);
            let mut alpha = matmul(&qh, &kh.transpose())?.map(|s| T::narrow(s.wide() * scale));
            for i in 0..n {
                let row = alpha.row_mut(i);
                for (s, &active) in row.iter_mut().zip(mask) {
                    if !active {
                        *s = T::narrow(s.wide() + MASK_PENALTY);
                    }
                }
                softmax_in_place(row);
                for (s, &active) in row.iter_mut().zip(mask) {
                    if !active {
                        *s = T::zero();
                    }
                }
            }
            let ctx = matmul(&alpha, &vh)?;
            for i in 0..n {
                context.row_mut(i)[h * dv..(h + 1) * dv].copy_from_slice(ctx.row(i));
            }
            if capture {
                let wo_h = w.output.weight.row_block(h * dv, dv);
                fs.push(matmul(&vh, &wo_h)?);
            }
            alphas.push(alpha);
        }

        let z_plus = w.output.apply(&context)?.add(x)?;
        let (z_tilde, s_z_plus) = layer_norm_rows(&z_plus, &w.ln1.gamma, &w.ln1.beta, cfg.ln_epsilon);
        let hidden = w.ffn_in.apply(&z_tilde)?.map(|v| cfg.activation.apply(v));
        let ffn_out = w.ffn_out.apply(&hidden)?;
        let z_tilde_plus = ffn_out.add(&z_tilde)?;
        let (x_tilde, s_z_tilde_plus) =
            layer_norm_rows(&z_tilde_plus, &w.ln2.gamma, &w.ln2.beta, cfg.ln_epsilon);

        let trace = capture.then(|| LayerTrace {
            layer_index: layer,
            mask: mask.to_vec(),
            input_x: x.clone(),
            alpha: alphas,
            f_of_x: fs,
            attn_output_bias: w.output.bias.clone(),
            z_plus,
            s_z_plus,
            z_tilde,
            ffn_out,
            z_tilde_plus,
            s_z_tilde_plus,
            x_tilde: x_tilde.clone(),
            ln1: w.ln1.clone(),
            ln2: w.ln2.clone(),
            ln_epsilon: cfg.ln_epsilon,
        });
        Ok((x_tilde, trace))
    }
}

/// Free-function form of [`Model::forward`].
pub fn forward<T: Scalar>(
    config: &ModelConfig,
    weights: &EncoderWeights<T>,
    input: &InputSequence<T>,
) -> Result<ForwardOutput<T>> {
    config.validate()?;
    weights.validate(config)?;
    let model = Model {
        config: config.clone(),
        weights: weights.clone(),
    };
    model.forward(input)
}
