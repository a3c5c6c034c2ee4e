//! Per-layer token-to-token attribution matrices.
//!
//! Weight-based methods read the attention weights only. Norm-based methods
//! take norms of decomposed contribution vectors, adding in turn the residual
//! connection, LN1, and LN2 (the last with the FFN lumped into the LN2
//! statistics). Entry `[i][j]` is the influence of input token `j` on output
//! token `i`. Masked tokens have zero rows and columns in every method.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{per_head_contributions, Contributions, LayerTrace};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{l2_norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "w")]
    W,
    #[serde(rename = "w_fixedres")]
    WFixedRes,
    #[serde(rename = "w_res")]
    WRes,
    #[serde(rename = "n")]
    N,
    #[serde(rename = "n_fixedres")]
    NFixedRes,
    #[serde(rename = "n_res")]
    NRes,
    #[serde(rename = "n_resln")]
    NResLn,
    #[serde(rename = "n_enc")]
    NEnc,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::W,
        Method::WFixedRes,
        Method::WRes,
        Method::N,
        Method::NFixedRes,
        Method::NRes,
        Method::NResLn,
        Method::NEnc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::W => "w",
            Method::WFixedRes => "w_fixedres",
            Method::WRes => "w_res",
            Method::N => "n",
            Method::NFixedRes => "n_fixedres",
            Method::NRes => "n_res",
            Method::NResLn => "n_resln",
            Method::NEnc => "n_enc",
        }
    }

    /// Rows of this method's matrices sum to one.
    pub fn is_row_stochastic(self) -> bool {
        matches!(
            self,
            Method::W | Method::WFixedRes | Method::WRes | Method::NFixedRes
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix<T> {
    pub method: Method,
    pub layer_index: usize,
    pub values: Matrix<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> AttributionMatrix<T> {
    pub fn seq_len(&self) -> usize {
        self.values.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixingLevel {
    /// From LN1-decomposed vectors `z̃_{i←j}`.
    ResLn,
    /// From encoder-level vectors `x̃_{i←j}`.
    Enc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingRatios<T> {
    pub level: MixingLevel,
    pub ratios: Vec<T>,
}

/// Zeroes rows and columns of masked positions.
fn apply_mask<T: Scalar>(m: &mut Matrix<T>, mask: &[bool]) {
    let n = m.rows();
    for (i, &active) in mask.iter().enumerate() {
        if !active {
            for j in 0..n {
                m[(i, j)] = T::zero();
                m[(j, i)] = T::zero();
            }
        }
    }
}

fn finish<T: Scalar>(method: Method, trace: &LayerTrace<T>, mut values: Matrix<T>) -> AttributionMatrix<T> {
    apply_mask(&mut values, &trace.mask);
    AttributionMatrix {
        method,
        layer_index: trace.layer_index,
        values,
        mask: trace.mask.clone(),
    }
}

/// Normalizes every active row to sum to one.
pub fn row_normalize<T: Scalar>(m: &Matrix<T>, mask: &[bool], what: &'static str) -> Result<Matrix<T>> {
    let mut out = m.clone();
    for (i, &active) in mask.iter().enumerate().take(m.rows()) {
        if !active {
            continue;
        }
        let total: f64 = m.row(i).iter().map(|v| v.wide()).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateRow { what, row: i });
        }
        for v in out.row_mut(i) {
            *v = T::narrow(v.wide() / total);
        }
    }
    Ok(out)
}

/// `0.5·m + 0.5·I`.
pub fn fixed_residual<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let half = T::lit(0.5);
    let mut out = m.scale(half);
    for i in 0..out.rows().min(out.cols()) {
        out[(i, i)] = out[(i, i)] + half;
    }
    out
}

/// Head-averaged attention `Ā`.
pub fn mean_attention<T: Scalar>(trace: &LayerTrace<T>) -> Matrix<T> {
    let n = trace.seq_len();
    let heads = trace.num_heads() as f64;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let s: f64 = trace.alpha.iter().map(|a| a[(i, j)].wide()).sum();
            out[(i, j)] = T::narrow(s / heads);
        }
    }
    out
}

pub fn attr_weight<T: Scalar>(trace: &LayerTrace<T>) -> AttributionMatrix<T> {
    finish(Method::W, trace, mean_attention(trace))
}

pub fn attr_weight_fixedres<T: Scalar>(trace: &LayerTrace<T>) -> AttributionMatrix<T> {
    finish(Method::WFixedRes, trace, fixed_residual(&mean_attention(trace)))
}

/// Strips the diagonal of `mean`, renormalizes the off-diagonal mass per
/// row, then mixes it with the identity at ratio `r_i`:
/// `diag(r)·A′ + diag(1 − r)·I`.
pub fn weight_with_ratios<T: Scalar>(mean: &Matrix<T>, ratios: &[T], mask: &[bool]) -> Result<Matrix<T>> {
    let n = mean.rows();
    if ratios.len() != n || mask.len() != n || mean.cols() != n {
        return Err(Error::Contract(format!(
            "weight_with_ratios: matrix {:?}, {} ratios, mask {}",
            mean.shape(),
            ratios.len(),
            mask.len()
        )));
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let r = ratios[i].wide();
        out[(i, i)] = T::narrow(1.0 - r);
        if r == 0.0 {
            continue;
        }
        // Sum of off-diagonal entries equals 1 - Ā_ii for stochastic rows but
        // does not round to zero when Ā_ii rounds to one.
        let off: f64 = (0..n)
            .filter(|&j| j != i && mask[j])
            .map(|j| mean[(i, j)].wide())
            .sum();
        if off <= 0.0 {
            return Err(Error::DegenerateRow {
                what: "w_res (attention row is pure self-attention but mixing ratio > 0)",
                row: i,
            });
        }
        for j in (0..n).filter(|&j| j != i && mask[j]) {
            out[(i, j)] = T::narrow(r * mean[(i, j)].wide() / off);
        }
    }
    Ok(out)
}

pub fn attr_weight_res<T: Scalar>(trace: &LayerTrace<T>, ratios: &MixingRatios<T>) -> Result<AttributionMatrix<T>> {
    let values = weight_with_ratios(&mean_attention(trace), &ratios.ratios, &trace.mask)?;
    Ok(finish(Method::WRes, trace, values))
}

/// Matrix of vector norms `||c_{i←j}||`.
pub fn norm_matrix<T: Scalar>(contribs: &Contributions<T>) -> Matrix<T> {
    let n = contribs.seq_len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = l2_norm(contribs.get(i, j));
        }
    }
    out
}

/// `z⁺_{i←j} = z_{i←j} + 1[i=j]·x_i`.
pub fn residual_contributions<T: Scalar>(trace: &LayerTrace<T>) -> Contributions<T> {
    let mut c = per_head_contributions(trace);
    for i in 0..trace.seq_len() {
        for (v, &x) in c.get_mut(i, i).iter_mut().zip(trace.input_x.row(i)) {
            *v = *v + x;
        }
    }
    c
}

/// The linear part of layer normalization applied to one addend:
/// `(a − mean(a)) / std ⊙ γ`, where `std` belongs to the full pre-LN sum.
pub fn ln_component<T: Scalar>(a: &[T], std: T, gamma: &[T]) -> Vec<T> {
    let mean = a.iter().map(|v| v.wide()).sum::<f64>() / a.len() as f64;
    let s = std.wide();
    a.iter()
        .zip(gamma)
        .map(|(&v, &g)| T::narrow((v.wide() - mean) / s * g.wide()))
        .collect()
}

fn ln_decompose<T: Scalar>(c: &Contributions<T>, stds: &[T], gamma: &[T]) -> Result<Contributions<T>> {
    if let Some(token) = stds.iter().position(|s| s.wide().is_nan() || s.wide() <= 0.0) {
        return Err(Error::DegenerateVariance { token });
    }
    Ok(c.map_vectors(|i, _, v| ln_component(v, stds[i], gamma)))
}

/// `z̃_{i←j}`: residual-aware contributions passed through LN1's linear part.
pub fn ln1_contributions<T: Scalar>(trace: &LayerTrace<T>) -> Result<Contributions<T>> {
    ln_decompose(&residual_contributions(trace), &trace.s_z_plus, &trace.ln1.gamma)
}

/// `x̃_{i←j}`: LN1 contributions passed through LN2's linear part using the
/// traced LN2 statistics, with the FFN's direct term left out.
pub fn encoder_contributions<T: Scalar>(trace: &LayerTrace<T>) -> Result<Contributions<T>> {
    ln_decompose(&ln1_contributions(trace)?, &trace.s_z_tilde_plus, &trace.ln2.gamma)
}

pub fn attr_norm<T: Scalar>(trace: &LayerTrace<T>) -> AttributionMatrix<T> {
    finish(Method::N, trace, norm_matrix(&per_head_contributions(trace)))
}

pub fn attr_norm_fixedres<T: Scalar>(trace: &LayerTrace<T>) -> Result<AttributionMatrix<T>> {
    let mut norms = norm_matrix(&per_head_contributions(trace));
    apply_mask(&mut norms, &trace.mask);
    let normalized = row_normalize(&norms, &trace.mask, "n_fixedres")?;
    Ok(finish(Method::NFixedRes, trace, fixed_residual(&normalized)))
}

pub fn attr_norm_res<T: Scalar>(trace: &LayerTrace<T>) -> AttributionMatrix<T> {
    finish(Method::NRes, trace, norm_matrix(&residual_contributions(trace)))
}

pub fn attr_norm_resln<T: Scalar>(trace: &LayerTrace<T>) -> Result<AttributionMatrix<T>> {
    Ok(finish(Method::NResLn, trace, norm_matrix(&ln1_contributions(trace)?)))
}

pub fn attr_norm_enc<T: Scalar>(trace: &LayerTrace<T>) -> Result<AttributionMatrix<T>> {
    Ok(finish(Method::NEnc, trace, norm_matrix(&encoder_contributions(trace)?)))
}

/// Context-mixing ratio per token from a contribution grid:
/// `||Σ_{j≠i} c_{i←j}|| / (||Σ_{j≠i} c_{i←j}|| + ||c_{i←i}||)`, with 0/0 := 0.
pub fn ratios_from_contributions<T: Scalar>(c: &Contributions<T>, mask: &[bool]) -> Vec<T> {
    let n = c.seq_len();
    (0..n)
        .map(|i| {
            if !mask.get(i).copied().unwrap_or(true) {
                return T::zero();
            }
            let mut context = vec![0.0f64; c.dim()];
            for j in (0..n).filter(|&j| j != i) {
                for (a, v) in context.iter_mut().zip(c.get(i, j)) {
                    *a += v.wide();
                }
            }
            let ctx = context.iter().map(|v| v * v).sum::<f64>().sqrt();
            let own = l2_norm(c.get(i, i)).wide();
            if ctx + own == 0.0 {
                T::zero()
            } else {
                T::narrow(ctx / (ctx + own))
            }
        })
        .collect()
}

pub fn mixing_ratios<T: Scalar>(trace: &LayerTrace<T>, level: MixingLevel) -> Result<MixingRatios<T>> {
    let c = match level {
        MixingLevel::ResLn => ln1_contributions(trace)?,
        MixingLevel::Enc => encoder_contributions(trace)?,
    };
    Ok(MixingRatios {
        level,
        ratios: ratios_from_contributions(&c, &trace.mask),
    })
}

/// Computes `method` for one layer. `WRes` uses encoder-level mixing ratios.
pub fn compute<T: Scalar>(method: Method, trace: &LayerTrace<T>) -> Result<AttributionMatrix<T>> {
    match method {
        Method::W => Ok(attr_weight(trace)),
        Method::WFixedRes => Ok(attr_weight_fixedres(trace)),
        Method::WRes => attr_weight_res(trace, &mixing_ratios(trace, MixingLevel::Enc)?),
        Method::N => Ok(attr_norm(trace)),
        Method::NFixedRes => attr_norm_fixedres(trace),
        Method::NRes => Ok(attr_norm_res(trace)),
        Method::NResLn => attr_norm_resln(trace),
        Method::NEnc => attr_norm_enc(trace),
    }
}

/// `method` for every layer, in layer order.
pub fn compute_all_layers<T: Scalar>(method: Method, traces: &[LayerTrace<T>]) -> Result<Vec<AttributionMatrix<T>>> {
    traces.iter().map(|t| compute(method, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Model;
    use crate::model::{EncoderWeights, InputSequence, Linear, ModelConfig};
    use crate::tensor::layer_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_f64_rows(rows).unwrap()
    }

    fn trace(seed: u64, n: usize, d: usize, heads: usize) -> LayerTrace<f64> {
        let config = ModelConfig::tiny(1, d, heads);
        let weights = EncoderWeights::random(&config, &mut ChaCha8Rng::seed_from_u64(seed));
        let model = Model::new(config, weights).unwrap();
        let ids: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % 32).collect();
        model.forward(&InputSequence::from_ids(ids)).unwrap().traces.remove(0)
    }

    fn close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) -> bool {
        a.max_abs_diff(b).map(|d| d <= tol).unwrap_or(false)
    }

    #[test]
    fn method_names_round_trip() {
        for method in Method::ALL {
            assert_eq!(method.as_str().parse::<Method>().unwrap(), method);
        }
        assert!("attention".parse::<Method>().is_err());
    }

    #[test]
    fn weight_averages_heads() {
        let mut t = trace(1, 2, 4, 2);
        t.alpha = vec![Matrix::identity(2), Matrix::filled(2, 2, 0.5)];
        let w = attr_weight(&t);
        assert!(close(&w.values, &m(&[&[0.75, 0.25], &[0.25, 0.75]]), 1e-15));

        let shared = m(&[&[0.3, 0.7], &[0.6, 0.4]]);
        t.alpha = vec![shared.clone(), shared.clone()];
        assert!(close(&attr_weight(&t).values, &shared, 1e-15));
    }

    #[test]
    fn single_token_weight_is_one() {
        let t = trace(2, 1, 4, 2);
        assert_eq!(attr_weight(&t).values, m(&[&[1.0]]));
    }

    #[test]
    fn fixed_residual_examples() {
        assert_eq!(fixed_residual(&Matrix::<f64>::identity(3)), Matrix::identity(3));
        assert_eq!(
            fixed_residual(&Matrix::filled(2, 2, 0.5)),
            m(&[&[0.75, 0.25], &[0.25, 0.75]])
        );
    }

    #[test]
    fn weight_res_examples() {
        let mask = [true, true];
        let mean = m(&[&[0.5, 0.5], &[0.2, 0.8]]);
        let out = weight_with_ratios(&mean, &[0.4, 0.4], &mask).unwrap();
        assert!(close(&out, &m(&[&[0.6, 0.4], &[0.4, 0.6]]), 1e-15));

        let out = weight_with_ratios(&mean, &[0.0, 0.0], &mask).unwrap();
        assert_eq!(out, Matrix::identity(2));

        let no_diag = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let out = weight_with_ratios(&no_diag, &[1.0, 1.0], &mask).unwrap();
        assert_eq!(out, no_diag);
    }

    #[test]
    fn weight_res_rejects_pure_self_attention_with_mixing() {
        let err = weight_with_ratios(&Matrix::<f64>::identity(2), &[0.0, 0.3], &[true, true]).unwrap_err();
        match err {
            Error::DegenerateRow { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn norm_fixedres_hand_row() {
        let t = trace(3, 2, 4, 2);
        let norms = m(&[&[2.0, 2.0], &[1.0, 3.0]]);
        let normalized = row_normalize(&norms, &t.mask, "test").unwrap();
        let out = fixed_residual(&normalized);
        assert!(close(&out, &m(&[&[0.75, 0.25], &[0.125, 0.875]]), 1e-15));
        let diag = m(&[&[2.0, 0.0], &[0.0, 5.0]]);
        assert_eq!(fixed_residual(&row_normalize(&diag, &t.mask, "test").unwrap()), Matrix::identity(2));
    }

    #[test]
    fn diagonal_attention_zeroes_off_diagonal_norms() {
        let mut t = trace(4, 3, 4, 2);
        t.alpha = vec![Matrix::identity(3); 2];
        let n = attr_norm(&t);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(n.values[(i, j)], 0.0);
                }
            }
        }
        let r = mixing_ratios(&t, MixingLevel::ResLn).unwrap();
        assert!(r.ratios.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn norm_res_off_diagonal_matches_norm() {
        let t = trace(5, 4, 8, 2);
        let a = attr_norm(&t).values;
        let b = attr_norm_res(&t).values;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(a[(i, j)], b[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn norm_res_with_zero_values_is_input_norm() {
        let mut t = trace(6, 3, 4, 2);
        for f in t.f_of_x.iter_mut() {
            *f = Matrix::zeros(3, 4);
        }
        let out = attr_norm_res(&t).values;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { l2_norm(t.input_x.row(i)) } else { 0.0 };
                assert!((out[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn norm_res_single_token() {
        let t = trace(7, 1, 4, 2);
        let mut v = t.input_x.row(0).to_vec();
        for f in &t.f_of_x {
            for (a, b) in v.iter_mut().zip(f.row(0)) {
                *a += b;
            }
        }
        let want = l2_norm(&v);
        assert!((attr_norm_res(&t).values[(0, 0)] - want).abs() < 1e-12);
    }

    #[test]
    fn resln_gamma_homogeneity_and_zero() {
        let t = trace(8, 3, 8, 2);
        let base = attr_norm_resln(&t).unwrap().values;
        let mut doubled = t.clone();
        doubled.ln1.gamma = t.ln1.gamma.iter().map(|g| g * 2.0).collect();
        assert!(close(&attr_norm_resln(&doubled).unwrap().values, &base.scale(2.0), 1e-12));
        let mut zero = t.clone();
        zero.ln1.gamma = vec![0.0; 8];
        assert_eq!(attr_norm_resln(&zero).unwrap().values, Matrix::zeros(3, 3));
    }

    #[test]
    fn resln_rejects_zero_std() {
        let mut t = trace(9, 2, 4, 2);
        t.s_z_plus[1] = 0.0;
        assert!(matches!(attr_norm_resln(&t), Err(Error::DegenerateVariance { token: 1 })));
    }

    #[test]
    fn ln1_decomposition_is_complete() {
        let t = trace(10, 4, 8, 2);
        let c = ln1_contributions(&t).unwrap();
        for i in 0..4 {
            let bias = ln_component(&t.attn_output_bias, t.s_z_plus[i], &t.ln1.gamma);
            let sum = c.row_sum(i);
            let (direct, _) = layer_norm(t.z_plus.row(i), &t.ln1.gamma, &t.ln1.beta, t.ln_epsilon);
            for k in 0..8 {
                let rebuilt = sum[k] + bias[k] + t.ln1.beta[k];
                assert!((rebuilt - direct[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn enc_gamma_scaling() {
        let t = trace(11, 3, 8, 2);
        let base = attr_norm_enc(&t).unwrap().values;
        let mut scaled = t.clone();
        scaled.ln2.gamma = t.ln2.gamma.iter().map(|g| g * -3.0).collect();
        assert!(close(&attr_norm_enc(&scaled).unwrap().values, &base.scale(3.0), 1e-12));
    }

    #[test]
    fn mixing_ratio_orthogonal_hand_case() {
        // Token 0: self vector norm 1, single context vector norm 3, orthogonal.
        let mut c = Contributions::<f64>::zeros(2, 2);
        c.get_mut(0, 0).copy_from_slice(&[1.0, 0.0]);
        c.get_mut(0, 1).copy_from_slice(&[0.0, 3.0]);
        c.get_mut(1, 0).copy_from_slice(&[0.0, 2.0]);
        let r = ratios_from_contributions(&c, &[true, true]);
        assert!((r[0] - 0.75).abs() < 1e-15);
        assert_eq!(r[1], 1.0);
    }

    #[test]
    fn mixing_ratio_uses_vector_sum() {
        // Opposite context vectors cancel: norm of the sum is zero.
        let mut c = Contributions::<f64>::zeros(3, 2);
        c.get_mut(0, 0).copy_from_slice(&[1.0, 0.0]);
        c.get_mut(0, 1).copy_from_slice(&[0.0, 2.0]);
        c.get_mut(0, 2).copy_from_slice(&[0.0, -2.0]);
        let r = ratios_from_contributions(&c, &[true, true, true]);
        assert_eq!(r[0], 0.0);
        // Token 1 has nothing at all: 0/0 is defined as 0.
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn masked_rows_and_columns_are_zero() {
        let config = ModelConfig::tiny(1, 8, 2);
        let weights = EncoderWeights::random(&config, &mut ChaCha8Rng::seed_from_u64(12));
        let model: Model<f64> = Model::new(config, weights).unwrap();
        let input = InputSequence::from_ids(vec![1, 2, 3, 0]).with_mask(vec![true, true, true, false]);
        let t = model.forward(&input).unwrap().traces.remove(0);
        let plain = model.forward(&InputSequence::from_ids(vec![1, 2, 3])).unwrap().traces.remove(0);
        for method in Method::ALL {
            let a = compute(method, &t).unwrap();
            let b = compute(method, &plain).unwrap();
            for k in 0..4 {
                assert_eq!(a.values[(k, 3)], 0.0, "{method} column");
                assert_eq!(a.values[(3, k)], 0.0, "{method} row");
            }
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a.values[(i, j)] - b.values[(i, j)]).abs() < 1e-6, "{method}");
                }
                if method.is_row_stochastic() {
                    let s: f64 = a.values.row(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-5, "{method} row sum {s}");
                }
            }
        }
    }

    #[test]
    fn zero_value_weights_leave_weight_res_well_defined() {
        let config = ModelConfig::tiny(1, 4, 2);
        let mut weights = EncoderWeights::random(&config, &mut ChaCha8Rng::seed_from_u64(13));
        weights.layers[0].value = Linear::zeros(4, 4);
        let model = Model::new(config, weights).unwrap();
        let t = model.forward(&InputSequence::from_ids(vec![1, 2, 3])).unwrap().traces.remove(0);
        let w = compute(Method::WRes, &t).unwrap();
        assert!(close(&w.values, &Matrix::identity(3), 1e-12));
    }
}
