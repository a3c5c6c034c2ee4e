//! Gradient-based reference scores computed by finite differences:
//! gradient×input saliency of the target logit with respect to the word
//! embeddings, and input-scaled hidden-token attribution (HTA) between the
//! hidden states entering and leaving one layer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::model::InputSequence;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Perturbation size for finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum FdStep {
    Absolute(f64),
    /// Fraction of the root-mean-square of the perturbed matrix.
    RelativeToRms(f64),
}

impl Default for FdStep {
    fn default() -> Self {
        FdStep::RelativeToRms(1e-3)
    }
}

impl FdStep {
    pub fn halved(self) -> Self {
        match self {
            FdStep::Absolute(h) => FdStep::Absolute(h / 2.0),
            FdStep::RelativeToRms(h) => FdStep::RelativeToRms(h / 2.0),
        }
    }

    pub fn resolve<T: Scalar>(self, x: &Matrix<T>) -> Result<f64> {
        let h = match self {
            FdStep::Absolute(h) => h,
            FdStep::RelativeToRms(frac) => {
                let len = x.as_slice().len().max(1) as f64;
                let rms = (x.as_slice().iter().map(|v| v.wide().powi(2)).sum::<f64>() / len).sqrt();
                // An all-zero input has zero saliency anyway; any positive step works.
                frac * if rms > 0.0 { rms } else { 1.0 }
            }
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Contract(format!("finite-difference step must be positive, got {h}")));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdScheme {
    #[default]
    Central,
    Forward,
}

/// How the input vector scales the d×d Jacobian block before the Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HtaScaling {
    /// Column `k` times input coordinate `k` (sensitivity times input).
    #[default]
    Column,
    /// Row `a` times input coordinate `a`.
    Row,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyVector<T> {
    pub scores: Vec<T>,
    pub target_class: usize,
    pub fd_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HtaMatrix<T> {
    pub layer_index: usize,
    pub values: Matrix<T>,
    pub scaling: HtaScaling,
}

/// The label if present, otherwise the predicted class.
pub fn target_class<T: Scalar>(input: &InputSequence<T>, logits: &[T]) -> usize {
    input.label.unwrap_or_else(|| {
        logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, v)| {
                if v.wide() > best.1 {
                    (c, v.wide())
                } else {
                    best
                }
            })
            .0
    })
}

/// `||∂y_c/∂e_i ⊙ e_i||` per token, with `∂y_c/∂e` from central differences.
pub fn saliency_grad_x_input<T: Scalar>(
    model: &Model<T>,
    input: &InputSequence<T>,
    target: usize,
    step: FdStep,
) -> Result<SaliencyVector<T>> {
    input.validate(&model.config)?;
    if target >= model.config.num_classes {
        return Err(Error::Contract(format!(
            "target class {target} out of range for {} classes",
            model.config.num_classes
        )));
    }
    let words = model.word_embeddings(input)?;
    let h = step.resolve(&words)?;
    let (n, d) = words.shape();
    let coords: Vec<(usize, usize)> = (0..n)
        .filter(|&i| input.mask[i])
        .flat_map(|i| (0..d).map(move |k| (i, k)))
        .collect();

    let eval = |i: usize, k: usize, delta: f64| -> Result<f64> {
        let mut e = words.clone();
        e[(i, k)] = T::narrow(e[(i, k)].wide() + delta);
        let y = model.logits_from_words(&e, &input.mask)?[target].wide();
        if !y.is_finite() {
            return Err(Error::OracleFailure {
                token: i,
                coord: k,
                detail: format!("non-finite logit {y}"),
            });
        }
        Ok(y)
    };
    let grads: Vec<f64> = coords
        .par_iter()
        .map(|&(i, k)| Ok((eval(i, k, h)? - eval(i, k, -h)?) / (2.0 * h)))
        .collect::<Result<_>>()?;

    let mut sq = vec![0.0f64; n];
    for (&(i, k), g) in coords.iter().zip(&grads) {
        sq[i] += (g * words[(i, k)].wide()).powi(2);
    }
    Ok(SaliencyVector {
        scores: sq.into_iter().map(|s| T::narrow(s.sqrt())).collect(),
        target_class: target,
        fd_step: h,
    })
}

/// Finite-difference Jacobian of a map from n×d to n×d matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    n: usize,
    d: usize,
    /// `columns[j*d + k][i*d + a] = ∂out[i][a] / ∂in[j][k]`.
    columns: Vec<Vec<f64>>,
}

impl Jacobian {
    pub fn seq_len(&self) -> usize {
        self.n
    }

    /// `∂out_i / ∂in_j` as a d×d matrix (rows: output coordinate).
    pub fn block(&self, i: usize, j: usize) -> Matrix<f64> {
        let d = self.d;
        let mut out = Matrix::zeros(d, d);
        for k in 0..d {
            let col = &self.columns[j * d + k];
            for a in 0..d {
                out[(a, k)] = col[i * d + a];
            }
        }
        out
    }
}

pub fn fd_jacobian<T, F>(f: F, x: &Matrix<T>, skip: &[bool], h: f64, scheme: FdScheme) -> Result<Jacobian>
where
    T: Scalar,
    F: Fn(&Matrix<T>) -> Result<Matrix<T>> + Sync,
{
    let (n, d) = x.shape();
    let base = match scheme {
        FdScheme::Forward => Some(f(x)?),
        FdScheme::Central => None,
    };
    let perturbed = |j: usize, k: usize, delta: f64| -> Result<Matrix<T>> {
        let mut p = x.clone();
        p[(j, k)] = T::narrow(p[(j, k)].wide() + delta);
        let out = f(&p)?;
        if !out.is_finite() {
            return Err(Error::OracleFailure {
                token: j,
                coord: k,
                detail: "non-finite layer output".into(),
            });
        }
        Ok(out)
    };
    let columns = (0..n * d)
        .into_par_iter()
        .map(|idx| {
            let (j, k) = (idx / d, idx % d);
            if skip.get(j).copied().unwrap_or(false) {
                return Ok(vec![0.0; n * d]);
            }
            let (plus, minus, denom) = match &base {
                None => (perturbed(j, k, h)?, perturbed(j, k, -h)?, 2.0 * h),
                Some(b) => (perturbed(j, k, h)?, b.clone(), h),
            };
            Ok(plus
                .as_slice()
                .iter()
                .zip(minus.as_slice())
                .map(|(p, m)| (p.wide() - m.wide()) / denom)
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Jacobian { n, d, columns })
}

/// `c_{i←j} = ||J_{ij} ⊙ x_j||_F` for every active pair.
pub fn hta_from_jacobian<T: Scalar>(jac: &Jacobian, x: &Matrix<T>, mask: &[bool], scaling: HtaScaling) -> Matrix<T> {
    let n = jac.n;
    let d = jac.d;
    let mut out = Matrix::zeros(n, n);
    for i in (0..n).filter(|&i| mask[i]) {
        for j in (0..n).filter(|&j| mask[j]) {
            let mut s = 0.0f64;
            for k in 0..d {
                let col = &jac.columns[j * d + k];
                for a in 0..d {
                    let scale = match scaling {
                        HtaScaling::Column => x[(j, k)].wide(),
                        HtaScaling::Row => x[(j, a)].wide(),
                    };
                    s += (col[i * d + a] * scale).powi(2);
                }
            }
            out[(i, j)] = T::narrow(s.sqrt());
        }
    }
    out
}

/// HTA×input for an arbitrary layer map `f` applied at `x`.
pub fn hta_for_map<T, F>(f: F, x: &Matrix<T>, mask: &[bool], step: FdStep, scaling: HtaScaling) -> Result<Matrix<T>>
where
    T: Scalar,
    F: Fn(&Matrix<T>) -> Result<Matrix<T>> + Sync,
{
    let h = step.resolve(x)?;
    let skip: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let jac = fd_jacobian(f, x, &skip, h, FdScheme::Central)?;
    Ok(hta_from_jacobian(&jac, x, mask, scaling))
}

/// HTA×input between the hidden states entering and leaving 0-based `layer`.
pub fn hta_x_input<T: Scalar>(
    model: &Model<T>,
    input: &InputSequence<T>,
    layer: usize,
    step: FdStep,
    scaling: HtaScaling,
) -> Result<HtaMatrix<T>> {
    if layer >= model.num_layers() {
        return Err(Error::LayerOutOfRange {
            layer,
            num_layers: model.num_layers(),
        });
    }
    input.validate(&model.config)?;
    let mut x = model.embed(&model.word_embeddings(input)?)?;
    for l in 0..layer {
        x = model.layer_forward(l, &x, &input.mask)?;
    }
    let values = hta_for_map(|m| model.layer_forward(layer, m, &input.mask), &x, &input.mask, step, scaling)?;
    Ok(HtaMatrix {
        layer_index: layer,
        values,
        scaling,
    })
}
