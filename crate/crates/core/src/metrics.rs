//! Correlation kernels, layer-norm outlier analysis, and the evaluation
//! protocol that scores attribution methods against gradient oracles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{compute_all_layers, Method};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::model::{InputSequence, LayerWeights};
use crate::oracle::{hta_x_input, saliency_grad_x_input, target_class, FdStep, HtaScaling};
use crate::rollout::{cls_row, rollout};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need two equally long vectors of length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite value".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("constant vector".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // Positions start..end (0-based) hold ranks start+1..=end.
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need two equally long vectors of length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::UndefinedCorrelation("NaN value".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LnId {
    #[serde(rename = "ln1")]
    Ln1,
    #[serde(rename = "ln2")]
    Ln2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSet {
    pub layer: usize,
    pub ln_id: LnId,
    pub outlier_dims: Vec<usize>,
    /// Minimum deviation from the mean that counts as an outlier (3σ).
    pub threshold: f64,
    pub mean: f64,
    pub std: f64,
}

/// Dimensions whose scale lies at least three standard deviations from the
/// mean. Returns `(dims, threshold, mean, std)`; a zero-std vector has none.
pub fn ln_outliers<T: Scalar>(gamma: &[T]) -> (Vec<usize>, f64, f64, f64) {
    if gamma.is_empty() {
        return (Vec::new(), 0.0, 0.0, 0.0);
    }
    let n = gamma.len() as f64;
    let mean = gamma.iter().map(|g| g.wide()).sum::<f64>() / n;
    let std = (gamma.iter().map(|g| (g.wide() - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = 3.0 * std;
    if std == 0.0 {
        return (Vec::new(), threshold, mean, std);
    }
    let dims = gamma
        .iter()
        .enumerate()
        .filter(|(_, g)| (g.wide() - mean).abs() >= threshold)
        .map(|(k, _)| k)
        .collect();
    (dims, threshold, mean, std)
}

pub fn layer_outliers<T: Scalar>(layer: usize, weights: &LayerWeights<T>) -> [OutlierSet; 2] {
    let make = |ln_id, gamma: &[T]| {
        let (outlier_dims, threshold, mean, std) = ln_outliers(gamma);
        OutlierSet {
            layer,
            ln_id,
            outlier_dims,
            threshold,
            mean,
            std,
        }
    };
    [make(LnId::Ln1, &weights.ln1.gamma), make(LnId::Ln2, &weights.ln2.gamma)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierDims {
    /// Union of the LN1 and LN2 outlier dimensions of the layer.
    #[default]
    Union,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierCorrelation {
    pub layer: usize,
    pub dims: Vec<usize>,
    /// `None` when fewer than two dimensions are selected or a side is constant.
    pub pearson: Option<f64>,
}

/// Pearson correlation between LN1 and LN2 scales over the selected dims.
pub fn ln_outlier_correlation<T: Scalar>(layer: usize, weights: &LayerWeights<T>, which: OutlierDims) -> OutlierCorrelation {
    let dims: Vec<usize> = match which {
        OutlierDims::All => (0..weights.ln1.gamma.len()).collect(),
        OutlierDims::Union => {
            let [a, b] = layer_outliers(layer, weights);
            let mut d: Vec<usize> = a.outlier_dims.into_iter().chain(b.outlier_dims).collect();
            d.sort_unstable();
            d.dedup();
            d
        }
    };
    let g1: Vec<f64> = dims.iter().map(|&k| weights.ln1.gamma[k].wide()).collect();
    let g2: Vec<f64> = dims.iter().map(|&k| weights.ln2.gamma[k].wide()).collect();
    OutlierCorrelation {
        layer,
        pearson: pearson(&g1, &g2).ok(),
        dims,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Spearman,
    Pearson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    /// CLS attributions vs. gradient×input saliency (Spearman).
    SaliencyFd,
    /// Single-layer maps vs. HTA×input maps (Pearson).
    HtaFd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Individual layer matrices.
    None,
    Rollout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub oracle: OracleKind,
    pub aggregation: Aggregation,
    /// 0-based layers to report; `None` means all.
    pub layers: Option<Vec<usize>>,
    pub fd_step: FdStep,
    /// Keep tokens flagged `special` in the correlated vectors.
    pub include_special: bool,
    pub hta_scaling: HtaScaling,
}

impl EvalConfig {
    pub fn new(methods: Vec<Method>, oracle: OracleKind) -> Self {
        Self {
            methods,
            oracle,
            aggregation: Aggregation::Rollout,
            layers: None,
            fd_step: FdStep::default(),
            include_special: false,
            hta_scaling: HtaScaling::Column,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleFailure {
    pub example: usize,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    /// 1-based layer number.
    pub layer: usize,
    pub n_examples: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_failed: usize,
    /// One entry per input example; `None` where the example failed.
    pub values: Vec<Option<f64>>,
    pub failures: Vec<ExampleFailure>,
}

impl ReportRow {
    fn new(method: Method, layer: usize, values: Vec<Option<f64>>, failures: Vec<ExampleFailure>) -> Self {
        let ok: Vec<f64> = values.iter().flatten().copied().collect();
        let (mean, std) = mean_std(&ok).unzip();
        Self {
            method,
            layer,
            n_examples: ok.len(),
            mean,
            std,
            n_failed: values.len() - ok.len(),
            values,
            failures,
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub kind: CorrelationKind,
    pub oracle: OracleKind,
    pub aggregation: Aggregation,
    pub rollout_normalized: bool,
    pub include_special: bool,
    pub fd_step: FdStep,
    pub hta_scaling: HtaScaling,
    pub num_examples: usize,
    pub rows: Vec<ReportRow>,
}

impl CorrelationReport {
    pub fn row(&self, method: Method, layer: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.layer == layer)
    }

    /// CSV with columns `method,layer,n_examples,mean,std,n_failed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,layer,n_examples,mean,std,n_failed\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method,
                r.layer,
                r.n_examples,
                fmt(r.mean),
                fmt(r.std),
                r.n_failed
            ));
        }
        out
    }
}

/// Positions entering the correlated vectors: unmasked, and not special
/// unless `include_special`.
pub fn eval_positions<T: Scalar>(input: &InputSequence<T>, include_special: bool) -> Vec<usize> {
    (0..input.len())
        .filter(|&i| input.mask[i])
        .filter(|&i| include_special || !input.special.as_ref().is_some_and(|s| s[i]))
        .collect()
}

fn submatrix_flat<T: Scalar>(m: &Matrix<T>, positions: &[usize]) -> Vec<f64> {
    positions
        .iter()
        .flat_map(|&i| positions.iter().map(move |&j| m[(i, j)].wide()))
        .collect()
}

type CellResult = std::result::Result<f64, ExampleFailure>;

fn failure(example: usize, err: &Error) -> ExampleFailure {
    ExampleFailure {
        example,
        code: err.code().to_string(),
        message: err.to_string(),
    }
}

/// Scores for one example, laid out `[method][layer]`.
fn evaluate_example<T: Scalar>(
    model: &Model<T>,
    input: &InputSequence<T>,
    example: usize,
    config: &EvalConfig,
    layers: &[usize],
) -> Vec<Vec<CellResult>> {
    let all_failed = |err: &Error| -> Vec<Vec<CellResult>> {
        config
            .methods
            .iter()
            .map(|_| layers.iter().map(|_| Err(failure(example, err))).collect())
            .collect()
    };
    let out = match model.forward(input) {
        Ok(out) => out,
        Err(e) => return all_failed(&e),
    };
    let positions = eval_positions(input, config.include_special);

    match config.oracle {
        OracleKind::SaliencyFd => {
            let target = target_class(input, &out.logits);
            let saliency = match saliency_grad_x_input(model, input, target, config.fd_step) {
                Ok(s) => s,
                Err(e) => return all_failed(&e),
            };
            let sal: Vec<f64> = positions.iter().map(|&i| saliency.scores[i].wide()).collect();
            config
                .methods
                .iter()
                .map(|&method| {
                    let mats: Result<Vec<Matrix<T>>> = compute_all_layers(method, &out.traces).and_then(|per| match config.aggregation {
                        Aggregation::Rollout => rollout(&per, false).map(|s| s.matrices),
                        Aggregation::None => Ok(per.into_iter().map(|a| a.values).collect()),
                    });
                    match mats {
                        Err(e) => layers.iter().map(|_| Err(failure(example, &e))).collect(),
                        Ok(mats) => layers
                            .iter()
                            .map(|&l| {
                                cls_row(&mats[l], &positions)
                                    .and_then(|cls| {
                                        let cls: Vec<f64> = cls.iter().map(|v| v.wide()).collect();
                                        spearman(&cls, &sal)
                                    })
                                    .map_err(|e| failure(example, &e))
                            })
                            .collect(),
                    }
                })
                .collect()
        }
        OracleKind::HtaFd => {
            let hta: Vec<Result<Vec<f64>>> = layers
                .iter()
                .map(|&l| {
                    hta_x_input(model, input, l, config.fd_step, config.hta_scaling)
                        .map(|h| submatrix_flat(&h.values, &positions))
                })
                .collect();
            config
                .methods
                .iter()
                .map(|&method| {
                    let per = compute_all_layers(method, &out.traces);
                    layers
                        .iter()
                        .zip(&hta)
                        .map(|(&l, h)| {
                            let h = h.as_ref().map_err(|e| failure(example, e))?;
                            let per = per.as_ref().map_err(|e| failure(example, e))?;
                            pearson(&submatrix_flat(&per[l].values, &positions), h).map_err(|e| failure(example, &e))
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// Runs the evaluation protocol over `dataset`. Per-example failures are
/// recorded in the report instead of aborting the batch.
pub fn method_report<T: Scalar>(model: &Model<T>, dataset: &[InputSequence<T>], config: &EvalConfig) -> Result<CorrelationReport> {
    if dataset.is_empty() {
        return Err(Error::Contract("evaluation dataset is empty".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::Contract("no methods selected".into()));
    }
    let num_layers = model.num_layers();
    let layers: Vec<usize> = match &config.layers {
        None => (0..num_layers).collect(),
        Some(ls) => {
            if let Some(&bad) = ls.iter().find(|&&l| l >= num_layers) {
                return Err(Error::LayerOutOfRange { layer: bad, num_layers });
            }
            ls.clone()
        }
    };

    let per_example: Vec<Vec<Vec<CellResult>>> = dataset
        .par_iter()
        .enumerate()
        .map(|(e, input)| evaluate_example(model, input, e, config, &layers))
        .collect();

    let mut rows = Vec::with_capacity(config.methods.len() * layers.len());
    for (mi, &method) in config.methods.iter().enumerate() {
        for (li, &layer) in layers.iter().enumerate() {
            let mut values = Vec::with_capacity(dataset.len());
            let mut failures = Vec::new();
            for cells in &per_example {
                match &cells[mi][li] {
                    Ok(v) => values.push(Some(*v)),
                    Err(f) => {
                        values.push(None);
                        failures.push(f.clone());
                    }
                }
            }
            rows.push(ReportRow::new(method, layer + 1, values, failures));
        }
    }

    Ok(CorrelationReport {
        kind: match config.oracle {
            OracleKind::SaliencyFd => CorrelationKind::Spearman,
            OracleKind::HtaFd => CorrelationKind::Pearson,
        },
        oracle: config.oracle,
        aggregation: config.aggregation,
        rollout_normalized: config.aggregation == Aggregation::Rollout,
        include_special: config.include_special,
        fd_step: config.fd_step,
        hta_scaling: config.hta_scaling,
        num_examples: dataset.len(),
        rows,
    })
}
