//! Command-line surface: `run`, `eval` and `outliers`.
//!
//! Exit codes: 0 on success, 1 on a compute or I/O error (a JSON error record
//! is written to stderr), 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::attribution::{compute_all_layers, Method};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::io::heatmap::{render_svg, HeatmapSpec};
use crate::io::inputs::load_inputs;
use crate::io::manifest::{load_model, TokenizerMeta};
use crate::metrics::{layer_outliers, ln_outlier_correlation, method_report, Aggregation, EvalConfig, OracleKind, OutlierCorrelation, OutlierDims, OutlierSet};
use crate::model::{InputSequence, TokenInput};
use crate::oracle::{FdStep, HtaScaling};
use crate::rollout::{cls_row, rollout};

pub const THREADS_ENV: &str = "GLOBENC_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "globenc", version, about = "Token attribution for post-LN transformer encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute attribution matrices for every input.
    Run(RunArgs),
    /// Correlate attribution methods with a gradient-based oracle.
    Eval(EvalArgs),
    /// Report outlier LayerNorm dimensions per layer.
    Outliers(OutliersArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregateArg {
    None,
    Rollout,
}

impl From<AggregateArg> for Aggregation {
    fn from(a: AggregateArg) -> Self {
        match a {
            AggregateArg::None => Aggregation::None,
            AggregateArg::Rollout => Aggregation::Rollout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleArg {
    SaliencyFd,
    HtaFd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScalingArg {
    Column,
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DimsArg {
    Union,
    All,
}

/// `all`, or a single 1-based layer number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSelection {
    All,
    One(usize),
}

fn parse_layers(s: &str) -> std::result::Result<LayerSelection, String> {
    if s == "all" {
        return Ok(LayerSelection::All);
    }
    match s.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(LayerSelection::One(k)),
        _ => Err(format!("expected `all` or a layer number >= 1, got `{s}`")),
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn parse_step(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(h) if h > 0.0 && h.is_finite() => Ok(h),
        _ => Err(format!("expected a positive finite step, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Directory holding manifest.json and tensors.bin.
    #[arg(long)]
    pub model: PathBuf,
    /// JSON-lines input file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, value_enum, default_value = "rollout")]
    pub aggregate: AggregateArg,
    #[arg(long, value_parser = parse_layers, default_value = "all")]
    pub layers: LayerSelection,
    /// Output JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// SVG heatmap for the first input; further inputs get `<stem>.<k>.svg`.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    /// Keep special tokens in CLS attributions and heatmaps.
    #[arg(long)]
    pub include_special: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_method)]
    pub methods: Vec<Method>,
    #[arg(long, value_enum)]
    pub oracle: OracleArg,
    /// Absolute finite-difference step. Defaults to 1e-3 times the RMS of the perturbed input.
    #[arg(long, value_parser = parse_step)]
    pub fd_step: Option<f64>,
    /// CSV report path; the JSON report goes next to it with a `.json` extension.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value = "rollout")]
    pub aggregate: AggregateArg,
    #[arg(long, value_parser = parse_layers, default_value = "all")]
    pub layers: LayerSelection,
    #[arg(long)]
    pub include_special: bool,
    #[arg(long, value_enum, default_value = "column")]
    pub hta_scaling: ScalingArg,
}

#[derive(Debug, Args)]
pub struct OutliersArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Dimensions entering the LN1/LN2 scale correlation.
    #[arg(long, value_enum, default_value = "union")]
    pub dims: DimsArg,
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    error: ErrorBody<'a>,
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

pub fn error_record(err: &Error) -> String {
    serde_json::to_string(&ErrorRecord {
        error: ErrorBody {
            code: err.code(),
            message: err.to_string(),
        },
    })
    .unwrap_or_else(|_| String::from("{\"error\":{\"code\":\"internal\",\"message\":\"\"}}"))
}

#[derive(Debug, Serialize)]
pub struct RunOutput {
    pub method: Method,
    pub aggregate: Aggregation,
    /// Rollout row-normalizes each layer before composing.
    pub normalized: bool,
    pub fixed_residual: bool,
    pub layer_numbering: &'static str,
    pub num_layers: usize,
    pub include_special: bool,
    pub examples: Vec<RunExample>,
}

#[derive(Debug, Serialize)]
pub struct RunExample {
    pub index: usize,
    pub seq_len: usize,
    pub tokens: Vec<String>,
    pub mask: Vec<bool>,
    pub layers: Vec<RunLayer>,
}

#[derive(Debug, Serialize)]
pub struct RunLayer {
    /// 1-based.
    pub layer: usize,
    /// n×n, row-major; entry `[i][j]` is token `j`'s influence on token `i`.
    pub matrix: Vec<Vec<f64>>,
    pub cls_positions: Vec<usize>,
    /// Row 0 over `cls_positions`, renormalized to sum to one.
    pub cls_attribution: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct OutlierOutput {
    layer_numbering: &'static str,
    dims: OutlierDims,
    layers: Vec<OutlierLayer>,
}

#[derive(Debug, Serialize)]
struct OutlierLayer {
    sets: [OutlierSet; 2],
    correlation: OutlierCorrelation,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            EXIT_COMPUTE
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    // A second call in the same process finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Run(args) => run_command(args),
        Command::Eval(args) => eval_command(args),
        Command::Outliers(args) => outliers_command(args),
    }
}

fn selected_layers(sel: LayerSelection, num_layers: usize) -> Result<Vec<usize>> {
    match sel {
        LayerSelection::All => Ok((0..num_layers).collect()),
        LayerSelection::One(k) if k <= num_layers => Ok(vec![k - 1]),
        LayerSelection::One(k) => Err(Error::LayerOutOfRange { layer: k, num_layers }),
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn token_labels(input: &InputSequence<f64>, tokenizer: Option<&TokenizerMeta>) -> Vec<String> {
    if let Some(labels) = &input.token_labels {
        return labels.clone();
    }
    let vocab = tokenizer.and_then(|t| t.vocab.as_ref());
    match (&input.tokens, vocab) {
        (TokenInput::Ids(ids), Some(vocab)) => ids
            .iter()
            .map(|&id| vocab.get(id).cloned().unwrap_or_else(|| format!("#{id}")))
            .collect(),
        (TokenInput::Ids(ids), None) => ids.iter().map(|id| format!("#{id}")).collect(),
        (TokenInput::Embeddings(m), _) => (0..m.rows()).map(|i| format!("t{i}")).collect(),
    }
}

fn run_example(
    model: &Model<f64>,
    input: &InputSequence<f64>,
    index: usize,
    args: &RunArgs,
    layers: &[usize],
    tokenizer: Option<&TokenizerMeta>,
) -> Result<RunExample> {
    let out = model.forward(input)?;
    let per_layer = compute_all_layers(args.method, &out.traces)?;
    let matrices: Vec<_> = match args.aggregate {
        AggregateArg::Rollout => rollout(&per_layer, false)?.matrices,
        AggregateArg::None => per_layer.into_iter().map(|a| a.values).collect(),
    };
    let positions = crate::metrics::eval_positions(input, args.include_special);
    let layers = layers
        .iter()
        .map(|&l| {
            let m = &matrices[l];
            Ok(RunLayer {
                layer: l + 1,
                matrix: m.to_nested(),
                cls_positions: positions.clone(),
                cls_attribution: cls_row(m, &positions)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunExample {
        index,
        seq_len: input.len(),
        tokens: token_labels(input, tokenizer),
        mask: input.mask.clone(),
        layers,
    })
}

fn heatmap_path(base: &Path, index: usize) -> PathBuf {
    if index == 0 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    base.with_file_name(format!("{stem}.{index}.svg"))
}

pub fn run_command(args: &RunArgs) -> Result<()> {
    let loaded = load_model::<f64>(&args.model)?;
    let model = &loaded.model;
    let inputs = load_inputs::<f64>(&args.input, &model.config)?;
    let layers = selected_layers(args.layers, model.num_layers())?;
    let tokenizer = loaded.tokenizer.as_ref();

    let examples = inputs
        .par_iter()
        .enumerate()
        .map(|(i, input)| run_example(model, input, i, args, &layers, tokenizer))
        .collect::<Vec<Result<RunExample>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let output = RunOutput {
        method: args.method,
        aggregate: args.aggregate.into(),
        normalized: args.aggregate == AggregateArg::Rollout,
        fixed_residual: false,
        layer_numbering: "1-based",
        num_layers: model.num_layers(),
        include_special: args.include_special,
        examples,
    };
    write_json(&args.out, &output)?;

    if let Some(base) = &args.heatmap {
        for ex in &output.examples {
            let cols = ex.layers.first().map(|l| l.cls_positions.clone()).unwrap_or_default();
            let spec = HeatmapSpec::new(
                ex.layers.iter().map(|l| format!("L{}", l.layer)).collect(),
                cols.iter().map(|&j| ex.tokens[j].clone()).collect(),
                &ex.layers.iter().map(|l| l.cls_attribution.clone()).collect::<Vec<_>>(),
            )?;
            fs::write(heatmap_path(base, ex.index), render_svg(&spec))?;
        }
    }
    Ok(())
}

pub fn eval_command(args: &EvalArgs) -> Result<()> {
    let loaded = load_model::<f64>(&args.model)?;
    let model = &loaded.model;
    let inputs = load_inputs::<f64>(&args.input, &model.config)?;
    let oracle = match args.oracle {
        OracleArg::SaliencyFd => OracleKind::SaliencyFd,
        OracleArg::HtaFd => OracleKind::HtaFd,
    };
    let mut config = EvalConfig::new(args.methods.clone(), oracle);
    config.aggregation = args.aggregate.into();
    config.layers = match args.layers {
        LayerSelection::All => None,
        sel => Some(selected_layers(sel, model.num_layers())?),
    };
    if let Some(h) = args.fd_step {
        config.fd_step = FdStep::Absolute(h);
    }
    config.include_special = args.include_special;
    config.hta_scaling = match args.hta_scaling {
        ScalingArg::Column => HtaScaling::Column,
        ScalingArg::Row => HtaScaling::Row,
    };

    let report = method_report(model, &inputs, &config)?;
    fs::write(&args.report, report.to_csv())?;
    write_json(&args.report.with_extension("json"), &report)?;
    Ok(())
}

pub fn outliers_command(args: &OutliersArgs) -> Result<()> {
    let loaded = load_model::<f64>(&args.model)?;
    let dims = match args.dims {
        DimsArg::Union => OutlierDims::Union,
        DimsArg::All => OutlierDims::All,
    };
    let layers = loaded
        .model
        .weights
        .layers
        .iter()
        .enumerate()
        .map(|(l, w)| OutlierLayer {
            sets: layer_outliers(l, w),
            correlation: ln_outlier_correlation(l, w, dims),
        })
        .collect();
    write_json(
        &args.out,
        &OutlierOutput {
            layer_numbering: "0-based",
            dims,
            layers,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_selection_parsing() {
        assert_eq!(parse_layers("all"), Ok(LayerSelection::All));
        assert_eq!(parse_layers("3"), Ok(LayerSelection::One(3)));
        assert!(parse_layers("0").is_err());
        assert!(parse_layers("x").is_err());
        assert_eq!(selected_layers(LayerSelection::One(3), 3).unwrap(), vec![2]);
        assert!(selected_layers(LayerSelection::One(4), 3).is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["globenc", "run", "--method", "bogus"]), EXIT_USAGE);
        assert_eq!(main_with_args(["globenc", "frobnicate"]), EXIT_USAGE);
        assert_eq!(
            main_with_args([
                "globenc", "eval", "--model", "m", "--input", "i", "--methods", "n,zzz", "--oracle", "saliency-fd", "--report", "r.csv"
            ]),
            EXIT_USAGE
        );
    }

    #[test]
    fn missing_model_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let code = main_with_args([
            OsString::from("globenc"),
            "run".into(),
            "--model".into(),
            dir.path().join("nope").into(),
            "--input".into(),
            dir.path().join("in.jsonl").into(),
            "--method".into(),
            "n_enc".into(),
            "--out".into(),
            dir.path().join("out.json").into(),
        ]);
        assert_eq!(code, EXIT_COMPUTE);
    }

    #[test]
    fn error_record_shape() {
        let rec = error_record(&Error::EmptyMask);
        let v: serde_json::Value = serde_json::from_str(&rec).unwrap();
        assert_eq!(v["error"]["code"], "empty_mask");
        assert!(v["error"]["message"].is_string());
    }

    #[test]
    fn heatmap_paths() {
        assert_eq!(heatmap_path(Path::new("/tmp/h.svg"), 0), PathBuf::from("/tmp/h.svg"));
        assert_eq!(heatmap_path(Path::new("/tmp/h.svg"), 2), PathBuf::from("/tmp/h.2.svg"));
    }
}
