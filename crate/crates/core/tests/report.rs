mod common;

use globenc::attribution::{compute_all_layers, Method};
use globenc::io::{load_inputs, load_model};
use globenc::metrics::{eval_positions, method_report, mean_std, Aggregation, EvalConfig, OracleKind};
use globenc::oracle::{hta_x_input, saliency_grad_x_input, target_class, FdStep, HtaScaling};
use globenc::rollout::{cls_row, rollout};
use globenc::{pearson, spearman, EncoderWeights, InputSequence, Model64, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy() -> (Model64, Vec<InputSequence<f64>>) {
    let dir = common::fixture_dir();
    let model = load_model::<f64>(&dir).unwrap().model;
    let inputs = load_inputs(&dir.join("inputs.jsonl"), &model.config).unwrap();
    (model, inputs)
}

/// Saliency protocol rebuilt from public operations only.
fn manual_saliency(model: &Model64, inputs: &[InputSequence<f64>], method: Method, layer: usize, step: FdStep) -> Vec<f64> {
    inputs
        .iter()
        .map(|input| {
            let out = model.forward(input).unwrap();
            let per = compute_all_layers(method, &out.traces).unwrap();
            let stack = rollout(&per, false).unwrap();
            let pos = eval_positions(input, false);
            let cls = cls_row(&stack.matrices[layer], &pos).unwrap();
            let target = target_class(input, &out.logits);
            let sal = saliency_grad_x_input(model, input, target, step).unwrap();
            let sal: Vec<f64> = pos.iter().map(|&i| sal.scores[i]).collect();
            spearman(&cls, &sal).unwrap()
        })
        .collect()
}

#[test]
fn saliency_report_matches_manual_composition() {
    let (model, inputs) = toy();
    let methods = vec![Method::W, Method::NRes, Method::NEnc];
    let report = method_report(&model, &inputs, &EvalConfig::new(methods.clone(), OracleKind::SaliencyFd)).unwrap();
    assert_eq!(report.rows.len(), methods.len() * 3);
    for &method in &methods {
        for layer in 0..3 {
            let manual = manual_saliency(&model, &inputs, method, layer, FdStep::default());
            let row = report.row(method, layer + 1).unwrap();
            let got: Vec<f64> = row.values.iter().map(|v| v.unwrap()).collect();
            assert_eq!(got, manual, "{method} layer {}", layer + 1);
            let (mean, std) = mean_std(&manual).unwrap();
            assert_eq!(row.mean, Some(mean));
            assert_eq!(row.std, Some(std));
            assert_eq!(row.n_failed, 0);
        }
    }
}

#[test]
fn hta_report_matches_manual_composition() {
    let (model, inputs) = toy();
    let mut config = EvalConfig::new(vec![Method::NEnc], OracleKind::HtaFd);
    config.layers = Some(vec![1]);
    let report = method_report(&model, &inputs, &config).unwrap();
    assert_eq!(report.rows.len(), 1);
    for (e, input) in inputs.iter().enumerate() {
        let out = model.forward(input).unwrap();
        let per = compute_all_layers(Method::NEnc, &out.traces).unwrap();
        let hta = hta_x_input(&model, input, 1, FdStep::default(), HtaScaling::Column).unwrap();
        let pos = eval_positions(input, false);
        let flat = |m: &globenc::Matrix64| -> Vec<f64> { pos.iter().flat_map(|&i| pos.iter().map(move |&j| m[(i, j)])).collect() };
        let expected = pearson(&flat(&per[1].values), &flat(&hta.values)).unwrap();
        assert_eq!(report.rows[0].values[e], Some(expected));
    }
}

#[test]
fn last_rollout_layer_equals_end_to_end_number() {
    let (model, inputs) = toy();
    let full = method_report(&model, &inputs, &EvalConfig::new(vec![Method::NEnc], OracleKind::SaliencyFd)).unwrap();
    let mut only_last = EvalConfig::new(vec![Method::NEnc], OracleKind::SaliencyFd);
    only_last.layers = Some(vec![2]);
    let last = method_report(&model, &inputs, &only_last).unwrap();
    assert_eq!(full.row(Method::NEnc, 3).unwrap(), &last.rows[0]);
}

#[test]
fn single_example_single_layer_report() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = ModelConfig::tiny(1, 8, 2);
    let weights = EncoderWeights::random(&config, &mut rng);
    let model = Model64::new(config, weights).unwrap();
    let input = InputSequence::from_ids(vec![1, 4, 9, 12, 2]).with_label(0);
    let report = method_report(&model, &[input], &EvalConfig::new(vec![Method::W], OracleKind::SaliencyFd)).unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert_eq!(row.values.len(), 1);
    assert_eq!(row.mean, row.values[0]);
    assert_eq!(row.std, Some(0.0));
}

#[test]
fn identical_methods_give_identical_rows() {
    let (model, inputs) = toy();
    let report = method_report(&model, &inputs, &EvalConfig::new(vec![Method::NEnc, Method::NEnc], OracleKind::SaliencyFd)).unwrap();
    for layer in 0..3 {
        let a = &report.rows[layer];
        let b = &report.rows[3 + layer];
        assert_eq!(a.values, b.values);
        assert_eq!((a.mean, a.std), (b.mean, b.std));
    }
}

#[test]
fn reports_are_deterministic() {
    let (model, inputs) = toy();
    let config = EvalConfig::new(Method::ALL.to_vec(), OracleKind::SaliencyFd);
    let a = method_report(&model, &inputs, &config).unwrap();
    let b = method_report(&model, &inputs, &config).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn failures_are_counted_not_fatal() {
    let (model, mut inputs) = toy();
    // A single non-special token leaves a length-1 vector: correlation undefined.
    inputs.push(InputSequence::from_ids(vec![1, 5, 2]).with_mask(vec![true, true, true]));
    inputs.last_mut().unwrap().special = Some(vec![true, false, true]);
    let report = method_report(&model, &inputs, &EvalConfig::new(vec![Method::NEnc], OracleKind::SaliencyFd)).unwrap();
    for row in &report.rows {
        assert_eq!(row.n_failed, 1);
        assert_eq!(row.n_examples, inputs.len() - 1);
        assert_eq!(row.values.last(), Some(&None));
        assert_eq!(row.failures[0].example, inputs.len() - 1);
        assert_eq!(row.failures[0].code, "undefined_correlation");
    }
}

#[test]
fn individual_layers_use_unaggregated_matrices() {
    let (model, inputs) = toy();
    let mut config = EvalConfig::new(vec![Method::NEnc], OracleKind::SaliencyFd);
    config.aggregation = Aggregation::None;
    let report = method_report(&model, &inputs, &config).unwrap();
    let rolled = method_report(&model, &inputs, &EvalConfig::new(vec![Method::NEnc], OracleKind::SaliencyFd)).unwrap();
    // Layer 1 is the same either way; deeper layers differ.
    assert_eq!(report.rows[0].values, rolled.rows[0].values);
    assert_ne!(report.rows[2].values, rolled.rows[2].values);
}

#[test]
fn f32_and_f64_reports_agree_roughly() {
    let dir = common::fixture_dir();
    let m32 = load_model::<f32>(&dir).unwrap().model;
    let in32 = load_inputs::<f32>(&dir.join("inputs.jsonl"), &m32.config).unwrap();
    let (m64, in64) = toy();
    let mut cfg = EvalConfig::new(vec![Method::NEnc], OracleKind::HtaFd);
    cfg.fd_step = FdStep::RelativeToRms(1e-2);
    let a = method_report(&m32, &in32, &cfg).unwrap();
    let b = method_report(&m64, &in64, &cfg).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert!((ra.mean.unwrap() - rb.mean.unwrap()).abs() < 1e-2, "{:?} vs {:?}", ra.mean, rb.mean);
    }
}
