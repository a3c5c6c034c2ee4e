#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use globenc::encoder::Model;
use globenc::io::manifest::{save_model, TokenizerMeta};
use globenc::{Activation, EncoderWeights, InputSequence, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY_SEED: u64 = 20_221;

const WORDS: [&str; 32] = [
    "[PAD]", "[CLS]", "[SEP]", "[UNK]", "the", "a", "movie", "film", "was", "is", "not", "very", "good", "bad",
    "great", "boring", "plot", "acting", "and", "but", "i", "loved", "hated", "it", "fun", "dull", "story", "cast",
    "slow", "fine", "!", ".",
];

pub const TOY_INPUTS: &str = r#"{"tokens": [1, 4, 6, 8, 14, 31, 2], "label": 1, "text": "the movie was great .", "special": [true, false, false, false, false, false, true]}
{"tokens": [1, 20, 22, 23, 2, 0, 0, 0], "mask": [1, 1, 1, 1, 1, 0, 0, 0], "label": 0, "text": "i hated it", "special": [true, false, false, false, true, false, false, false]}
{"tokens": [1, 5, 16, 9, 10, 11, 12, 19, 17, 9, 29, 2], "label": 0, "special": [true, false, false, false, false, false, false, false, false, false, false, true]}
{"tokens": [1, 7, 24, 18, 26, 30, 2], "special": [true, false, false, false, false, false, true]}
{"embeddings": [[0.5, -0.2, 0.1, 0.9, -0.4, 0.3, 0.0, -0.7], [0.2, 0.8, -0.5, 0.1, 0.6, -0.3, 0.4, 0.2], [-0.6, 0.1, 0.7, -0.2, 0.3, 0.5, -0.1, 0.4], [0.3, -0.4, 0.2, 0.6, -0.8, 0.1, 0.9, -0.3]], "label": 1, "token_labels": ["<s>", "alpha", "beta", "</s>"], "special": [true, false, false, true]}
"#;

pub fn toy_config() -> ModelConfig {
    ModelConfig::tiny(3, 8, 2)
}

pub fn toy_model() -> Model<f64> {
    let config = toy_config();
    let weights = EncoderWeights::random(&config, &mut ChaCha8Rng::seed_from_u64(TOY_SEED));
    Model::new(config, weights).expect("toy model is valid")
}

pub fn toy_tokenizer() -> TokenizerMeta {
    TokenizerMeta {
        vocab: Some(WORDS.iter().map(|w| w.to_string()).collect()),
        cls_id: Some(1),
        sep_id: Some(2),
        pad_id: Some(0),
    }
}

pub fn write_toy(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    save_model(dir, &toy_model(), Some(&toy_tokenizer())).unwrap();
    fs::write(dir.join("inputs.jsonl"), TOY_INPUTS).unwrap();
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy")
}

/// A random tiny model (L ≤ 3, d ≤ 16, H ≤ 4) and input (n ≤ 8, sometimes
/// right-padded), fully determined by `seed`.
pub fn random_case(seed: u64) -> (Model<f64>, InputSequence<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.gen_range(1..=3);
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let head_size = rng.gen_range(1..=16 / heads);
    let mut config = ModelConfig::tiny(layers, heads * head_size, heads);
    config.activation = [Activation::Gelu, Activation::GeluErf, Activation::Relu][rng.gen_range(0..3)];
    let weights = EncoderWeights::random(&config, &mut rng);
    let n = rng.gen_range(1..=8);
    let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..config.vocab_size)).collect();
    let mut mask = vec![true; n];
    if n > 2 && rng.gen_bool(0.3) {
        let pad = rng.gen_range(1..n - 1);
        for m in &mut mask[n - pad..] {
            *m = false;
        }
    }
    let model = Model::new(config, weights).expect("random model is valid");
    (model, InputSequence::from_ids(ids).with_mask(mask))
}
