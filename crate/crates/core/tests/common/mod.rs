#![allow(dead_code)]

use banglahate::model::{forward, loss, Matrix, ModelConfig, Parameters};
use banglahate::rng::SeededRng;
use banglahate::tokenizer::{EncodedText, PAD};

pub fn grad_check_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        embed_dim: 8,
        hidden_dim: 16,
        class_count: 6,
        max_len: 12,
        seed,
    }
}

/// Parameters with entries uniform in (-scale, scale), PAD row zero.
pub fn random_params(cfg: &ModelConfig, rng: &mut SeededRng, scale: f64) -> Parameters {
    let mut p = banglahate::model::init_params(cfg).unwrap();
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.uniform(-scale, scale);
        }
    }
    p.embedding.row_mut(PAD as usize).fill(0.0);
    p
}

/// Between 1 and `max_len` real tokens, right-padded.
pub fn random_input(cfg: &ModelConfig, rng: &mut SeededRng) -> EncodedText {
    let n = 1 + rng.below(cfg.max_len);
    let mut ids: Vec<u32> = (0..n).map(|_| 1 + rng.below(cfg.vocab_size - 1) as u32).collect();
    ids.resize(cfg.max_len, PAD);
    EncodedText {
        mask: ids.iter().map(|&i| i != PAD).collect(),
        ids,
    }
}

pub fn loss_at(params: &Parameters, input: &EncodedText, offset: Option<&Matrix>, label: usize) -> f64 {
    let (logits, _) = forward(params, input, offset).unwrap();
    loss(&logits, label)
}
