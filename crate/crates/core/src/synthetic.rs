//! Generated corpora with a known answer: each class owns a set of keyword
//! tokens, every document mixes a few of its class keywords with shared
//! Bangla noise tokens. Keywords are sometimes upper-cased or split by a
//! zero-width space so that normalization has something to undo.

use crate::corpus::{LabelSchema, LabeledExample};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub examples: usize,
    pub keywords_per_class: usize,
    pub noise_vocab: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Keywords per document, inclusive range.
    pub min_keywords: usize,
    pub max_keywords: usize,
    /// Relative class frequencies; empty means uniform.
    pub class_weights: Vec<f64>,
    /// Probability that a keyword is written in upper case.
    pub upper_case_rate: f64,
    /// Probability that a keyword carries an embedded U+200B.
    pub zero_width_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            examples: 3000,
            keywords_per_class: 6,
            noise_vocab: 60,
            min_tokens: 8,
            max_tokens: 16,
            min_keywords: 2,
            max_keywords: 3,
            class_weights: vec![0.30, 0.22, 0.16, 0.14, 0.10, 0.08],
            upper_case_rate: 0.2,
            zero_width_rate: 0.1,
            seed: 2025,
        }
    }
}

const CONSONANTS: [char; 20] = [
    'ক', 'খ', 'গ', 'ঘ', 'চ', 'ছ', 'জ', 'ঝ', 'ট', 'ঠ', 'ড', 'ঢ', 'ত', 'থ', 'দ', 'ধ', 'ন', 'প', 'ফ', 'ব',
];
const VOWEL_SIGNS: [char; 5] = ['া', 'ি', 'ী', 'ু', 'ে'];

/// Deterministic Bangla-looking noise token number `i`.
pub fn noise_token(i: usize) -> String {
    let a = CONSONANTS[i % CONSONANTS.len()];
    let v = VOWEL_SIGNS[(i / CONSONANTS.len()) % VOWEL_SIGNS.len()];
    let b = CONSONANTS[(i * 7 + 3) % CONSONANTS.len()];
    let suffix = i / (CONSONANTS.len() * VOWEL_SIGNS.len());
    if suffix == 0 {
        format!("{a}{v}{b}")
    } else {
        format!("{a}{v}{b}{suffix}")
    }
}

/// Canonical (normalized) keyword `k` of class `c`.
pub fn keyword(class: usize, k: usize) -> String {
    format!("kw{class}x{k}")
}

fn pick_class(rng: &mut SeededRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.unit_f64() * total;
    for (c, &w) in weights.iter().enumerate() {
        if u < w {
            return c;
        }
        u -= w;
    }
    weights.len() - 1
}

fn decorate(rng: &mut SeededRng, word: String, cfg: &SyntheticConfig) -> String {
    let mut w = word;
    if rng.unit_f64() < cfg.upper_case_rate {
        w = w.to_uppercase();
    }
    if rng.unit_f64() < cfg.zero_width_rate {
        let cut = 1 + rng.below(w.len() - 1);
        w.insert(cut, '\u{200B}');
    }
    w
}

pub fn generate(schema: &LabelSchema, cfg: &SyntheticConfig) -> Vec<LabeledExample> {
    let c = schema.class_count();
    let weights: Vec<f64> = if cfg.class_weights.len() == c {
        cfg.class_weights.clone()
    } else {
        vec![1.0; c]
    };
    let noise: Vec<String> = (0..cfg.noise_vocab).map(noise_token).collect();
    let mut rng = SeededRng::new(cfg.seed);
    let mut out = Vec::with_capacity(cfg.examples);
    for i in 0..cfg.examples {
        let label = pick_class(&mut rng, &weights);
        let len = cfg.min_tokens + rng.below(cfg.max_tokens - cfg.min_tokens + 1);
        let kws = cfg.min_keywords + rng.below(cfg.max_keywords - cfg.min_keywords + 1);
        let mut tokens: Vec<String> = (0..len.saturating_sub(kws)).map(|_| rng.pick(&noise).clone()).collect();
        for _ in 0..kws {
            let kw = keyword(label, rng.below(cfg.keywords_per_class));
            let kw = decorate(&mut rng, kw, cfg);
            let at = rng.below(tokens.len() + 1);
            tokens.insert(at, kw);
        }
        let mut text = tokens.join(" ");
        if rng.unit_f64() < 0.1 {
            text.push_str(" !!!!!");
        }
        out.push(LabeledExample::new(format!("s{i}"), text, label));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use crate::normalizer::{normalize, NormalizerConfig};

    #[test]
    fn deterministic_and_labelled_by_keywords() {
        let schema = Task::TypeOfHate.schema();
        let cfg = SyntheticConfig {
            examples: 200,
            ..SyntheticConfig::default()
        };
        let a = generate(&schema, &cfg);
        assert_eq!(a, generate(&schema, &cfg));
        let norm = NormalizerConfig::default();
        for ex in &a {
            let text = normalize(&ex.raw_text, &norm);
            let prefix = format!("kw{}x", ex.label);
            assert!(text.split(' ').any(|t| t.starts_with(&prefix)), "{text}");
            for other in (0..6).filter(|&c| c != ex.label) {
                assert!(!text.contains(&format!("kw{other}x")));
            }
        }
    }

    #[test]
    fn noise_tokens_are_distinct() {
        let toks: std::collections::HashSet<String> = (0..300).map(noise_token).collect();
        assert_eq!(toks.len(), 300);
    }
}
