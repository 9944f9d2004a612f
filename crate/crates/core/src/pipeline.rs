//! End-to-end glue: normalize, build the vocabulary, encode, plan folds,
//! train the ensemble.

use serde::{Deserialize, Serialize};

use crate::corpus::{stratified_kfold, Corpus, FoldPlan};
use crate::error::Result;
use crate::exec::Execution;
use crate::model::ModelConfig;
use crate::normalizer::{normalize, NormalizerConfig};
use crate::tokenizer::{build_vocab, encode, EncodedExample, EncodedText, Vocabulary};
use crate::trainer::{train_kfold, Ensemble, FoldReport, TrainConfig, TrainingReport};

/// Model sizes that do not depend on the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 16,
            max_len: 32,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// `None` disables normalization.
    pub normalizer: Option<NormalizerConfig>,
    pub min_freq: usize,
    pub max_vocab: usize,
    pub model: ModelDims,
    pub train: TrainConfig,
    pub k: usize,
    pub fold_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            normalizer: Some(NormalizerConfig::default()),
            min_freq: 1,
            max_vocab: 20_000,
            model: ModelDims::default(),
            train: TrainConfig::default(),
            k: 5,
            fold_seed: 13,
        }
    }
}

pub fn prepare_text(text: &str, normalizer: Option<&NormalizerConfig>) -> String {
    match normalizer {
        Some(cfg) => normalize(text, cfg),
        None => text.to_string(),
    }
}

pub fn encode_text(
    text: &str,
    vocab: &Vocabulary,
    max_len: usize,
    normalizer: Option<&NormalizerConfig>,
) -> EncodedText {
    encode(&prepare_text(text, normalizer), vocab, max_len)
}

pub fn encode_corpus(
    corpus: &Corpus,
    vocab: &Vocabulary,
    max_len: usize,
    normalizer: Option<&NormalizerConfig>,
) -> Vec<EncodedExample> {
    corpus
        .examples
        .iter()
        .map(|ex| EncodedExample {
            input: encode_text(&ex.raw_text, vocab, max_len, normalizer),
            label: ex.label,
        })
        .collect()
}

pub struct PipelineOutput {
    pub ensemble: Ensemble,
    pub report: TrainingReport,
    pub plan: FoldPlan,
}

pub fn vocab_for(corpus: &Corpus, cfg: &PipelineConfig) -> Result<Vocabulary> {
    let texts: Vec<String> = corpus
        .examples
        .iter()
        .map(|e| prepare_text(&e.raw_text, cfg.normalizer.as_ref()))
        .collect();
    build_vocab(texts.iter().map(String::as_str), cfg.min_freq, cfg.max_vocab)
}

/// The vocabulary is built from the whole corpus before folds are split;
/// token identities carry no label information.
pub fn run(
    corpus: &Corpus,
    cfg: &PipelineConfig,
    exec: Execution,
    on_fold_done: Option<&(dyn Fn(&FoldReport) + Sync)>,
) -> Result<PipelineOutput> {
    let vocab = vocab_for(corpus, cfg)?;
    let encoded = encode_corpus(corpus, &vocab, cfg.model.max_len, cfg.normalizer.as_ref());
    let plan = stratified_kfold(&corpus.labels(), cfg.k, cfg.fold_seed)?;
    let model = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: cfg.model.embed_dim,
        hidden_dim: cfg.model.hidden_dim,
        class_count: corpus.schema.class_count(),
        max_len: cfg.model.max_len,
        seed: cfg.model.seed,
    };
    let ids: Vec<String> = corpus.examples.iter().map(|e| e.id.clone()).collect();
    let (ensemble, report) = train_kfold(
        &encoded,
        &ids,
        &plan,
        &corpus.schema,
        &vocab,
        &model,
        &cfg.train,
        exec,
        on_fold_done,
    )?;
    Ok(PipelineOutput { ensemble, report, plan })
}
