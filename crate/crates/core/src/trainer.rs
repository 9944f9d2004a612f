//! Mini-batch momentum SGD with the FGSM schedule, K-fold orchestration and
//! probability-averaging ensembles.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::{clean_step, combined_step, fgsm_delta, should_perturb, AdvConfig};
use crate::corpus::{FoldPlan, LabelSchema};
use crate::error::{Error, Result};
use crate::evaluation::{confusion, micro_f1};
use crate::exec::{self, Execution};
use crate::model::{backward, forward, init_params, softmax, Gradients, ModelConfig, Parameters};
use crate::normalizer::NormalizerConfig;
use crate::rng::SeededRng;
use crate::tokenizer::{EncodedExample, EncodedText, Vocabulary, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub adv: AdvConfig,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 42,
            adv: AdvConfig::default(),
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        self.adv.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub perturbed: bool,
    /// Mean per-example training objective over the epoch.
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub epochs: Vec<EpochLog>,
}

/// Dense batch gradient sum plus the momentum buffers.
struct Optimizer {
    velocity: [Vec<f64>; 5],
    batch: [Vec<f64>; 5],
    embed_dim: usize,
}

impl Optimizer {
    fn new(params: &Parameters) -> Self {
        let zeros = |t: &[f64]| vec![0.0; t.len()];
        let t = params.tensors();
        Self {
            velocity: [zeros(t[0]), zeros(t[1]), zeros(t[2]), zeros(t[3]), zeros(t[4])],
            batch: [zeros(t[0]), zeros(t[1]), zeros(t[2]), zeros(t[3]), zeros(t[4])],
            embed_dim: params.config.embed_dim,
        }
    }

    fn accumulate(&mut self, g: &Gradients) {
        let d = self.embed_dim;
        for (&row, values) in &g.embedding {
            let start = row as usize * d;
            for (acc, &v) in self.batch[0][start..start + d].iter_mut().zip(values) {
                *acc += v;
            }
        }
        for (acc, src) in self.batch[1..]
            .iter_mut()
            .zip([g.w1.as_slice(), &g.b1, g.w2.as_slice(), &g.b2])
        {
            for (a, &v) in acc.iter_mut().zip(src) {
                *a += v;
            }
        }
    }

    /// `v <- momentum * v - lr * mean_grad; theta <- theta + v`, skipping the PAD row.
    fn step(&mut self, params: &mut Parameters, batch_len: usize, lr: f64, momentum: f64) {
        let pad = PAD as usize * self.embed_dim..(PAD as usize + 1) * self.embed_dim;
        let n = batch_len as f64;
        for (t, ((theta, v), g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.velocity.iter_mut())
            .zip(self.batch.iter_mut())
            .enumerate()
        {
            for (i, ((p, vel), grad)) in theta.iter_mut().zip(v.iter_mut()).zip(g.iter_mut()).enumerate() {
                if t == 0 && pad.contains(&i) {
                    *grad = 0.0;
                    continue;
                }
                *vel = momentum * *vel - lr * (*grad / n);
                *p += *vel;
                *grad = 0.0;
            }
        }
    }
}

/// Trains one model from `model_config.seed`-initialized parameters.
///
/// Per epoch `e` (from 1): optionally reshuffle, then for each batch use the
/// FGSM objective when `should_perturb(e, schedule)` and the clean loss
/// otherwise, average gradients over the batch and take one momentum step.
pub fn train_single(
    train_set: &[EncodedExample],
    config: &TrainConfig,
    model_config: &ModelConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut params = init_params(model_config)?;
    let mut opt = Optimizer::new(&params);
    let mut rng = SeededRng::new(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let perturb = should_perturb(epoch, config.adv.schedule)?;
        if config.shuffle_each_epoch {
            rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &train_set[i];
                let (loss, grads) = if perturb {
                    let out = combined_step(&params, &ex.input, ex.label, &config.adv)?;
                    (out.loss, out.grads)
                } else {
                    clean_step(&params, &ex.input, ex.label)?
                };
                if !loss.is_finite() || !grads.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b + 1,
                        loss,
                    });
                }
                batch_loss += loss;
                opt.accumulate(&grads);
            }
            opt.step(&mut params, batch.len(), config.learning_rate, config.momentum);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    loss: batch_loss / batch.len() as f64,
                });
            }
            loss_sum += batch_loss;
        }
        logs.push(EpochLog {
            epoch,
            perturbed: perturb,
            mean_loss: loss_sum / train_set.len() as f64,
        });
    }
    Ok(TrainOutcome { params, epochs: logs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub fold: usize,
    pub params: Parameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Member>,
    pub schema: LabelSchema,
    pub vocab: Vocabulary,
    pub config: ModelConfig,
}

impl Ensemble {
    pub fn new(members: Vec<Member>, schema: LabelSchema, vocab: Vocabulary, config: ModelConfig) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one member"));
        }
        for m in &members {
            let c = &m.params.config;
            let same = c.vocab_size == config.vocab_size
                && c.embed_dim == config.embed_dim
                && c.hidden_dim == config.hidden_dim
                && c.class_count == config.class_count
                && c.max_len == config.max_len;
            if !same {
                return Err(Error::SchemaMismatch(format!(
                    "member {} has a different model shape",
                    m.fold
                )));
            }
        }
        if config.vocab_size != vocab.len() {
            return Err(Error::SchemaMismatch(format!(
                "model vocab_size {} but vocabulary has {} entries",
                config.vocab_size,
                vocab.len()
            )));
        }
        if config.class_count != schema.class_count() {
            return Err(Error::SchemaMismatch(format!(
                "model has {} classes, schema has {}",
                config.class_count,
                schema.class_count()
            )));
        }
        Ok(Self {
            members,
            schema,
            vocab,
            config,
        })
    }
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Mean of the members' softmax outputs; ties go to the lowest class index.
pub fn ensemble_predict(ensemble: &Ensemble, input: &EncodedText) -> Result<(usize, Vec<f64>)> {
    if input.len() != ensemble.config.max_len {
        return Err(Error::SchemaMismatch(format!(
            "input length {} does not match ensemble max_len {}",
            input.len(),
            ensemble.config.max_len
        )));
    }
    let mut probs = vec![0.0; ensemble.config.class_count];
    for m in &ensemble.members {
        let (logits, _) = forward(&m.params, input, None)?;
        for (acc, p) in probs.iter_mut().zip(softmax(&logits)) {
            *acc += p;
        }
    }
    let n = ensemble.members.len() as f64;
    for p in &mut probs {
        *p /= n;
    }
    Ok((argmax(&probs), probs))
}

pub fn ensemble_predict_batch(
    ensemble: &Ensemble,
    inputs: &[EncodedText],
    exec: Execution,
) -> Result<Vec<(usize, Vec<f64>)>> {
    exec::map(exec, inputs, |x| ensemble_predict(ensemble, x))
        .into_iter()
        .collect()
}

/// Prediction after each member's embedded input is shifted by
/// `epsilon * sign(grad)` of that member's loss on the gold label, which is
/// the sign of the gradient of the ensemble's own negative log-likelihood.
pub fn ensemble_predict_under_attack(
    ensemble: &Ensemble,
    input: &EncodedText,
    gold: usize,
    epsilon: f64,
) -> Result<(usize, Vec<f64>)> {
    let mut probs = vec![0.0; ensemble.config.class_count];
    for m in &ensemble.members {
        let (_, cache) = forward(&m.params, input, None)?;
        let g = backward(&m.params, &cache, gold)?;
        let delta = fgsm_delta(&g.d_embedded, &input.mask, epsilon)?;
        let (logits, _) = forward(&m.params, input, Some(&delta))?;
        for (acc, p) in probs.iter_mut().zip(softmax(&logits)) {
            *acc += p;
        }
    }
    let n = ensemble.members.len() as f64;
    for p in &mut probs {
        *p /= n;
    }
    Ok((argmax(&probs), probs))
}

/// Micro-F1 of the ensemble when every example is attacked with budget
/// `epsilon` (0 gives the clean score).
pub fn micro_f1_under_attack(
    ensemble: &Ensemble,
    examples: &[EncodedExample],
    epsilon: f64,
    exec: Execution,
) -> Result<f64> {
    let preds: Vec<usize> = exec::map(exec, examples, |ex| {
        ensemble_predict_under_attack(ensemble, &ex.input, ex.label, epsilon).map(|(l, _)| l)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let golds: Vec<usize> = examples.iter().map(|e| e.label).collect();
    micro_f1(&confusion(&golds, &preds, &ensemble.schema)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub val_micro_f1: f64,
    pub epochs: Vec<EpochLog>,
    pub train_size: usize,
    pub val_size: usize,
    pub model_seed: u64,
    pub train_seed: u64,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub folds: Vec<FoldReport>,
}

impl TrainingReport {
    pub fn mean_val_micro_f1(&self) -> f64 {
        self.folds.iter().map(|f| f.val_micro_f1).sum::<f64>() / self.folds.len().max(1) as f64
    }
}

/// Seeds of fold `f`'s member: `(model_seed, train_seed)`.
pub fn fold_seeds(model: &ModelConfig, train: &TrainConfig, fold: usize) -> (u64, u64) {
    (
        SeededRng::derive_seed(model.seed, fold as u64),
        SeededRng::derive_seed(train.seed, fold as u64),
    )
}

/// Trains one member per fold, each on every example outside its fold, and
/// scores it on the held-out fold. `ids` is parallel to `dataset`.
#[allow(clippy::too_many_arguments)]
pub fn train_kfold(
    dataset: &[EncodedExample],
    ids: &[String],
    plan: &FoldPlan,
    schema: &LabelSchema,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    exec: Execution,
    on_fold_done: Option<&(dyn Fn(&FoldReport) + Sync)>,
) -> Result<(Ensemble, TrainingReport)> {
    if plan.assignment.len() != dataset.len() || ids.len() != dataset.len() {
        return Err(Error::invalid(format!(
            "fold plan covers {} examples, dataset has {} (ids: {})",
            plan.assignment.len(),
            dataset.len(),
            ids.len()
        )));
    }
    train_config.validate()?;
    model_config.validate()?;

    let results = exec::map_range(exec, plan.k, |fold| -> Result<(Member, FoldReport)> {
        let train_idx = plan.training_indices(fold);
        let val_idx = plan.validation_indices(fold);
        let train_set: Vec<EncodedExample> = train_idx.iter().map(|&i| dataset[i].clone()).collect();
        let (model_seed, train_seed) = fold_seeds(model_config, train_config, fold);
        let mcfg = ModelConfig {
            seed: model_seed,
            ..*model_config
        };
        let tcfg = TrainConfig {
            seed: train_seed,
            ..*train_config
        };
        let outcome = train_single(&train_set, &tcfg, &mcfg)?;

        let mut golds = Vec::with_capacity(val_idx.len());
        let mut preds = Vec::with_capacity(val_idx.len());
        for &i in &val_idx {
            let probs = crate::model::predict_proba(&outcome.params, &dataset[i].input)?;
            golds.push(dataset[i].label);
            preds.push(argmax(&probs));
        }
        let val_micro_f1 = if val_idx.is_empty() {
            0.0
        } else {
            micro_f1(&confusion(&golds, &preds, schema)?)?
        };
        let report = FoldReport {
            fold,
            val_micro_f1,
            epochs: outcome.epochs,
            train_size: train_idx.len(),
            val_size: val_idx.len(),
            model_seed,
            train_seed,
            train_ids: train_idx.iter().map(|&i| ids[i].clone()).collect(),
            val_ids: val_idx.iter().map(|&i| ids[i].clone()).collect(),
        };
        if let Some(cb) = on_fold_done {
            cb(&report);
        }
        Ok((
            Member {
                fold,
                params: outcome.params,
            },
            report,
        ))
    });

    let mut members = Vec::with_capacity(plan.k);
    let mut folds = Vec::with_capacity(plan.k);
    for r in results {
        let (m, f) = r?;
        members.push(m);
        folds.push(f);
    }
    let ensemble = Ensemble::new(members, schema.clone(), vocab.clone(), *model_config)?;
    Ok((ensemble, TrainingReport { folds }))
}

pub const ENSEMBLE_MANIFEST: &str = "ensemble.json";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub fold: usize,
    pub file: String,
    pub model_seed: u64,
}

/// Everything needed to reload an ensemble and encode new inputs for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub schema: LabelSchema,
    pub vocab_file: String,
    pub model: ModelConfig,
    pub adv: AdvConfig,
    pub train: TrainConfig,
    pub k: usize,
    pub fold_seed: u64,
    /// Normalization applied to texts before encoding; `None` when disabled.
    pub normalizer: Option<NormalizerConfig>,
    pub members: Vec<MemberEntry>,
}

pub fn member_file_name(fold: usize) -> String {
    format!("member_{fold}.bin")
}

/// Writes `ensemble.json`, `vocab.txt` and one `member_<fold>.bin` per member.
pub fn save_ensemble(
    dir: &Path,
    ensemble: &Ensemble,
    train: &TrainConfig,
    fold_seed: u64,
    normalizer: Option<&NormalizerConfig>,
) -> Result<EnsembleManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ensemble.vocab.save(&dir.join(VOCAB_FILE))?;
    let mut members = Vec::with_capacity(ensemble.members.len());
    for m in &ensemble.members {
        let file = member_file_name(m.fold);
        m.params.save(&dir.join(&file))?;
        members.push(MemberEntry {
            fold: m.fold,
            file,
            model_seed: m.params.config.seed,
        });
    }
    let manifest = EnsembleManifest {
        schema: ensemble.schema.clone(),
        vocab_file: VOCAB_FILE.to_string(),
        model: ensemble.config,
        adv: train.adv,
        train: *train,
        k: ensemble.members.len(),
        fold_seed,
        normalizer: normalizer.cloned(),
        members,
    };
    let path = dir.join(ENSEMBLE_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_ensemble(dir: &Path) -> Result<(Ensemble, EnsembleManifest)> {
    let path: PathBuf = dir.join(ENSEMBLE_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: EnsembleManifest = serde_json::from_str(&text)?;
    let vocab = Vocabulary::load(&dir.join(&manifest.vocab_file))?;
    let mut members = Vec::with_capacity(manifest.members.len());
    for entry in &manifest.members {
        let expected = ModelConfig {
            seed: entry.model_seed,
            ..manifest.model
        };
        members.push(Member {
            fold: entry.fold,
            params: Parameters::load(&dir.join(&entry.file), &expected)?,
        });
    }
    let ensemble = Ensemble::new(members, manifest.schema.clone(), vocab, manifest.model)?;
    Ok((ensemble, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::Schedule;
    use crate::corpus::Task;
    use crate::tokenizer::build_vocab;

    fn tiny_set() -> (Vec<EncodedExample>, Vocabulary) {
        let texts = ["a b", "a c", "d e", "d f", "a a", "d d"];
        let labels = [0, 0, 1, 1, 0, 1];
        let vocab = build_vocab(texts, 1, 100).unwrap();
        let set = texts
            .iter()
            .zip(labels)
            .map(|(t, l)| EncodedExample {
                input: crate::tokenizer::encode(t, &vocab, 4),
                label: l,
            })
            .collect();
        (set, vocab)
    }

    fn mcfg(v: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: v,
            embed_dim: 4,
            hidden_dim: 4,
            class_count: 6,
            max_len: 4,
            seed: 1,
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let (set, vocab) = tiny_set();
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train_single(&set, &bad, &mcfg(vocab.len())).is_err());
        assert!(train_single(&[], &TrainConfig::default(), &mcfg(vocab.len())).is_err());
    }

    #[test]
    fn deterministic_and_pad_row_fixed() {
        let (set, vocab) = tiny_set();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = train_single(&set, &cfg, &mcfg(vocab.len())).unwrap();
        let b = train_single(&set, &cfg, &mcfg(vocab.len())).unwrap();
        assert_eq!(a.params.to_bytes(), b.params.to_bytes());
        assert!(a.params.embedding.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(a.epochs.len(), 4);
        assert!(!a.epochs[0].perturbed && a.epochs[1].perturbed);
    }

    #[test]
    fn divergence_is_reported() {
        let (set, vocab) = tiny_set();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 1,
            learning_rate: 1e200,
            momentum: 0.0,
            adv: AdvConfig {
                schedule: Schedule::Never,
                ..AdvConfig::default()
            },
            ..TrainConfig::default()
        };
        let err = train_single(&set, &cfg, &mcfg(vocab.len())).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn two_member_average() {
        // logits chosen so softmax gives [0.6, 0.4] and [0.2, 0.8]
        let schema = LabelSchema {
            task: Task::TypeOfHate,
            class_names: vec!["x".into(), "y".into()],
        };
        let vocab = build_vocab(["a"], 1, 10).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: 1,
            hidden_dim: 1,
            class_count: 2,
            max_len: 2,
            seed: 0,
        };
        let member = |p0: f64| {
            let mut p = init_params(&cfg).unwrap();
            p.w2.as_mut_slice().fill(0.0);
            p.b2 = vec![(p0 / (1.0 - p0)).ln(), 0.0];
            p
        };
        let ens = Ensemble::new(
            vec![
                Member {
                    fold: 0,
                    params: member(0.6),
                },
                Member {
                    fold: 1,
                    params: member(0.2),
                },
            ],
            schema,
            vocab.clone(),
            cfg,
        )
        .unwrap();
        let x = crate::tokenizer::encode("a", &vocab, 2);
        let (label, probs) = ensemble_predict(&ens, &x).unwrap();
        assert_eq!(label, 1);
        assert!((probs[0] - 0.4).abs() < 1e-12 && (probs[1] - 0.6).abs() < 1e-12);

        let too_long = crate::tokenizer::encode("a", &vocab, 3);
        assert!(ensemble_predict(&ens, &too_long).is_err());
    }

    #[test]
    fn argmax_ties_prefer_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.25, 0.5, 0.5]), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
