//! `banglahate`: batch command-line front end for normalization, corpus
//! statistics, adversarial K-fold training, evaluation and prediction.

mod manifest;

use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use banglahate::adversarial::Schedule;
use banglahate::corpus::{
    distribution, load_tsv, load_tsv_with, merge_corpora, parse_tsv, parse_unlabeled_tsv, to_tsv, Corpus, LabelMapping,
    Task, TsvOptions,
};
use banglahate::evaluation::evaluate;
use banglahate::normalizer::{normalize, NormalizerConfig};
use banglahate::pipeline::{self, encode_text, vocab_for, PipelineConfig};
use banglahate::synthetic::{generate, SyntheticConfig};
use banglahate::trainer::{ensemble_predict_batch, load_ensemble, save_ensemble, FoldReport};
use banglahate::{Error, Execution};
use clap::{Args, Parser, Subcommand, ValueEnum};
use manifest::{RunInputs, RunManifest, RUN_MANIFEST, TRAINING_REPORT};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Input(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Diverged { .. }) => 3,
            _ => 2,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "banglahate", version, about = "Bangla hate-speech classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize text from standard input, one line at a time.
    Normalize(NormalizeArgs),
    /// Class distribution of a labeled corpus, as JSON.
    Distribution(DistributionArgs),
    /// Build a vocabulary file from a labeled corpus.
    BuildVocab(BuildVocabArgs),
    /// Train a K-fold ensemble with adversarial fine-tuning.
    Train(Box<TrainArgs>),
    /// Score an ensemble on a labeled corpus.
    Evaluate(EvaluateArgs),
    /// Predict labels for an unlabeled `id<TAB>text` file.
    Predict(PredictArgs),
    /// Write a synthetic keyword corpus with known labels.
    Synth(SynthArgs),
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct NormalizeArgs {
    /// Comma-separated rule names; defaults to every rule.
    #[arg(long)]
    rules: Option<String>,
    #[arg(long, default_value_t = 3)]
    max_punct_run: usize,
    /// Treat input as a corpus TSV and normalize only the text column.
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct DistributionArgs {
    corpus: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: Task,
    /// Accept rows with an empty text field.
    #[arg(long)]
    allow_empty: bool,
}

#[derive(Args)]
struct BuildVocabArgs {
    corpus: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: Task,
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
    #[arg(long, default_value_t = 20_000)]
    max_size: usize,
    #[arg(long)]
    no_normalize: bool,
    /// Vocabulary file to write; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Always,
    Alternate,
    Never,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Always => Schedule::Always,
            ScheduleArg::Alternate => Schedule::Alternate,
            ScheduleArg::Never => Schedule::Never,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled corpus TSV. Not needed with `--from-manifest`.
    #[arg(required_unless_present = "from_manifest")]
    corpus: Option<PathBuf>,
    #[arg(long, value_parser = parse_task, required_unless_present = "from_manifest")]
    task: Option<Task>,
    /// Directory receiving the ensemble, report and run manifest.
    #[arg(long)]
    out: PathBuf,
    /// Re-run exactly the configuration recorded in a run manifest.
    #[arg(long, conflicts_with_all = ["corpus", "task", "extra", "label_map"])]
    from_manifest: Option<PathBuf>,
    /// Additional labeled corpus merged in after deduplication.
    #[arg(long)]
    extra: Option<PathBuf>,
    /// JSON object renaming labels of the `--extra` corpus.
    #[arg(long, requires = "extra")]
    label_map: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Alternate)]
    fgsm_schedule: ScheduleArg,
    #[arg(long)]
    no_normalize: bool,
    /// Seed for initialization, shuffling and fold assignment.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the fold-assignment seed only.
    #[arg(long)]
    fold_seed: Option<u64>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
    #[arg(long)]
    max_vocab: Option<usize>,
    /// Worker threads for fold training; 1 trains sequentially, 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Also write the JSON report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Skip normalization even if the ensemble was trained with it.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ensemble: PathBuf,
    /// Unlabeled TSV with header and `id<TAB>text` rows.
    #[arg(long)]
    input: PathBuf,
    /// Output TSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_task, default_value = "1a")]
    task: Task,
    #[arg(long, default_value_t = 3000)]
    examples: usize,
    #[arg(long, default_value_t = 2025)]
    seed: u64,
    /// Shortest document, in tokens.
    #[arg(long, default_value_t = 8)]
    min_tokens: usize,
    /// Longest document, in tokens.
    #[arg(long, default_value_t = 16)]
    max_tokens: usize,
    /// Output TSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult {
    std::fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes to `out` when given, otherwise to standard output.
fn emit(out: Option<&Path>, contents: &[u8]) -> CliResult {
    match out {
        Some(path) => write_file(path, contents),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(contents)
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Output {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn cmd_normalize(args: NormalizeArgs) -> CliResult {
    let mut cfg = match &args.rules {
        Some(list) => NormalizerConfig::from_rule_list(list)?,
        None => NormalizerConfig::default(),
    };
    cfg.max_punct_run = args.max_punct_run;
    cfg.validate()?;
    let stdin = io::stdin().lock();
    let mut out = String::new();
    for (i, line) in stdin.lines().enumerate() {
        let line = line.map_err(|_| CliError::Input(format!("line {}: input is not valid UTF-8", i + 1)))?;
        if args.tsv && i > 0 {
            let mut fields: Vec<String> = line.split('\t').map(str::to_string).collect();
            if fields.len() < 2 {
                return Err(CliError::Input(format!("line {}: expected a text column", i + 1)));
            }
            fields[1] = normalize(&fields[1], &cfg);
            out.push_str(&fields.join("\t"));
        } else if args.tsv {
            out.push_str(&line);
        } else {
            out.push_str(&normalize(&line, &cfg));
        }
        out.push('\n');
    }
    emit(None, out.as_bytes())
}

fn cmd_distribution(args: DistributionArgs) -> CliResult {
    let schema = args.task.schema();
    let opts = TsvOptions {
        allow_empty: args.allow_empty,
    };
    let examples = load_tsv_with(&args.corpus, &schema, None, opts)?;
    emit(None, &to_json(&distribution(&examples, &schema).to_json())?)
}

fn normalizer_flag(no_normalize: bool) -> Option<NormalizerConfig> {
    (!no_normalize).then(NormalizerConfig::default)
}

fn cmd_build_vocab(args: BuildVocabArgs) -> CliResult {
    let schema = args.task.schema();
    let corpus = Corpus::new(schema.clone(), load_tsv(&args.corpus, &schema)?)?;
    let cfg = PipelineConfig {
        normalizer: normalizer_flag(args.no_normalize),
        min_freq: args.min_freq,
        max_vocab: args.max_size,
        ..PipelineConfig::default()
    };
    let vocab = vocab_for(&corpus, &cfg)?;
    emit(args.out.as_deref(), vocab.to_text().as_bytes())
}

fn absolute(path: &Path) -> CliResult<PathBuf> {
    std::fs::canonicalize(path).map_err(|e| Error::io(path, e).into())
}

/// Resolves flags into the manifest that fully describes the run.
fn manifest_from_args(args: &TrainArgs) -> CliResult<RunManifest> {
    let mut cfg = PipelineConfig {
        normalizer: normalizer_flag(args.no_normalize),
        k: args.k,
        ..PipelineConfig::default()
    };
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
        cfg.fold_seed = seed;
    }
    if let Some(s) = args.fold_seed {
        cfg.fold_seed = s;
    }
    let t = &mut cfg.train;
    t.adv.epsilon = args.epsilon;
    t.adv.alpha = args.alpha;
    t.adv.schedule = args.fgsm_schedule.into();
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = args.learning_rate.unwrap_or(t.learning_rate);
    t.momentum = args.momentum.unwrap_or(t.momentum);
    cfg.model.embed_dim = args.embed_dim.unwrap_or(cfg.model.embed_dim);
    cfg.model.hidden_dim = args.hidden_dim.unwrap_or(cfg.model.hidden_dim);
    cfg.model.max_len = args.max_len.unwrap_or(cfg.model.max_len);
    cfg.min_freq = args.min_freq.unwrap_or(cfg.min_freq);
    cfg.max_vocab = args.max_vocab.unwrap_or(cfg.max_vocab);

    let corpus = args.corpus.as_deref().expect("clap enforces corpus");
    let inputs = RunInputs {
        task: args.task.expect("clap enforces task"),
        corpus: absolute(corpus)?,
        extra: args.extra.as_deref().map(absolute).transpose()?,
        label_map: args.label_map.as_deref().map(absolute).transpose()?,
    };
    Ok(RunManifest::new(inputs, cfg))
}

fn load_training_corpus(inputs: &RunInputs, cfg: &PipelineConfig) -> CliResult<Corpus> {
    let schema = inputs.task.schema();
    let primary = Corpus::new(schema.clone(), load_tsv(&inputs.corpus, &schema)?)?;
    let Some(extra_path) = &inputs.extra else {
        return Ok(primary);
    };
    let mapping = inputs
        .label_map
        .as_deref()
        .map(LabelMapping::from_json_file)
        .transpose()?;
    let extra = load_tsv_with(extra_path, &schema, mapping.as_ref(), TsvOptions::default())?;
    let extra = Corpus::new(schema, extra)?;
    let dedup = cfg.normalizer.clone().unwrap_or_else(NormalizerConfig::none);
    Ok(merge_corpora(&primary, &extra, &dedup)?)
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce(Execution) -> T + Send) -> CliResult<T> {
    match jobs {
        1 => Ok(f(Execution::Sequential)),
        0 => Ok(f(Execution::Parallel)),
        n => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Input(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(|| f(Execution::Parallel)))
        }
    }
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let manifest = match &args.from_manifest {
        Some(path) => RunManifest::load(path)?,
        None => manifest_from_args(&args)?,
    };
    let cfg = &manifest.pipeline;
    let corpus = load_training_corpus(&manifest.inputs, cfg)?;
    if corpus.is_empty() {
        return Err(CliError::Input("training corpus is empty".into()));
    }

    let log = |r: &FoldReport| {
        eprintln!(
            "fold {}: trained on {}, held-out micro-F1 {:.4} on {}",
            r.fold, r.train_size, r.val_micro_f1, r.val_size
        );
    };
    let out = with_jobs(args.jobs, |exec| pipeline::run(&corpus, cfg, exec, Some(&log)))??;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    save_ensemble(
        &args.out,
        &out.ensemble,
        &cfg.train,
        cfg.fold_seed,
        cfg.normalizer.as_ref(),
    )?;
    write_file(&args.out.join(TRAINING_REPORT), &to_json(&out.report)?)?;
    write_file(&args.out.join(RUN_MANIFEST), &to_json(&manifest)?)?;
    eprintln!(
        "mean held-out micro-F1 {:.4}; ensemble written to {}",
        out.report.mean_val_micro_f1(),
        args.out.display()
    );
    Ok(())
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
        return Ok(buf);
    }
    std::fs::read(path).map_err(|e| Error::io(path, e).into())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult {
    let (ensemble, manifest) = load_ensemble(&args.ensemble)?;
    let norm = if args.no_normalize {
        None
    } else {
        manifest.normalizer.clone()
    };
    let examples = parse_tsv(
        &read_input(&args.corpus)?,
        &ensemble.schema,
        None,
        TsvOptions::default(),
    )?;
    if examples.is_empty() {
        return Err(CliError::Input("evaluation corpus has no examples".into()));
    }
    let inputs: Vec<_> = examples
        .iter()
        .map(|e| encode_text(&e.raw_text, &ensemble.vocab, ensemble.config.max_len, norm.as_ref()))
        .collect();
    let preds: Vec<usize> = ensemble_predict_batch(&ensemble, &inputs, Execution::Parallel)?
        .into_iter()
        .map(|(label, _)| label)
        .collect();
    let golds: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let report = evaluate(&golds, &preds, &ensemble.schema)?;
    let json = to_json(&report.to_json())?;
    if let Some(path) = &args.out {
        write_file(path, &json)?;
    }
    match args.format {
        Format::Json => emit(None, &json),
        Format::Table => emit(None, report.render_table().as_bytes()),
    }
}

fn cmd_predict(args: PredictArgs) -> CliResult {
    let (ensemble, manifest) = load_ensemble(&args.ensemble)?;
    let norm = if args.no_normalize {
        None
    } else {
        manifest.normalizer.clone()
    };
    let rows = parse_unlabeled_tsv(&read_input(&args.input)?)?;
    let inputs: Vec<_> = rows
        .iter()
        .map(|r| encode_text(&r.raw_text, &ensemble.vocab, ensemble.config.max_len, norm.as_ref()))
        .collect();
    let preds = ensemble_predict_batch(&ensemble, &inputs, Execution::Parallel)?;
    let mut out = String::from("id\tlabel\tprob\n");
    for (row, (label, probs)) in rows.iter().zip(preds) {
        let name = ensemble.schema.name_of(label).unwrap_or("?");
        out.push_str(&format!("{}\t{}\t{:.6}\n", row.id, name, probs[label]));
    }
    emit(args.out.as_deref(), out.as_bytes())
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    let schema = args.task.schema();
    let cfg = SyntheticConfig {
        examples: args.examples,
        seed: args.seed,
        min_tokens: args.min_tokens,
        max_tokens: args.max_tokens,
        ..SyntheticConfig::default()
    };
    if cfg.min_tokens < cfg.max_keywords || cfg.max_tokens < cfg.min_tokens {
        return Err(CliError::Input(format!(
            "need {} <= --min-tokens <= --max-tokens",
            cfg.max_keywords
        )));
    }
    let tsv = to_tsv(&generate(&schema, &cfg), &schema)?;
    emit(args.out.as_deref(), tsv.as_bytes())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Normalize(a) => cmd_normalize(a),
        Command::Distribution(a) => cmd_distribution(a),
        Command::BuildVocab(a) => cmd_build_vocab(a),
        Command::Train(a) => cmd_train(*a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
