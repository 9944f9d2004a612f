//! Labeled comment corpora: loading, class statistics, merging and
//! stratified K-fold planning.
//!
//! Corpus files are UTF-8 TSV with LF line endings and a header row
//! `id\ttext\tlabel`. Every data row has exactly three fields; a tab inside
//! the text shows up as a fourth field and is rejected.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalizer::{normalize, NormalizerConfig};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Subtask 1A: type of hate.
    #[serde(rename = "1A")]
    TypeOfHate,
    /// Subtask 1B: target group.
    #[serde(rename = "1B")]
    TargetGroup,
}

impl Task {
    pub fn code(self) -> &'static str {
        match self {
            Task::TypeOfHate => "1A",
            Task::TargetGroup => "1B",
        }
    }

    pub fn schema(self) -> LabelSchema {
        LabelSchema::for_task(self)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1a" | "type_of_hate" => Ok(Task::TypeOfHate),
            "1b" | "target_group" => Ok(Task::TargetGroup),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

pub const TYPE_OF_HATE_CLASSES: [&str; 6] = [
    "None",
    "Abusive",
    "Political Hate",
    "Profane",
    "Religious Hate",
    "Sexism",
];

pub const TARGET_GROUP_CLASSES: [&str; 5] = ["None", "Individual", "Organization", "Community", "Society"];

/// Ordered class names of one task. Class index = position in `class_names`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub task: Task,
    pub class_names: Vec<String>,
}

impl LabelSchema {
    pub fn for_task(task: Task) -> Self {
        let names: &[&str] = match task {
            Task::TypeOfHate => &TYPE_OF_HATE_CLASSES,
            Task::TargetGroup => &TARGET_GROUP_CLASSES,
        };
        Self {
            task,
            class_names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn name_of(&self, index: usize) -> Option<&str> {
        self.class_names.get(index).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub raw_text: String,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>, label: usize) -> Self {
        Self {
            id: id.into(),
            raw_text: raw_text.into(),
            label,
        }
    }
}

/// Examples together with the schema their labels index into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub schema: LabelSchema,
    pub examples: Vec<LabeledExample>,
}

impl Corpus {
    pub fn new(schema: LabelSchema, examples: Vec<LabeledExample>) -> Result<Self> {
        let c = schema.class_count();
        if let Some(bad) = examples.iter().find(|e| e.label >= c) {
            return Err(Error::invalid(format!(
                "example {:?} has label {} outside [0, {c})",
                bad.id, bad.label
            )));
        }
        Ok(Self { schema, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TsvOptions {
    pub allow_empty: bool,
}

/// Optional renaming of label strings before they are resolved against a
/// schema, for external corpora with their own label inventory. Labels not in
/// the map pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping(pub HashMap<String, String>);

impl LabelMapping {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn apply<'a>(&'a self, label: &'a str) -> &'a str {
        self.0.get(label).map(String::as_str).unwrap_or(label)
    }
}

fn split_lines(bytes: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    let trimmed = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let empty = bytes.is_empty();
    trimmed
        .split(|&b| b == b'\n')
        .enumerate()
        .filter(move |_| !empty)
        .map(|(i, l)| (i + 1, l.strip_suffix(b"\r").unwrap_or(l)))
}

fn decode_line(line_no: usize, raw: &[u8]) -> Result<&str> {
    std::str::from_utf8(raw).map_err(|_| Error::InvalidUtf8 { line: line_no })
}

/// Parses corpus TSV text (header row first). Line numbers in errors are
/// 1-based and count the header.
pub fn parse_tsv(
    bytes: &[u8],
    schema: &LabelSchema,
    mapping: Option<&LabelMapping>,
    opts: TsvOptions,
) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (line_no, raw) in split_lines(bytes) {
        let line = decode_line(line_no, raw)?;
        if line_no == 1 {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Malformed {
                line: line_no,
                reason: format!(
                    "expected 3 tab-separated fields (id, text, label), found {}",
                    fields.len()
                ),
            });
        }
        let (id, text, label) = (fields[0], fields[1], fields[2]);
        if id.is_empty() {
            return Err(Error::Malformed {
                line: line_no,
                reason: "empty id".into(),
            });
        }
        if text.is_empty() && !opts.allow_empty {
            return Err(Error::EmptyText { line: line_no });
        }
        let label_name = mapping.map_or(label, |m| m.apply(label));
        let index = schema.index_of(label_name).ok_or_else(|| Error::UnknownLabel {
            line: line_no,
            label: label.to_string(),
        })?;
        out.push(LabeledExample::new(id, text, index));
    }
    Ok(out)
}

pub fn load_tsv(path: &Path, schema: &LabelSchema) -> Result<Vec<LabeledExample>> {
    load_tsv_with(path, schema, None, TsvOptions::default())
}

pub fn load_tsv_with(
    path: &Path,
    schema: &LabelSchema,
    mapping: Option<&LabelMapping>,
    opts: TsvOptions,
) -> Result<Vec<LabeledExample>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&bytes, schema, mapping, opts)
}

/// One row of an unlabeled `id\ttext` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlabeledExample {
    pub id: String,
    pub raw_text: String,
}

pub fn parse_unlabeled_tsv(bytes: &[u8]) -> Result<Vec<UnlabeledExample>> {
    let mut out = Vec::new();
    for (line_no, raw) in split_lines(bytes) {
        let line = decode_line(line_no, raw)?;
        if line_no == 1 {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields[0].is_empty() {
            return Err(Error::Malformed {
                line: line_no,
                reason: format!("expected 2 tab-separated fields (id, text), found {}", fields.len()),
            });
        }
        out.push(UnlabeledExample {
            id: fields[0].to_string(),
            raw_text: fields[1].to_string(),
        });
    }
    Ok(out)
}

/// Renders examples in corpus TSV format, header included.
pub fn to_tsv(examples: &[LabeledExample], schema: &LabelSchema) -> Result<String> {
    let mut out = String::from("id\ttext\tlabel\n");
    for ex in examples {
        if ex.raw_text.contains(['\t', '\n']) || ex.id.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("example {:?} contains a tab or newline", ex.id)));
        }
        let name = schema
            .name_of(ex.label)
            .ok_or_else(|| Error::invalid(format!("label {} outside schema", ex.label)))?;
        out.push_str(&ex.id);
        out.push('\t');
        out.push_str(&ex.raw_text);
        out.push('\t');
        out.push_str(name);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub task: Task,
    pub class_names: Vec<String>,
    pub counts: Vec<u64>,
    pub fractions: Vec<f64>,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShare {
    pub name: String,
    pub count: u64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionJson {
    pub task: String,
    pub total: u64,
    pub classes: Vec<ClassShare>,
}

impl DistributionReport {
    /// `100 * count / total` rounded half-up to two decimals, as text.
    pub fn percent_text(&self, class: usize) -> String {
        percent_2dp(self.counts[class], self.total)
    }

    pub fn to_json(&self) -> DistributionJson {
        DistributionJson {
            task: self.task.code().to_string(),
            total: self.total,
            classes: self
                .class_names
                .iter()
                .zip(&self.counts)
                .map(|(name, &count)| ClassShare {
                    name: name.clone(),
                    count,
                    percent: percent_hundredths(count, self.total) as f64 / 100.0,
                })
                .collect(),
        }
    }
}

/// `round_half_up(10000 * num / den)` in exact integer arithmetic, i.e. a
/// percentage in hundredths. Zero when `den == 0`.
pub fn percent_hundredths(num: u64, den: u64) -> u64 {
    if den == 0 {
        return 0;
    }
    let scaled = u128::from(num) * 10_000;
    let den = u128::from(den);
    ((2 * scaled + den) / (2 * den)) as u64
}

/// Percentage with two decimals, half-up, e.g. `percent_2dp(4781, 5751) == "83.13"`.
pub fn percent_2dp(num: u64, den: u64) -> String {
    let h = percent_hundredths(num, den);
    format!("{}.{:02}", h / 100, h % 100)
}

pub fn distribution(examples: &[LabeledExample], schema: &LabelSchema) -> DistributionReport {
    let mut counts = vec![0u64; schema.class_count()];
    for ex in examples {
        counts[ex.label] += 1;
    }
    let total = examples.len() as u64;
    let fractions = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    DistributionReport {
        task: schema.task,
        class_names: schema.class_names.clone(),
        counts,
        fractions,
        total,
    }
}

/// Concatenates `extra` onto `primary`, dropping every extra example whose
/// normalized text and label already occur in the output.
pub fn merge_corpora(primary: &Corpus, extra: &Corpus, norm: &NormalizerConfig) -> Result<Corpus> {
    if primary.schema != extra.schema {
        return Err(Error::SchemaMismatch(format!(
            "cannot merge task {} corpus into task {} corpus",
            extra.schema.task, primary.schema.task
        )));
    }
    let mut seen: HashSet<(String, usize)> = primary
        .examples
        .iter()
        .map(|e| (normalize(&e.raw_text, norm), e.label))
        .collect();
    let mut examples = primary.examples.clone();
    for ex in &extra.examples {
        if seen.insert((normalize(&ex.raw_text, norm), ex.label)) {
            examples.push(ex.clone());
        }
    }
    Ok(Corpus {
        schema: primary.schema.clone(),
        examples,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold index of each example, parallel to the dataset.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// Example indices held out in `fold`.
    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    /// Example indices used for training when `fold` is held out.
    pub fn training_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    /// Canonical byte encoding: k, seed, then each assignment as u32, all LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.assignment.len());
        out.extend_from_slice(&(self.k as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for &a in &self.assignment {
            out.extend_from_slice(&(a as u32).to_le_bytes());
        }
        out
    }
}

/// Stratified K-fold split.
///
/// Examples are grouped by label (classes in index order, members in dataset
/// order), each group is shuffled with one [`SeededRng`] seeded by `seed`,
/// and the concatenated groups are dealt round-robin: the `p`-th example in
/// that sequence goes to fold `p mod k`. Per-class fold counts therefore
/// differ by at most one, and so do overall fold sizes.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::invalid(format!("k = {k} exceeds dataset size {}", labels.len())));
    }
    let class_count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    let mut rng = SeededRng::new(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut position = 0usize;
    for group in &mut groups {
        rng.shuffle(group);
        for &i in group.iter() {
            assignment[i] = position % k;
            position += 1;
        }
    }
    Ok(FoldPlan { k, seed, assignment })
}
