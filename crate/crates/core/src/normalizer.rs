//! Rule-based orthographic normalization for noisy mixed-script comments.
//!
//! Rules run in this fixed order (each individually toggleable):
//!
//! 1. `unicode_nfc`: canonical composition (NFC), followed by composition
//!    of the three Bangla nukta letters that NFC excludes (U+09DC, U+09DD,
//!    U+09DF), so U+09A1 U+09BC becomes U+09DC. The step runs again after
//!    the remaining rules, because deletions and case mapping can leave
//!    composable or misordered sequences.
//! 2. `strip_invisible`: drop U+200B, U+FEFF, U+00AD and every control
//!    character that is not whitespace. ZWNJ/ZWJ (U+200C/U+200D) are kept.
//! 3. `whitespace_collapse`: trim, then replace every whitespace run with a
//!    single U+0020.
//! 4. `latin_lowercase`: lowercase characters of the Latin script only.
//! 5. `punct_run_collapse`: cap runs of one repeated punctuation character at
//!    `max_punct_run`.
//! 6. `digit_preserve`: Bangla digits are left as they are. Listed so that
//!    rule lists stay explicit; it never rewrites anything.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::LabeledExample;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_PUNCT_RUN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    UnicodeNfc,
    StripInvisible,
    WhitespaceCollapse,
    LatinLowercase,
    PunctRunCollapse,
    DigitPreserve,
}

impl Rule {
    /// All rules, in application order.
    pub const ALL: [Rule; 6] = [
        Rule::UnicodeNfc,
        Rule::StripInvisible,
        Rule::WhitespaceCollapse,
        Rule::LatinLowercase,
        Rule::PunctRunCollapse,
        Rule::DigitPreserve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::UnicodeNfc => "unicode_nfc",
            Rule::StripInvisible => "strip_invisible",
            Rule::WhitespaceCollapse => "whitespace_collapse",
            Rule::LatinLowercase => "latin_lowercase",
            Rule::PunctRunCollapse => "punct_run_collapse",
            Rule::DigitPreserve => "digit_preserve",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown normalizer rule {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizerConfig {
    /// Iterated in application order regardless of insertion order.
    pub rules: BTreeSet<Rule>,
    pub max_punct_run: usize,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self {
            rules: Rule::ALL.into_iter().collect(),
            max_punct_run: DEFAULT_MAX_PUNCT_RUN,
        }
    }
}

impl NormalizerConfig {
    pub fn none() -> Self {
        Self {
            rules: BTreeSet::new(),
            max_punct_run: DEFAULT_MAX_PUNCT_RUN,
        }
    }

    pub fn with_rules(rules: impl IntoIterator<Item = Rule>) -> Self {
        Self {
            rules: rules.into_iter().collect(),
            ..Self::none()
        }
    }

    /// Parses a comma-separated rule list such as `unicode_nfc,strip_invisible`.
    pub fn from_rule_list(list: &str) -> Result<Self> {
        let rules = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Rule::from_str)
            .collect::<Result<BTreeSet<_>>>()?;
        Ok(Self { rules, ..Self::none() })
    }

    pub fn enabled(&self, rule: Rule) -> bool {
        self.rules.contains(&rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_punct_run == 0 {
            return Err(Error::invalid("max_punct_run must be >= 1"));
        }
        Ok(())
    }
}

pub fn is_invisible(ch: char) -> bool {
    matches!(ch, '\u{200B}' | '\u{FEFF}' | '\u{00AD}') || (ch.is_control() && !ch.is_whitespace())
}

/// Latin-script letters: Basic Latin, Latin-1 Supplement, Latin Extended
/// A/B/C/D/E/Additional, IPA extensions and fullwidth Latin.
pub fn is_latin(ch: char) -> bool {
    matches!(ch,
        'A'..='Z' | 'a'..='z'
        | '\u{00C0}'..='\u{00D6}'
        | '\u{00D8}'..='\u{00F6}'
        | '\u{00F8}'..='\u{024F}'
        | '\u{0250}'..='\u{02AF}'
        | '\u{1E00}'..='\u{1EFF}'
        | '\u{2C60}'..='\u{2C7F}'
        | '\u{A720}'..='\u{A7FF}'
        | '\u{AB30}'..='\u{AB6F}'
        | '\u{FF21}'..='\u{FF3A}'
        | '\u{FF41}'..='\u{FF5A}'
    )
}

/// ASCII punctuation, Latin-1 punctuation marks, General Punctuation,
/// the Indic danda marks, CJK and fullwidth punctuation.
pub fn is_punctuation(ch: char) -> bool {
    ch.is_ascii_punctuation()
        || matches!(ch,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{0964}' | '\u{0965}' | '\u{09FD}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}'
            | '\u{3008}'..='\u{3011}'
            | '\u{FF01}'..='\u{FF0F}'
            | '\u{FF1A}'..='\u{FF20}'
        )
}

/// Bangla letters with nukta that are on the Unicode composition-exclusion
/// list: (base, precomposed).
const NUKTA_FORMS: [(char, char); 3] = [
    ('\u{09A1}', '\u{09DC}'),
    ('\u{09A2}', '\u{09DD}'),
    ('\u{09AF}', '\u{09DF}'),
];
const NUKTA: char = '\u{09BC}';

fn nfc(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending: Option<char> = None;
    for ch in text.nfc() {
        if ch == NUKTA {
            if let Some(base) = pending.take() {
                match NUKTA_FORMS.iter().find(|(b, _)| *b == base) {
                    Some(&(_, composed)) => out.push(composed),
                    None => {
                        out.push(base);
                        out.push(ch);
                    }
                }
                continue;
            }
        }
        if let Some(base) = pending.take() {
            out.push(base);
        }
        if NUKTA_FORMS.iter().any(|(b, _)| *b == ch) {
            pending = Some(ch);
        } else {
            out.push(ch);
        }
    }
    if let Some(base) = pending {
        out.push(base);
    }
    out
}

fn strip_invisible(text: &str) -> String {
    text.chars().filter(|&c| !is_invisible(c)).collect()
}

fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn lowercase_latin(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        if is_latin(ch) {
            out.extend(ch.to_lowercase());
        } else {
            out.push(ch);
        }
    }
    out
}

fn collapse_punct_runs(text: &str, max_run: usize) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<char> = None;
    let mut run = 0usize;
    for ch in text.chars() {
        if Some(ch) == prev && is_punctuation(ch) {
            run += 1;
        } else {
            run = 1;
            prev = Some(ch);
        }
        if run <= max_run || !is_punctuation(ch) {
            out.push(ch);
        }
    }
    out
}

pub fn normalize(text: &str, config: &NormalizerConfig) -> String {
    let mut s = text.to_owned();
    for rule in &config.rules {
        s = match rule {
            Rule::UnicodeNfc => nfc(&s),
            Rule::StripInvisible => strip_invisible(&s),
            Rule::WhitespaceCollapse => collapse_whitespace(&s),
            Rule::LatinLowercase => lowercase_latin(&s),
            Rule::PunctRunCollapse => collapse_punct_runs(&s, config.max_punct_run.max(1)),
            Rule::DigitPreserve => s,
        };
    }
    if config.enabled(Rule::UnicodeNfc) {
        s = nfc(&s);
    }
    s
}

pub fn normalize_corpus(examples: &[LabeledExample], config: &NormalizerConfig) -> Vec<LabeledExample> {
    examples
        .iter()
        .map(|ex| LabeledExample {
            id: ex.id.clone(),
            raw_text: normalize(&ex.raw_text, config),
            label: ex.label,
        })
        .collect()
}
