//! Confusion matrices, micro-F1, per-class rates and report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{percent_2dp, LabelSchema};
use crate::error::{Error, Result};

/// `counts[gold][pred]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub schema: LabelSchema,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(schema: LabelSchema) -> Self {
        let c = schema.class_count();
        Self {
            schema,
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn from_counts(schema: LabelSchema, counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = schema.class_count();
        if counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Shape(format!("confusion matrix must be {c}x{c}")));
        }
        Ok(Self { schema, counts })
    }

    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.class_count()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        self.counts[gold].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        self.counts.iter().map(|r| r[pred]).sum()
    }

    /// Entrywise sum; both matrices must share a schema.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        if self.schema != other.schema {
            return Err(Error::SchemaMismatch(
                "cannot add confusion matrices of different schemas".into(),
            ));
        }
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(ConfusionMatrix {
            schema: self.schema.clone(),
            counts,
        })
    }
}

pub fn confusion(golds: &[usize], preds: &[usize], schema: &LabelSchema) -> Result<ConfusionMatrix> {
    if golds.len() != preds.len() {
        return Err(Error::invalid(format!(
            "{} gold labels but {} predictions",
            golds.len(),
            preds.len()
        )));
    }
    let c = schema.class_count();
    let mut cm = ConfusionMatrix::zeros(schema.clone());
    for (i, (&g, &p)) in golds.iter().zip(preds).enumerate() {
        if g >= c || p >= c {
            return Err(Error::invalid(format!(
                "pair {i} ({g}, {p}) has a label outside [0, {c})"
            )));
        }
        cm.counts[g][p] += 1;
    }
    Ok(cm)
}

/// For single-label multi-class scoring every miss is one false positive and
/// one false negative, so micro-F1 reduces to `trace / total`.
pub fn micro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("micro-F1 is undefined for an empty confusion matrix"));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// An exact count ratio such as `hits / support`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: u64,
    pub support: u64,
}

impl Rate {
    pub fn value(self) -> f64 {
        self.hits as f64 / self.support as f64
    }

    /// Two-decimal percentage, half-up, computed from the integer counts.
    pub fn percent_text(self) -> String {
        percent_2dp(self.hits, self.support)
    }
}

/// Recall of each gold class; `None` for classes with no gold examples.
pub fn per_class_tpr(cm: &ConfusionMatrix) -> Vec<Option<Rate>> {
    (0..cm.class_count())
        .map(|g| {
            let support = cm.row_sum(g);
            (support > 0).then_some(Rate {
                hits: cm.get(g, g),
                support,
            })
        })
        .collect()
}

/// Precision of each predicted class; `None` when the class was never predicted.
pub fn per_class_precision(cm: &ConfusionMatrix) -> Vec<Option<Rate>> {
    (0..cm.class_count())
        .map(|p| {
            let predicted = cm.col_sum(p);
            (predicted > 0).then_some(Rate {
                hits: cm.get(p, p),
                support: predicted,
            })
        })
        .collect()
}

pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.class_count())
        .map(|c| {
            let tp = cm.get(c, c);
            let denom = cm.row_sum(c) + cm.col_sum(c);
            (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub gold: usize,
    pub pred: usize,
    pub count: u64,
}

/// Largest off-diagonal cells, ties in (gold, pred) order. Zero cells are
/// not reported.
pub fn top_confusions(cm: &ConfusionMatrix, n: usize) -> Vec<Confusion> {
    let c = cm.class_count();
    let mut cells: Vec<Confusion> = (0..c)
        .flat_map(|g| (0..c).map(move |p| (g, p)))
        .filter(|&(g, p)| g != p && cm.get(g, p) > 0)
        .map(|(gold, pred)| Confusion {
            gold,
            pred,
            count: cm.get(gold, pred),
        })
        .collect();
    cells.sort_by(|a, b| b.count.cmp(&a.count).then((a.gold, a.pred).cmp(&(b.gold, b.pred))));
    cells.truncate(n);
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub tpr: Vec<Option<Rate>>,
    pub precision: Vec<Option<Rate>>,
    pub f1: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
    pub top_confusions: Vec<Confusion>,
}

pub const DEFAULT_TOP_CONFUSIONS: usize = 5;

pub fn evaluate(golds: &[usize], preds: &[usize], schema: &LabelSchema) -> Result<EvalReport> {
    let cm = confusion(golds, preds, schema)?;
    report_from_confusion(cm)
}

pub fn report_from_confusion(cm: ConfusionMatrix) -> Result<EvalReport> {
    Ok(EvalReport {
        micro_f1: micro_f1(&cm)?,
        tpr: per_class_tpr(&cm),
        precision: per_class_precision(&cm),
        f1: per_class_f1(&cm),
        top_confusions: top_confusions(&cm, DEFAULT_TOP_CONFUSIONS),
        confusion: cm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassJson {
    pub name: String,
    pub tpr: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionJson {
    pub gold: String,
    pub pred: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReportJson {
    pub micro_f1: f64,
    pub classes: Vec<ClassJson>,
    pub confusion: Vec<Vec<u64>>,
    pub top_confusions: Vec<ConfusionJson>,
}

impl EvalReport {
    pub fn to_json(&self) -> EvalReportJson {
        let names = &self.confusion.schema.class_names;
        EvalReportJson {
            micro_f1: self.micro_f1,
            classes: names
                .iter()
                .enumerate()
                .map(|(c, name)| ClassJson {
                    name: name.clone(),
                    tpr: self.tpr[c].map(Rate::value),
                    precision: self.precision[c].map(Rate::value),
                    recall: self.tpr[c].map(Rate::value),
                    f1: self.f1[c],
                    support: self.confusion.row_sum(c),
                })
                .collect(),
            confusion: self.confusion.counts.clone(),
            top_confusions: self
                .top_confusions
                .iter()
                .map(|c| ConfusionJson {
                    gold: names[c.gold].clone(),
                    pred: names[c.pred].clone(),
                    count: c.count,
                })
                .collect(),
        }
    }

    /// Plain-text summary table.
    pub fn render_table(&self) -> String {
        let cm = &self.confusion;
        let names = &cm.schema.class_names;
        let width = names.iter().map(|n| n.len()).max().unwrap_or(5).max(5);
        let pct = |r: Option<Rate>| r.map_or_else(|| "-".to_string(), |r| format!("{}%", r.percent_text()));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "micro-F1: {}% ({}/{})",
            percent_2dp(cm.trace(), cm.total()),
            cm.trace(),
            cm.total()
        );
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>7}  {:>7}",
            "class", "precision", "recall", "f1", "support"
        );
        for (c, name) in names.iter().enumerate() {
            let f1 = self.f1[c].map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>9}  {:>7}  {:>7}",
                name,
                pct(self.precision[c]),
                pct(self.tpr[c]),
                f1,
                cm.row_sum(c)
            );
        }
        let _ = writeln!(out, "confusion (rows = gold, columns = predicted):");
        for (g, row) in cm.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            let _ = writeln!(out, "{:<width$}  {}", names[g], cells.join(" "));
        }
        if !self.top_confusions.is_empty() {
            let _ = writeln!(out, "top confusions:");
            for c in &self.top_confusions {
                let _ = writeln!(out, "  {} -> {}: {}", names[c.gold], names[c.pred], c.count);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;

    fn schema() -> LabelSchema {
        Task::TypeOfHate.schema()
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = [0, 1, 2, 3, 4, 5, 0, 0];
        let cm = confusion(&labels, &labels, &schema()).unwrap();
        for g in 0..6 {
            for p in 0..6 {
                if g != p {
                    assert_eq!(cm.get(g, p), 0);
                }
            }
        }
        assert_eq!(micro_f1(&cm).unwrap(), 1.0);
        assert!(top_confusions(&cm, 3).is_empty());
    }

    #[test]
    fn empty_input() {
        let cm = confusion(&[], &[], &schema()).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(micro_f1(&cm).is_err());
        assert!(per_class_tpr(&cm).iter().all(Option::is_none));
    }

    #[test]
    fn input_errors() {
        assert!(confusion(&[0, 1], &[0], &schema()).is_err());
        assert!(confusion(&[6], &[0], &schema()).is_err());
    }

    #[test]
    fn all_wrong_is_zero() {
        let cm = confusion(&[0, 1, 2], &[1, 2, 0], &schema()).unwrap();
        assert_eq!(micro_f1(&cm).unwrap(), 0.0);
    }

    #[test]
    fn zero_support_is_null_in_json() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], &schema()).unwrap();
        let report = report_from_confusion(cm).unwrap();
        let json = serde_json::to_value(report.to_json()).unwrap();
        assert!(json["classes"][5]["tpr"].is_null());
        assert_eq!(json["classes"][0]["tpr"], 0.5);
        assert_eq!(json["classes"][1]["precision"], 0.5);
        assert_eq!(json["classes"][1]["support"], 1);
        assert_eq!(json["top_confusions"][0]["gold"], "None");
        assert_eq!(json["top_confusions"][0]["pred"], "Abusive");
        assert!(report.render_table().contains("micro-F1: 66.67% (2/3)"));
    }

    #[test]
    fn target_group_rates_quoted_in_error_analysis() {
        // diagonal/row-sum pairs for Organization, Community, Society
        let s = Task::TargetGroup.schema();
        let mut counts = vec![vec![0u64; 5]; 5];
        for (g, (diag, row)) in [(2usize, (647u64, 1152u64)), (3, (313, 759)), (4, (233, 625))] {
            counts[g][g] = diag;
            counts[g][0] = row - diag;
        }
        let cm = ConfusionMatrix::from_counts(s, counts).unwrap();
        let tpr = per_class_tpr(&cm);
        assert_eq!(tpr[2].unwrap().percent_text(), "56.16");
        assert_eq!(tpr[3].unwrap().percent_text(), "41.24");
        assert_eq!(tpr[4].unwrap().percent_text(), "37.28");
    }
}
