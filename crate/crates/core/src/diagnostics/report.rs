use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;
use crate::models::LabelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub subject: u32,
    /// Percent.
    pub accuracy: f64,
}

/// One condition of a report. All accuracies are in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub condition: String,
    /// `pooled`, `per-subject`, or a free-form analysis name.
    pub analysis: String,
    pub labels: LabelKind,
    pub accuracy: f64,
    pub chance: f64,
    pub increase_over_chance: f64,
    pub per_subject: Vec<SubjectScore>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Test accuracy of the lowest-validation-accuracy checkpoint.
    pub accuracy_at_lowest_val: Option<f64>,
}

/// Mean and population standard deviation; the std is absent for fewer than
/// two values.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() >= 2).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt());
    (mean, std)
}

impl ReportRow {
    /// Row from fractions in [0, 1].
    pub fn new(model: &str, condition: &str, analysis: &str, labels: LabelKind, accuracy: f64, chance: f64) -> Self {
        let (accuracy, chance) = (100.0 * accuracy, 100.0 * chance);
        Self {
            model: model.into(),
            condition: condition.into(),
            analysis: analysis.into(),
            labels,
            accuracy,
            chance,
            increase_over_chance: accuracy - chance,
            per_subject: Vec::new(),
            mean: None,
            std: None,
            accuracy_at_lowest_val: None,
        }
    }

    /// Attaches per-subject fractions; accuracy becomes their mean.
    pub fn with_subjects(mut self, scores: &[(u32, f64)]) -> Self {
        self.per_subject = scores
            .iter()
            .map(|&(subject, acc)| SubjectScore {
                subject,
                accuracy: 100.0 * acc,
            })
            .collect();
        let accs: Vec<f64> = self.per_subject.iter().map(|s| s.accuracy).collect();
        if !accs.is_empty() {
            let (mean, std) = mean_std(&accs);
            self.mean = Some(mean);
            self.std = std;
            self.accuracy = mean;
            self.increase_over_chance = mean - self.chance;
        }
        self
    }

    pub fn with_lowest_val(mut self, accuracy: Option<f64>) -> Self {
        self.accuracy_at_lowest_val = accuracy.map(|a| 100.0 * a);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub experiment: String,
    pub metadata: BTreeMap<String, Value>,
    pub rows: Vec<ReportRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn label_name(k: LabelKind) -> &'static str {
    match k {
        LabelKind::Class => "class",
        LabelKind::Block => "block",
        LabelKind::BlankPair => "blank-pair",
    }
}

impl DiagnosticReport {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.into(),
            ..Self::default()
        }
    }

    pub fn meta(mut self, key: &str, value: impl Serialize) -> Self {
        self.metadata.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    pub const CSV_HEADER: &'static str = "experiment,model,condition,analysis,labels,accuracy,chance,increase_over_chance,mean,std,n_subjects,per_subject,accuracy_at_lowest_val";

    /// One line per row. Per-subject accuracies are `subject=acc` pairs
    /// joined by `;`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let subjects: Vec<String> = r.per_subject.iter().map(|s| format!("{}={}", s.subject, s.accuracy)).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                csv_field(&self.experiment),
                csv_field(&r.model),
                csv_field(&r.condition),
                csv_field(&r.analysis),
                label_name(r.labels),
                r.accuracy,
                r.chance,
                r.increase_over_chance,
                opt(r.mean),
                opt(r.std),
                r.per_subject.len(),
                subjects.join(";"),
                opt(r.accuracy_at_lowest_val),
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let width = |f: fn(&ReportRow) -> &str, min: usize| self.rows.iter().map(|r| f(r).len()).fold(min, usize::max);
        let wm = width(|r| &r.model, 5);
        let wc = width(|r| &r.condition, 9);
        let mut out = format!("{}\n", self.experiment);
        let _ = writeln!(
            out,
            "{:<wm$}  {:<wc$}  {:<11}  {:<10}  {:>7}  {:>7}  {:>8}  {:>6}",
            "model", "condition", "analysis", "labels", "acc %", "chance", "+chance", "std"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<wm$}  {:<wc$}  {:<11}  {:<10}  {:>7.2}  {:>7.2}  {:>8.2}  {:>6}",
                r.model,
                r.condition,
                r.analysis,
                label_name(r.labels),
                r.accuracy,
                r.chance,
                r.increase_over_chance,
                r.std.map(|s| format!("{s:.2}")).unwrap_or_default()
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
