use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::report::{DiagnosticReport, ReportRow};
use crate::error::{Error, Result};
use crate::models::{build, chance, evaluate, train, LabelKind, ModelSpec, Network, TrainConfig, TrainedModel};
use crate::par::par_map;
use crate::pipeline::{synthesize_cohort, CohortSpec};
use crate::rng::derive_seed;
use crate::signal::Segment;
use crate::synth::{make_splits, rapid_images_per_class, DatasetSplit, Design, Geometry, Ratios};

/// What to train and on which labels. `spec.n_classes` is overridden by the
/// number of distinct labels when training on block labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub labels: LabelKind,
    /// Concurrent trainings.
    #[serde(default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

impl Protocol {
    pub fn model_name(&self) -> String {
        format!("{}/{}", self.spec.family.name(), self.spec.head.name())
    }
}

/// Trains on `split` and returns the model with its test accuracy and the
/// test accuracy of the lowest-validation checkpoint.
pub fn fit_and_test(split: &DatasetSplit, spec: &ModelSpec, cfg: &TrainConfig, kind: LabelKind, tag: u64) -> Result<(TrainedModel, f64, Option<f64>)> {
    let model = build(spec.clone(), derive_seed(cfg.seed, &[0x1A17, tag]))?;
    let model = train(model, split, kind, cfg)?;
    let acc = evaluate(&model.network, &split.test, kind)?;
    let low = match model.lowest_val_network() {
        Some(net) => Some(evaluate(&net, &split.test, kind)?),
        None => None,
    };
    Ok((model, acc, low))
}

/// Fraction of blank windows classified as one of their neighbouring
/// classes.
pub fn blank_leakage(net: &Network, blanks: &[Segment], condition: &str) -> Result<ReportRow> {
    if let Some(s) = blanks.iter().find(|s| s.blank_neighbors.is_none()) {
        return Err(Error::Data(format!("blank at {} ms has no neighbor labels", s.onset_ms)));
    }
    let acc = evaluate(net, blanks, LabelKind::BlankPair)?;
    let spec = net.spec();
    let name = format!("{}/{}", spec.family.name(), spec.head.name());
    Ok(ReportRow::new(
        &name,
        condition,
        "pooled",
        LabelKind::BlankPair,
        acc,
        chance(LabelKind::BlankPair, spec.n_classes),
    ))
}

fn distinct_blocks(segs: &[Segment]) -> BTreeSet<u32> {
    segs.iter().map(|s| s.block_label).collect()
}

/// Trains on block labels and reports test accuracy against `1/n_blocks`.
pub fn block_label_leakage(split: &DatasetSplit, protocol: &Protocol, condition: &str) -> Result<ReportRow> {
    let blocks = distinct_blocks(&split.train);
    if blocks.len() < 2 {
        return Err(Error::Degenerate(format!("{} block label(s); need at least 2", blocks.len())));
    }
    let mut spec = protocol.spec.clone();
    spec.n_classes = *blocks.last().unwrap() as usize + 1;
    let (_, acc, low) = fit_and_test(split, &spec, &protocol.train, LabelKind::Block, 0)?;
    Ok(ReportRow::new(
        &protocol.model_name(),
        condition,
        "pooled",
        LabelKind::Block,
        acc,
        1.0 / blocks.len() as f64,
    )
    .with_lowest_val(low))
}

/// Per-subject block-label leakage, averaged over subjects.
pub fn block_label_leakage_per_subject(split: &DatasetSplit, protocol: &Protocol, condition: &str) -> Result<ReportRow> {
    let subjects = split.subjects();
    let rows = par_map(&subjects, protocol.jobs, |&s| {
        block_label_leakage(&split.for_subject(s), &Protocol { jobs: 1, ..protocol.clone() }, condition)
            .map_err(|e| subject_error(s, e))
    });
    let rows: Vec<ReportRow> = rows.into_iter().collect::<Result<_>>()?;
    let chance = rows.iter().map(|r| r.chance).sum::<f64>() / rows.len() as f64 / 100.0;
    let scores: Vec<(u32, f64)> = subjects.iter().zip(&rows).map(|(&s, r)| (s, r.accuracy / 100.0)).collect();
    let low: Option<Vec<f64>> = rows.iter().map(|r| r.accuracy_at_lowest_val).collect();
    Ok(
        ReportRow::new(&protocol.model_name(), condition, "per-subject", LabelKind::Block, 0.0, chance)
            .with_subjects(&scores)
            .with_lowest_val(low.map(|v| v.iter().sum::<f64>() / v.len() as f64 / 100.0)),
    )
}

fn subject_error(subject: u32, e: Error) -> Error {
    match e {
        Error::Subject { .. } => e,
        other => Error::Subject {
            subject,
            reason: other.to_string(),
        },
    }
}

fn check_subject(split: &DatasetSplit, subject: u32) -> Result<()> {
    for (name, part) in [("train", &split.train), ("validation", &split.val), ("test", &split.test)] {
        if part.is_empty() {
            return Err(Error::Subject {
                subject,
                reason: format!("empty {name} split"),
            });
        }
    }
    Ok(())
}

/// Trains one model per subject and one pooled model, testing both on each
/// subject's test images. Both analyses use the same split.
pub fn per_subject_vs_pooled(split: &DatasetSplit, protocol: &Protocol, condition: &str) -> Result<DiagnosticReport> {
    let subjects = split.subjects();
    if subjects.len() < 2 {
        return Err(Error::Data(format!("need at least 2 subjects, got {}", subjects.len())));
    }
    let parts: Vec<DatasetSplit> = subjects.iter().map(|&s| split.for_subject(s)).collect();
    for (&s, p) in subjects.iter().zip(&parts) {
        check_subject(p, s)?;
    }
    let kind = protocol.labels;
    let n_labels = protocol.spec.n_classes;
    let chance = chance(kind, n_labels);

    // index 0 is the pooled model, the rest are per subject
    let jobs: Vec<usize> = (0..=subjects.len()).collect();
    let results = par_map(&jobs, protocol.jobs, |&j| {
        if j == 0 {
            let (model, _, _) = fit_and_test(split, &protocol.spec, &protocol.train, kind, 0)?;
            let low = model.lowest_val_network();
            let mut per = Vec::new();
            for p in &parts {
                let a = evaluate(&model.network, &p.test, kind)?;
                let l = low.as_ref().map(|n| evaluate(n, &p.test, kind)).transpose()?;
                per.push((a, l));
            }
            Ok(per)
        } else {
            let s = subjects[j - 1];
            fit_and_test(&parts[j - 1], &protocol.spec, &protocol.train, kind, 1)
                .map(|(_, a, l)| vec![(a, l)])
                .map_err(|e| subject_error(s, e))
        }
    });
    let results: Vec<Vec<(f64, Option<f64>)>> = results.into_iter().collect::<Result<_>>()?;
    let pooled = &results[0];
    let per_subject: Vec<(f64, Option<f64>)> = results[1..].iter().map(|v| v[0]).collect();

    let row = |analysis: &str, accs: &[(f64, Option<f64>)]| {
        let scores: Vec<(u32, f64)> = subjects.iter().zip(accs).map(|(&s, a)| (s, a.0)).collect();
        let low: Option<Vec<f64>> = accs.iter().map(|a| a.1).collect();
        ReportRow::new(&protocol.model_name(), condition, analysis, kind, 0.0, chance)
            .with_subjects(&scores)
            .with_lowest_val(low.map(|v| v.iter().sum::<f64>() / v.len() as f64))
    };
    let mut report = DiagnosticReport::new("per-subject vs pooled").meta("condition", condition);
    report.rows.push(row("per-subject", &per_subject));
    report.rows.push(row("pooled", pooled));
    Ok(report)
}

/// Single-session rapid experiments of increasing length. For each duration
/// every subject is synthesized from the same base seed and per-subject
/// block-label leakage is reported; with `cohort.blanks` set, blank leakage
/// of a class-trained pooled model is added.
pub fn duration_sweep(minutes: &[f64], cohort: &CohortSpec, protocol: &Protocol, seed: u64) -> Result<DiagnosticReport> {
    if minutes.is_empty() {
        return Err(Error::Config {
            field: "durations".into(),
            reason: "at least one duration is required".into(),
        });
    }
    let mut report = DiagnosticReport::new("duration sweep")
        .meta("durations_min", minutes)
        .meta("seed", seed);
    for &m in minutes {
        if !(m > 0.0) {
            return Err(Error::Config {
                field: "durations".into(),
                reason: format!("duration must be > 0 minutes, got {m}"),
            });
        }
        let spec = CohortSpec {
            design: Design::Rapid,
            images_per_class: rapid_images_per_class(m, cohort.n_classes, Geometry::default()),
            sessions: 1,
            ..cohort.clone()
        };
        let data = synthesize_cohort(&spec, seed)?;
        let split = make_splits(data.stimuli, Ratios::default(), derive_seed(seed, &[0x5917]))?;
        let condition = format!("{m} min");
        let block_protocol = Protocol {
            labels: LabelKind::Block,
            ..protocol.clone()
        };
        report.rows.push(block_label_leakage_per_subject(&split, &block_protocol, &condition)?);
        if spec.blanks && !data.blanks.is_empty() {
            let (model, _, _) = fit_and_test(&split, &protocol.spec, &protocol.train, LabelKind::Class, 0)?;
            report.rows.push(blank_leakage(&model.network, &data.blanks, &condition)?);
        }
    }
    Ok(report)
}
