use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};
use crate::signal::Segment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    Class,
    Block,
    /// A blank window counts as correct when the prediction is either of the
    /// classes shown just before or just after it.
    BlankPair,
}

/// Training targets of the requested kind.
pub fn labels_of(segs: &[Segment], kind: LabelKind) -> Result<Vec<usize>> {
    segs.iter()
        .map(|s| match kind {
            LabelKind::Class => s
                .class_label
                .map(usize::from)
                .ok_or_else(|| Error::Data(format!("segment at {} ms has no class label", s.onset_ms))),
            LabelKind::Block => Ok(s.block_label as usize),
            LabelKind::BlankPair => Err(Error::Data("blank-pair is not a single-label target".into())),
        })
        .collect()
}

/// Chance accuracy for `n_labels` equiprobable outputs.
pub fn chance(kind: LabelKind, n_labels: usize) -> f64 {
    match kind {
        LabelKind::BlankPair => 2.0 / n_labels as f64,
        LabelKind::Class | LabelKind::Block => 1.0 / n_labels as f64,
    }
}

/// Accuracy of arbitrary predictions under `kind`.
pub fn score(predictions: &[usize], segs: &[Segment], kind: LabelKind) -> Result<f64> {
    if segs.is_empty() {
        return Err(Error::Eval("no segments to evaluate".into()));
    }
    if predictions.len() != segs.len() {
        return Err(Error::Eval(format!(
            "{} predictions for {} segments",
            predictions.len(),
            segs.len()
        )));
    }
    let hits = match kind {
        LabelKind::BlankPair => {
            let mut hits = 0;
            for (s, &p) in segs.iter().zip(predictions) {
                let (a, b) = s.blank_neighbors.ok_or_else(|| {
                    Error::Data(format!("blank segment at {} ms has no neighbor labels", s.onset_ms))
                })?;
                hits += usize::from(p == a as usize || p == b as usize);
            }
            hits
        }
        _ => {
            let labels = labels_of(segs, kind).map_err(|e| Error::Eval(e.to_string()))?;
            labels.iter().zip(predictions).filter(|(l, p)| l == p).count()
        }
    };
    Ok(hits as f64 / segs.len() as f64)
}

pub fn predict_all(net: &Network, segs: &[Segment]) -> Result<Vec<usize>> {
    segs.iter().map(|s| net.predict(s.samples.view())).collect()
}

/// Top-1 accuracy in [0, 1]; ties in the logits resolve to the lowest index.
pub fn evaluate(net: &Network, segs: &[Segment], kind: LabelKind) -> Result<f64> {
    if segs.is_empty() {
        return Err(Error::Eval("no segments to evaluate".into()));
    }
    score(&predict_all(net, segs)?, segs, kind)
}
