use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::signal::Segment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Train/validation/test partition of segments.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<Segment>,
    pub val: Vec<Segment>,
    pub test: Vec<Segment>,
}

impl DatasetSplit {
    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.val.is_empty() && self.test.is_empty()
    }

    /// Keeps only the segments of one subject, preserving the partition.
    pub fn for_subject(&self, subject: u32) -> DatasetSplit {
        let pick = |v: &[Segment]| v.iter().filter(|s| s.subject_id == subject).cloned().collect();
        DatasetSplit {
            train: pick(&self.train),
            val: pick(&self.val),
            test: pick(&self.test),
        }
    }

    pub fn subjects(&self) -> Vec<u32> {
        let s: BTreeSet<u32> = self
            .train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|s| s.subject_id)
            .collect();
        s.into_iter().collect()
    }
}

/// Split ratios; must sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Ratios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Which part every image id falls into.
pub type Assignment = BTreeMap<u32, Part>;

/// Assigns image ids to parts, stratified by class. Every class keeps at
/// least one image in validation and one in test.
pub fn assign_images(images: &BTreeMap<u16, BTreeSet<u32>>, ratios: Ratios, seed: u64) -> Result<Assignment> {
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || ratios.train < 0.0 || ratios.val < 0.0 || ratios.test < 0.0 {
        return Err(Error::Stratification(format!("ratios must be non-negative and sum to 1, got {sum}")));
    }
    let mut out = Assignment::new();
    for (&class, ids) in images {
        let n = ids.len();
        if n < 3 {
            return Err(Error::Stratification(format!(
                "class {class} has {n} image(s); at least 3 are needed"
            )));
        }
        let mut ids: Vec<u32> = ids.iter().copied().collect();
        ids.shuffle(&mut stream(seed, &[0x5917, class as u64]));
        let n_val = ((n as f64 * ratios.val).round() as usize).max(1);
        let n_test = ((n as f64 * ratios.test).round() as usize).max(1);
        let n_train = n.saturating_sub(n_val + n_test);
        for (k, id) in ids.into_iter().enumerate() {
            let part = if k < n_train {
                Part::Train
            } else if k < n_train + n_val {
                Part::Val
            } else {
                Part::Test
            };
            out.insert(id, part);
        }
    }
    Ok(out)
}

/// Splits segments by image identity, stratified by class, so every
/// subject's recording of one image lands in the same part.
pub fn make_splits(segments: Vec<Segment>, ratios: Ratios, seed: u64) -> Result<DatasetSplit> {
    let mut images: BTreeMap<u16, BTreeSet<u32>> = BTreeMap::new();
    for s in &segments {
        let (Some(class), Some(image)) = (s.class_label, s.image_id) else {
            return Err(Error::Data(format!(
                "segment at {} ms (subject {}) has no image id or class",
                s.onset_ms, s.subject_id
            )));
        };
        images.entry(class).or_default().insert(image);
    }
    let assignment = assign_images(&images, ratios, seed)?;
    let mut split = DatasetSplit::default();
    for s in segments {
        match assignment[&s.image_id.unwrap()] {
            Part::Train => split.train.push(s),
            Part::Val => split.val.push(s),
            Part::Test => split.test.push(s),
        }
    }
    Ok(split)
}
