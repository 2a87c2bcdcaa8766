//! Deterministic signal preprocessing: recordings, segments, filtering,
//! z-scoring, trimming, blank-interval windowing and the channel-axis
//! contamination operator.

pub mod eegb;
pub mod filter;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use filter::{apply_filter, design_bandpass, design_notch, Biquad, FilterKind, FilterSpec, Phase};

pub const DEFAULT_SAMPLING_RATE: f64 = 1000.0;
pub const DEFAULT_CHANNELS: usize = 128;
/// Samples dropped at the start of every stimulus window.
pub const DEFAULT_DISCARD: usize = 20;
/// Common segment length after trimming.
pub const SEGMENT_LEN: usize = 440;
pub const BLANK_WINDOW: usize = 500;
pub const BLANK_OVERLAP: usize = 100;

/// Multichannel recording, channels x time, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub samples: Array2<f64>,
    pub sampling_rate: f64,
    pub subject_id: u32,
    pub session_id: u32,
}

impl Recording {
    pub fn new(samples: Array2<f64>, sampling_rate: f64, subject_id: u32, session_id: u32) -> Result<Self> {
        if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
            return Err(Error::Data(format!("sampling rate must be positive, got {sampling_rate}")));
        }
        if samples.nrows() == 0 {
            return Err(Error::Data("recording needs at least one channel".into()));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("recording contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sampling_rate,
            subject_id,
            session_id,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    /// Samples `[start, end)` as a new recording with the same metadata.
    pub fn slice(&self, start: usize, end: usize) -> Recording {
        Recording {
            samples: self.samples.slice(ndarray::s![.., start..end]).to_owned(),
            sampling_rate: self.sampling_rate,
            subject_id: self.subject_id,
            session_id: self.session_id,
        }
    }
}

/// A fixed-length window with its label set.
///
/// `class_label` is `None` for blank-screen segments, which then carry the
/// classes shown before and after the blank in `blank_neighbors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(skip)]
    pub samples: Array2<f64>,
    pub class_label: Option<u16>,
    pub block_label: u32,
    pub blank_neighbors: Option<(u16, u16)>,
    pub subject_id: u32,
    pub session_id: u32,
    pub onset_ms: u64,
    pub image_id: Option<u32>,
}

impl Segment {
    pub fn is_blank(&self) -> bool {
        self.class_label.is_none()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn with_samples(&self, samples: Array2<f64>) -> Segment {
        Segment {
            samples,
            class_label: self.class_label,
            block_label: self.block_label,
            blank_neighbors: self.blank_neighbors,
            subject_id: self.subject_id,
            session_id: self.session_id,
            onset_ms: self.onset_ms,
            image_id: self.image_id,
        }
    }
}

/// How a raw window is cut down to the common segment length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trim {
    pub discard: usize,
    pub target: usize,
}

impl Default for Trim {
    fn default() -> Self {
        Self {
            discard: DEFAULT_DISCARD,
            target: SEGMENT_LEN,
        }
    }
}

/// Returns samples `[discard, discard + target)` of every channel.
pub fn trim_segment(raw: ArrayView2<f64>, discard: usize, target: usize) -> Result<Array2<f64>> {
    let needed = discard + target;
    if raw.ncols() < needed {
        return Err(Error::Length {
            needed,
            got: raw.ncols(),
        });
    }
    Ok(raw.slice(ndarray::s![.., discard..needed]).to_owned())
}

/// Z-scores each row in place (population std). Rows with zero variance are
/// set to zero; their indices are returned.
pub fn zscore_rows(samples: &mut Array2<f64>) -> Vec<usize> {
    let mut degenerate = Vec::new();
    for (c, mut row) in samples.axis_iter_mut(Axis(0)).enumerate() {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 1e-12 * (1.0 + mean.abs())) {
            row.fill(0.0);
            degenerate.push(c);
            continue;
        }
        row.mapv_inplace(|v| (v - mean) / std);
    }
    degenerate
}

/// Per-channel z-scoring of one segment. Degenerate (constant) channels are
/// zeroed and reported rather than treated as an error.
pub fn zscore_per_channel(seg: &Segment) -> (Segment, Vec<usize>) {
    let mut samples = seg.samples.clone();
    let degenerate = zscore_rows(&mut samples);
    if !degenerate.is_empty() {
        log::warn!(
            "subject {} onset {} ms: {} zero-variance channel(s) zeroed",
            seg.subject_id,
            seg.onset_ms,
            degenerate.len()
        );
    }
    (seg.with_samples(samples), degenerate)
}

/// Start offsets of full windows over `len` samples. Partial windows at the
/// end of the interval are dropped.
pub fn window_starts(len: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    if window == 0 || overlap >= window {
        return Err(Error::Data(format!(
            "window ({window}) must exceed overlap ({overlap})"
        )));
    }
    if len < window {
        return Ok(Vec::new());
    }
    let step = window - overlap;
    Ok((0..=(len - window) / step).map(|k| k * step).collect())
}

/// Labels carried by every window cut from one blank interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlankContext {
    pub prev_class: u16,
    pub next_class: u16,
    pub block_label: u32,
    pub onset_ms: u64,
}

/// Cuts a blank-screen interval into overlapping windows, each trimmed to
/// the common segment length.
pub fn split_blank(
    rec: &Recording,
    window: usize,
    overlap: usize,
    trim: Trim,
    ctx: BlankContext,
) -> Result<Vec<Segment>> {
    let starts = window_starts(rec.n_samples(), window, overlap)?;
    let ms_per_sample = 1000.0 / rec.sampling_rate;
    starts
        .into_iter()
        .map(|start| {
            let raw = rec.samples.slice(ndarray::s![.., start..start + window]);
            let samples = trim_segment(raw, trim.discard, trim.target)?;
            Ok(Segment {
                samples,
                class_label: None,
                block_label: ctx.block_label,
                blank_neighbors: Some((ctx.prev_class, ctx.next_class)),
                subject_id: rec.subject_id,
                session_id: rec.session_id,
                onset_ms: ctx.onset_ms + (start as f64 * ms_per_sample).round() as u64,
                image_id: None,
            })
        })
        .collect()
}

/// Filters along the channel axis instead of time: at every time index the
/// vector of channel values (in stored channel order) is run through `spec`
/// as if it were a time series.
pub fn contaminate_channel_axis(seg: &Segment, spec: &FilterSpec) -> Result<Segment> {
    if !seg.samples.iter().all(|v| v.is_finite()) {
        return Err(Error::Data("segment contains non-finite samples".into()));
    }
    let mut out = seg.samples.clone();
    contaminate_in_place(&mut out, spec);
    Ok(seg.with_samples(out))
}

pub(crate) fn contaminate_in_place(samples: &mut Array2<f64>, spec: &FilterSpec) {
    let mut col = vec![0.0; samples.nrows()];
    for mut column in samples.columns_mut() {
        for (b, v) in col.iter_mut().zip(column.iter()) {
            *b = *v;
        }
        spec.filter_in_place(&mut col);
        for (v, b) in column.iter_mut().zip(&col) {
            *v = *b;
        }
    }
}
