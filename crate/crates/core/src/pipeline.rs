//! Recording -> labelled segments: temporal filtering of the continuous
//! recording, stimulus and blank windowing, optional channel-axis
//! contamination and per-segment z-scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::signal::{
    contaminate_in_place, design_bandpass, design_notch, filter::filter_rows, split_blank, trim_segment,
    zscore_rows, BlankContext, FilterSpec, Phase, Recording, Segment, Trim, BLANK_OVERLAP, BLANK_WINDOW,
};
use crate::synth::generator::ms_to_samples;
use crate::synth::{generate_schedule, synthesize_recording, Design, NeuralModelParams, StimulusSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    /// Temporal bandpass `(low, high)` Hz; `None` leaves the data unfiltered.
    pub band: Option<(f64, f64)>,
    /// Mains notch `(center_hz, q)`.
    pub notch: Option<(f64, f64)>,
    #[serde(default)]
    pub phase: Phase,
    /// Bandpass applied along the channel axis of every segment instead of
    /// time, reproducing the misfiltering confound.
    #[serde(default)]
    pub contaminate: Option<(f64, f64)>,
    #[serde(default = "default_true")]
    pub zscore: bool,
}

fn default_true() -> bool {
    true
}

pub const NOTCH_50HZ: (f64, f64) = (50.0, 30.0);
/// Band used by the channel-axis contamination (14-70 Hz with 50 Hz notch).
pub const COMPARISON_BAND: (f64, f64) = (14.0, 70.0);

impl Preprocessing {
    /// Bandpass + 50 Hz notch + z-score.
    pub fn standard(band: (f64, f64)) -> Self {
        Self {
            band: Some(band),
            notch: Some(NOTCH_50HZ),
            phase: Phase::Causal,
            contaminate: None,
            zscore: true,
        }
    }

    /// No temporal filtering; only z-scoring.
    pub fn raw() -> Self {
        Self {
            band: None,
            notch: None,
            phase: Phase::Causal,
            contaminate: None,
            zscore: true,
        }
    }

    /// The 14-70 Hz bandpass run across channels instead of time.
    pub fn contaminated() -> Self {
        Self {
            contaminate: Some(COMPARISON_BAND),
            ..Self::raw()
        }
    }

    fn filters(&self, fs: f64) -> Result<(Vec<FilterSpec>, Option<FilterSpec>)> {
        let mut temporal = Vec::new();
        if let Some((lo, hi)) = self.band {
            temporal.push(design_bandpass(lo, hi, fs)?);
        }
        if let Some((f0, q)) = self.notch {
            temporal.push(design_notch(f0, q, fs)?);
        }
        let channel = match self.contaminate {
            Some((lo, hi)) => Some(design_bandpass(lo, hi, fs)?),
            None => None,
        };
        Ok((temporal, channel))
    }
}

/// Labelled segments of one subject.
#[derive(Debug, Clone, Default)]
pub struct SubjectSegments {
    pub stimuli: Vec<Segment>,
    pub blanks: Vec<Segment>,
}

fn finish(mut seg: Segment, channel: Option<&FilterSpec>, zscore: bool) -> Segment {
    if let Some(spec) = channel {
        contaminate_in_place(&mut seg.samples, spec);
    }
    if zscore {
        let degenerate = zscore_rows(&mut seg.samples);
        if !degenerate.is_empty() {
            log::warn!("subject {} onset {} ms: {} zero-variance channel(s)", seg.subject_id, seg.onset_ms, degenerate.len());
        }
    }
    seg
}

/// Cuts one session recording into stimulus segments (and blank windows when
/// `with_blanks`), applying `pre`.
pub fn segment_session(
    rec: &Recording,
    sched: &StimulusSchedule,
    pre: &Preprocessing,
    with_blanks: bool,
) -> Result<SubjectSegments> {
    let fs = rec.sampling_rate;
    let (temporal, channel) = pre.filters(fs)?;
    let mut filtered;
    let rec = if temporal.is_empty() {
        rec
    } else {
        filtered = rec.clone();
        for f in &temporal {
            filter_rows(f, &mut filtered.samples, pre.phase);
        }
        &filtered
    };
    let trim = Trim::default();
    let mut out = SubjectSegments::default();
    for e in sched.session_events(rec.session_id) {
        let start = ms_to_samples(e.onset_ms, fs);
        let end = ms_to_samples(e.end_ms(), fs).min(rec.n_samples());
        match e.class_id {
            Some(class) => {
                let raw = rec.samples.slice(ndarray::s![.., start..end]);
                let samples = trim_segment(raw, trim.discard, trim.target)?;
                let seg = Segment {
                    samples,
                    class_label: Some(class),
                    block_label: e.block_index,
                    blank_neighbors: None,
                    subject_id: rec.subject_id,
                    session_id: rec.session_id,
                    onset_ms: e.onset_ms,
                    image_id: e.image_id,
                };
                out.stimuli.push(finish(seg, channel.as_ref(), pre.zscore));
            }
            None if with_blanks => {
                let Some((prev_class, next_class)) = sched.blank_neighbors(e) else {
                    continue;
                };
                let ctx = BlankContext {
                    prev_class,
                    next_class,
                    block_label: e.block_index,
                    onset_ms: e.onset_ms,
                };
                let interval = rec.slice(start, end);
                for seg in split_blank(&interval, BLANK_WINDOW, BLANK_OVERLAP, trim, ctx)? {
                    out.blanks.push(finish(seg, channel.as_ref(), pre.zscore));
                }
            }
            None => {}
        }
    }
    Ok(out)
}

/// Synthesizes one subject and segments every session.
pub fn synthesize_subject(
    sched: &StimulusSchedule,
    params: &NeuralModelParams,
    n_channels: usize,
    sampling_rate: f64,
    subject_id: u32,
    pre: &Preprocessing,
    with_blanks: bool,
) -> Result<SubjectSegments> {
    let synth = synthesize_recording(sched, params, n_channels, sampling_rate, subject_id)?;
    let mut out = SubjectSegments::default();
    for rec in &synth.sessions {
        let s = segment_session(rec, sched, pre, with_blanks)?;
        out.stimuli.extend(s.stimuli);
        out.blanks.extend(s.blanks);
    }
    Ok(out)
}

/// A group of synthetic subjects who all saw the same schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub design: Design,
    pub n_classes: usize,
    pub images_per_class: usize,
    /// Sessions of the block design; the rapid design always has one.
    pub sessions: usize,
    pub subjects: u32,
    pub channels: usize,
    pub sampling_rate: f64,
    pub params: NeuralModelParams,
    pub preprocessing: Preprocessing,
    /// Also cut blank intervals into windows.
    pub blanks: bool,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub schedule: StimulusSchedule,
    pub stimuli: Vec<Segment>,
    pub blanks: Vec<Segment>,
}

/// Generates the schedule and every subject. `params.seed` is replaced by a
/// seed derived from `seed`, so one number fixes the whole cohort.
pub fn synthesize_cohort(spec: &CohortSpec, seed: u64) -> Result<Cohort> {
    if spec.subjects == 0 {
        return Err(Error::Config {
            field: "subjects".into(),
            reason: "must be at least 1".into(),
        });
    }
    let schedule = generate_schedule(
        spec.design,
        spec.n_classes,
        spec.images_per_class,
        spec.sessions,
        derive_seed(seed, &[0xC0, 1]),
    )?;
    let params = NeuralModelParams {
        seed: derive_seed(seed, &[0xC0, 2]),
        ..spec.params.clone()
    };
    let mut cohort = Cohort {
        schedule,
        stimuli: Vec::new(),
        blanks: Vec::new(),
    };
    for subject in 0..spec.subjects {
        let s = synthesize_subject(
            &cohort.schedule,
            &params,
            spec.channels,
            spec.sampling_rate,
            subject,
            &spec.preprocessing,
            spec.blanks,
        )?;
        cohort.stimuli.extend(s.stimuli);
        cohort.blanks.extend(s.blanks);
    }
    Ok(cohort)
}

/// Restores image ids and blank neighbour classes, which the EEGB container
/// does not carry, from the schedule the data was recorded with. Segments are
/// matched to the event whose interval contains their onset.
pub fn attach_schedule(segments: &mut [Segment], sched: &StimulusSchedule) -> Result<()> {
    let mut by_session: std::collections::BTreeMap<u32, Vec<&crate::synth::Event>> = Default::default();
    for e in &sched.events {
        by_session.entry(e.session_index).or_default().push(e);
    }
    for events in by_session.values_mut() {
        events.sort_by_key(|e| e.onset_ms);
    }
    for seg in segments.iter_mut() {
        let event = by_session.get(&seg.session_id).and_then(|events| {
            let i = events.partition_point(|e| e.onset_ms <= seg.onset_ms);
            (i > 0).then(|| events[i - 1]).filter(|e| seg.onset_ms < e.end_ms())
        });
        let Some(e) = event else {
            return Err(Error::Data(format!(
                "segment at session {} onset {} ms matches no scheduled event",
                seg.session_id, seg.onset_ms
            )));
        };
        if e.class_id != seg.class_label {
            return Err(Error::Data(format!(
                "segment at session {} onset {} ms has label {:?}, schedule says {:?}",
                seg.session_id, seg.onset_ms, seg.class_label, e.class_id
            )));
        }
        seg.image_id = e.image_id;
        if e.is_blank() {
            seg.blank_neighbors = sched.blank_neighbors(e);
        }
    }
    Ok(())
}
