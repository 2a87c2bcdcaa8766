//! Ground-truth recording synthesis: class-evoked gamma bursts, slow drift and
//! white sensor noise.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schedule::{Event, StimulusSchedule};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::signal::Recording;

const CARRIER_COMPONENTS: usize = 8;
const RAMP_MS: f64 = 100.0;

// stream tags
const PATTERNS: u64 = 1;
const CARRIER: u64 = 2;
const LEVELS: u64 = 3;
const OU: u64 = 4;
const NOISE: u64 = 5;

/// Generative parameters of the synthetic subject.
///
/// Drift is a per-channel Ornstein-Uhlenbeck process that mean-reverts, with
/// timescale `drift_timescale_s`, towards a per-block level drawn once per
/// presentation block (std `drift_amplitude`). `drift_fluctuation` is the
/// stationary std of the process around that level. A blank screen keeps the
/// level of the block before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuralModelParams {
    pub evoked_amplitude: f64,
    pub evoked_band: (f64, f64),
    pub drift_amplitude: f64,
    pub drift_timescale_s: f64,
    #[serde(default)]
    pub drift_fluctuation: f64,
    /// Restricts drift to these channel indices; all channels when absent.
    #[serde(default)]
    pub drift_channels: Option<Vec<usize>>,
    /// Attention decay constant; `None` disables the vigilance decrement.
    #[serde(default)]
    pub vigilance_tau_s: Option<f64>,
    pub noise_std: f64,
    pub seed: u64,
}

impl NeuralModelParams {
    /// White noise only; the drift amplitude has no sensible default and must
    /// be set by the experiment.
    pub fn noise_only(noise_std: f64, seed: u64) -> Self {
        Self {
            evoked_amplitude: 0.0,
            evoked_band: (55.0, 95.0),
            drift_amplitude: 0.0,
            drift_timescale_s: 20.0,
            drift_fluctuation: 0.0,
            drift_channels: None,
            vigilance_tau_s: None,
            noise_std,
            seed,
        }
    }

    pub fn validate(&self, sampling_rate: f64) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: field.into(),
                reason,
            })
        };
        for (name, v) in [
            ("evoked_amplitude", self.evoked_amplitude),
            ("drift_amplitude", self.drift_amplitude),
            ("drift_fluctuation", self.drift_fluctuation),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, format!("must be a finite value >= 0, got {v}"));
            }
        }
        if !(self.drift_timescale_s > 0.0 && self.drift_timescale_s.is_finite()) {
            return bad("drift_timescale_s", format!("must be > 0, got {}", self.drift_timescale_s));
        }
        if let Some(tau) = self.vigilance_tau_s {
            if !(tau > 0.0) {
                return bad("vigilance_tau_s", format!("must be > 0, got {tau}"));
            }
        }
        let (lo, hi) = self.evoked_band;
        if !(lo > 0.0 && lo < hi && hi < sampling_rate / 2.0) {
            return bad("evoked_band", format!("({lo}, {hi}) outside (0, {})", sampling_rate / 2.0));
        }
        Ok(())
    }

    /// One unit-norm spatial pattern per class, shared by every subject
    /// generated from the same seed.
    pub fn spatial_patterns(&self, n_classes: usize, n_channels: usize) -> Array2<f64> {
        let mut rng = stream(self.seed, &[PATTERNS, n_classes as u64, n_channels as u64]);
        let mut p = Array2::from_shape_simple_fn((n_classes, n_channels), || {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        for mut row in p.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        p
    }

    /// Unit-RMS band-limited waveform, phase-locked to stimulus onset.
    pub fn carrier(&self, n_samples: usize, sampling_rate: f64) -> Vec<f64> {
        let mut rng = stream(self.seed, &[CARRIER]);
        let (lo, hi) = self.evoked_band;
        let width = (hi - lo) / CARRIER_COMPONENTS as f64;
        let comps: Vec<(f64, f64)> = (0..CARRIER_COMPONENTS)
            .map(|k| (lo + (k as f64 + 0.5) * width, rng.gen_range(0.0..2.0 * PI)))
            .collect();
        let mut w: Vec<f64> = (0..n_samples)
            .map(|n| {
                let t = n as f64 / sampling_rate;
                comps.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum()
            })
            .collect();
        let rms = (w.iter().map(|v| v * v).sum::<f64>() / n_samples.max(1) as f64).sqrt();
        if rms > 0.0 {
            w.iter_mut().for_each(|v| *v /= rms);
        }
        w
    }

    pub fn vigilance_gain(&self, t_session_s: f64) -> f64 {
        match self.vigilance_tau_s {
            Some(tau) => (-t_session_s / tau).exp(),
            None => 1.0,
        }
    }
}

/// Raised-cosine attack and decay of `RAMP_MS` each.
fn envelope(n_samples: usize, sampling_rate: f64) -> Vec<f64> {
    let ramp = ((RAMP_MS * sampling_rate / 1000.0).round() as usize).min(n_samples / 2).max(1);
    (0..n_samples)
        .map(|n| {
            let edge = n.min(n_samples - 1 - n);
            if edge >= ramp {
                1.0
            } else {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            }
        })
        .collect()
}

/// Per-event ground truth of a synthesized recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventTruth {
    pub event: Event,
    pub vigilance_gain: f64,
    /// Peak evoked amplitude actually injected (µV).
    pub evoked_gain: f64,
}

#[derive(Debug, Clone)]
pub struct Synthesized {
    /// One continuous recording per session.
    pub sessions: Vec<Recording>,
    pub truth: Vec<EventTruth>,
}

pub(crate) fn ms_to_samples(ms: u64, sampling_rate: f64) -> usize {
    (ms as f64 * sampling_rate / 1000.0).round() as usize
}

/// Renders every session of `sched` for one subject. Deterministic in
/// `(params.seed, subject_id)`.
pub fn synthesize_recording(
    sched: &StimulusSchedule,
    params: &NeuralModelParams,
    n_channels: usize,
    sampling_rate: f64,
    subject_id: u32,
) -> Result<Synthesized> {
    params.validate(sampling_rate)?;
    if n_channels == 0 {
        return Err(Error::Config {
            field: "n_channels".into(),
            reason: "must be at least 1".into(),
        });
    }
    if let Some(chs) = &params.drift_channels {
        if let Some(&bad) = chs.iter().find(|&&c| c >= n_channels) {
            return Err(Error::Config {
                field: "drift_channels".into(),
                reason: format!("channel {bad} out of range for {n_channels} channels"),
            });
        }
    }

    let patterns = params.spatial_patterns(sched.n_classes, n_channels);
    let stim_len = ms_to_samples(sched.geometry.stimulus_ms, sampling_rate);
    let carrier = params.carrier(stim_len, sampling_rate);
    let env = envelope(stim_len, sampling_rate);
    let burst: Vec<f64> = carrier.iter().zip(&env).map(|(c, e)| c * e).collect();

    let n_blocks = sched.events.iter().map(|e| e.block_index as usize + 1).max().unwrap_or(0);
    let mut level_rng = stream(params.seed, &[LEVELS, subject_id as u64]);
    let levels = Array2::from_shape_simple_fn((n_blocks.max(1), n_channels), || {
        let v: f64 = StandardNormal.sample(&mut level_rng);
        v * params.drift_amplitude
    });
    let drift_on: Vec<bool> = match &params.drift_channels {
        Some(chs) => (0..n_channels).map(|c| chs.contains(&c)).collect(),
        None => vec![true; n_channels],
    };

    let mut sessions = Vec::new();
    let mut truth = Vec::new();
    for session in 0..sched.n_sessions() as u32 {
        let len = ms_to_samples(sched.session_duration_ms(session), sampling_rate);
        let mut noise_rng = stream(params.seed, &[NOISE, subject_id as u64, session as u64]);
        let noise_std = params.noise_std;
        let mut samples = Array2::from_shape_simple_fn((n_channels, len), || {
            let v: f64 = StandardNormal.sample(&mut noise_rng);
            v * noise_std
        });

        // block whose drift level applies at each sample
        let mut block_at = vec![0u32; len];
        let events: Vec<&Event> = sched.session_events(session).collect();
        for e in &events {
            let a = ms_to_samples(e.onset_ms, sampling_rate).min(len);
            let b = ms_to_samples(e.end_ms(), sampling_rate).min(len);
            block_at[a..b].fill(e.block_index);
        }

        if params.drift_amplitude > 0.0 || params.drift_fluctuation > 0.0 {
            let mut ou_rng = stream(params.seed, &[OU, subject_id as u64, session as u64]);
            let decay = (-1.0 / (sampling_rate * params.drift_timescale_s)).exp();
            let kick = params.drift_fluctuation * (1.0 - decay * decay).sqrt();
            for (c, mut row) in samples.rows_mut().into_iter().enumerate() {
                if !drift_on[c] {
                    continue;
                }
                let first = block_at.first().copied().unwrap_or(0) as usize;
                let z0: f64 = ou_rng.sample(StandardNormal);
                let mut x = levels[[first, c]] + params.drift_fluctuation * z0;
                for (v, &b) in row.iter_mut().zip(&block_at) {
                    let m = levels[[b as usize, c]];
                    let z: f64 = ou_rng.sample(StandardNormal);
                    x = m + (x - m) * decay + kick * z;
                    *v += x;
                }
            }
        }

        for e in events {
            let Some(class) = e.class_id else { continue };
            let gain = params.vigilance_gain(e.onset_ms as f64 / 1000.0);
            let amp = params.evoked_amplitude * gain;
            truth.push(EventTruth {
                event: *e,
                vigilance_gain: gain,
                evoked_gain: amp,
            });
            if amp == 0.0 {
                continue;
            }
            let start = ms_to_samples(e.onset_ms, sampling_rate);
            let pattern = patterns.row(class as usize);
            for (c, mut row) in samples.rows_mut().into_iter().enumerate() {
                let w = amp * pattern[c];
                let dst = row.slice_mut(ndarray::s![start..(start + stim_len).min(len)]);
                for (v, s) in dst.into_iter().zip(&burst) {
                    *v += w * s;
                }
            }
        }

        sessions.push(Recording::new(samples, sampling_rate, subject_id, session)?);
    }
    Ok(Synthesized { sessions, truth })
}
