//! IIR filter design (Butterworth bandpass, mains notch) and application.
//!
//! Filters are realized as cascades of normalized biquads
//! `y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]`
//! and evaluated in double precision.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Recording;
use crate::error::{Error, Result};

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Stability triangle test: both poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    pub fn is_finite(&self) -> bool {
        [self.b0, self.b1, self.b2, self.a1, self.a2]
            .iter()
            .all(|c| c.is_finite())
    }

    /// Pole moduli (roots of `z^2 + a1 z + a2`).
    pub fn pole_moduli(&self) -> [f64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let p1 = (-self.a1 + disc) / 2.0;
        let p2 = (-self.a1 - disc) / 2.0;
        [p1.norm(), p2.norm()]
    }

    /// `H(e^{jw})` at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b0 + self.b1 * z1 + self.b2 * z2;
        let den = 1.0 + self.a1 * z1 + self.a2 * z2;
        num / den
    }

    fn scaled(self, g: f64) -> Self {
        Self {
            b0: self.b0 * g,
            b1: self.b1 * g,
            b2: self.b2 * g,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Bandpass,
    Notch,
}

/// Whether a filter runs forward only or forward then backward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    #[default]
    Causal,
    Zero,
}

/// An immutable, validated biquad cascade.
///
/// `cutoffs` holds `(low_hz, high_hz)` for a bandpass and `(center_hz, q)`
/// for a notch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub cutoffs: (f64, f64),
    pub sample_rate: f64,
    pub sections: Vec<Biquad>,
}

impl FilterSpec {
    fn validated(self) -> Result<Self> {
        for (i, s) in self.sections.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::Cutoff(format!("section {i} has non-finite coefficients")));
            }
            if !s.is_stable() {
                return Err(Error::Cutoff(format!("section {i} is unstable")));
            }
        }
        Ok(self)
    }

    /// Complex frequency response of the whole cascade at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(w))
    }

    pub fn gain(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn gain_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.gain(freq_hz).log10()
    }

    /// Runs the cascade over `x` in place, starting from rest.
    pub fn filter_in_place(&self, x: &mut [f64]) {
        for s in &self.sections {
            // direct form II transposed
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let input = *v;
                let out = s.b0 * input + z1;
                z1 = s.b1 * input - s.a1 * out + z2;
                z2 = s.b2 * input - s.a2 * out;
                *v = out;
            }
        }
    }

    /// Forward pass, then a second pass over the time-reversed output.
    pub fn filter_zero_phase_in_place(&self, x: &mut [f64]) {
        self.filter_in_place(x);
        x.reverse();
        self.filter_in_place(x);
        x.reverse();
    }

    pub fn filter_slice(&self, x: &mut [f64], phase: Phase) {
        match phase {
            Phase::Causal => self.filter_in_place(x),
            Phase::Zero => self.filter_zero_phase_in_place(x),
        }
    }
}

fn check_band(low_hz: f64, high_hz: f64, fs: f64) -> Result<()> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Cutoff(format!("sampling rate {fs} must be positive")));
    }
    let nyquist = fs / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(Error::Cutoff(format!(
            "need 0 < low < high < {nyquist} Hz, got ({low_hz}, {high_hz})"
        )));
    }
    Ok(())
}

/// Second-order Butterworth bandpass: the order-2 analog lowpass prototype is
/// shifted to a bandpass (four poles), discretized by the bilinear transform
/// with both band edges pre-warped, and split into two biquads.
///
/// The cascade has unit gain at the (warped) geometric center frequency and
/// -3.01 dB at both cutoffs.
pub fn design_bandpass(low_hz: f64, high_hz: f64, fs: f64) -> Result<FilterSpec> {
    check_band(low_hz, high_hz, fs)?;
    let two_fs = 2.0 * fs;
    let w1 = two_fs * (PI * low_hz / fs).tan();
    let w2 = two_fs * (PI * high_hz / fs).tan();
    let bw = w2 - w1;
    let w0 = (w1 * w2).sqrt();
    let center = 2.0 * (w0 / two_fs).atan();

    // Upper-half-plane prototype pole; its conjugate yields the conjugate bandpass poles.
    let proto = Complex64::from_polar(1.0, 3.0 * PI / 4.0);
    let half = proto * (bw / 2.0);
    let root = (half * half - w0 * w0).sqrt();

    let mut sections = Vec::with_capacity(2);
    for s_pole in [half + root, half - root] {
        let z_pole = (1.0 + s_pole / two_fs) / (1.0 - s_pole / two_fs);
        // zeros at z = +1 and z = -1 (analog zeros at DC and infinity)
        let raw = Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: -2.0 * z_pole.re,
            a2: z_pole.norm_sqr(),
        };
        let g = raw.response(center).norm();
        sections.push(raw.scaled(1.0 / g));
    }

    FilterSpec {
        kind: FilterKind::Bandpass,
        cutoffs: (low_hz, high_hz),
        sample_rate: fs,
        sections,
    }
    .validated()
}

/// Biquad notch with zeros on the unit circle at `center_hz`.
pub fn design_notch(center_hz: f64, q: f64, fs: f64) -> Result<FilterSpec> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Cutoff(format!("sampling rate {fs} must be positive")));
    }
    if !(center_hz > 0.0 && center_hz < fs / 2.0) {
        return Err(Error::Cutoff(format!(
            "notch center {center_hz} Hz must lie in (0, {}) Hz",
            fs / 2.0
        )));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Cutoff(format!("notch Q must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * center_hz / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let c = -2.0 * w0.cos();
    FilterSpec {
        kind: FilterKind::Notch,
        cutoffs: (center_hz, q),
        sample_rate: fs,
        sections: vec![Biquad {
            b0: 1.0 / a0,
            b1: c / a0,
            b2: 1.0 / a0,
            a1: c / a0,
            a2: (1.0 - alpha) / a0,
        }],
    }
    .validated()
}

/// Filters every channel of `rec` independently along time.
pub fn apply_filter(spec: &FilterSpec, rec: &Recording, phase: Phase) -> Result<Recording> {
    if !rec.samples.iter().all(|v| v.is_finite()) {
        return Err(Error::Data("recording contains non-finite samples".into()));
    }
    let mut out = rec.clone();
    filter_rows(spec, &mut out.samples, phase);
    Ok(out)
}

pub(crate) fn filter_rows(spec: &FilterSpec, samples: &mut Array2<f64>, phase: Phase) {
    let t = samples.ncols();
    let mut buf = vec![0.0; t];
    for mut row in samples.rows_mut() {
        for (b, v) in buf.iter_mut().zip(row.iter()) {
            *b = *v;
        }
        spec.filter_slice(&mut buf, phase);
        for (v, b) in row.iter_mut().zip(&buf) {
            *v = *b;
        }
    }
}
