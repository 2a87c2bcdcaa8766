//! `EEGB` v1 segment container.
//!
//! Layout (all little endian):
//!
//! ```text
//! "EEGB" | u32 version = 1 | u32 n_channels | u32 sampling_rate_hz | u32 n_segments
//! per segment:
//!   u32 n_samples | i32 class_label (-1 = blank) | u32 block_index
//!   u32 subject_id | u32 session_id | u64 onset_ms
//!   n_channels * n_samples f32, channel-major
//! ```
//!
//! Blank neighbour classes and image ids are not part of the container; they
//! are recovered from the schedule sidecar.

use std::io::{Read, Write};

use ndarray::Array2;

use super::Segment;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EEGB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EegbFile {
    pub n_channels: u32,
    pub sampling_rate_hz: u32,
    pub segments: Vec<Segment>,
}

pub fn write_eegb<W: Write>(mut w: W, sampling_rate_hz: u32, segments: &[Segment]) -> Result<()> {
    let n_channels = segments.first().map_or(0, |s| s.n_channels());
    if let Some(bad) = segments.iter().find(|s| s.n_channels() != n_channels) {
        return Err(Error::Format(format!(
            "mixed channel counts: {} vs {n_channels}",
            bad.n_channels()
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(n_channels as u32).to_le_bytes())?;
    w.write_all(&sampling_rate_hz.to_le_bytes())?;
    w.write_all(&(segments.len() as u32).to_le_bytes())?;
    let mut buf = Vec::new();
    for s in segments {
        buf.clear();
        buf.extend_from_slice(&(s.n_samples() as u32).to_le_bytes());
        let label = s.class_label.map_or(-1i32, i32::from);
        buf.extend_from_slice(&label.to_le_bytes());
        buf.extend_from_slice(&s.block_label.to_le_bytes());
        buf.extend_from_slice(&s.subject_id.to_le_bytes());
        buf.extend_from_slice(&s.session_id.to_le_bytes());
        buf.extend_from_slice(&s.onset_ms.to_le_bytes());
        for row in s.samples.rows() {
            for &v in row {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_eegb<R: Read>(mut r: R) -> Result<EegbFile> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected EEGB")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported EEGB version {version}")));
    }
    let n_channels = read_u32(&mut r)?;
    let sampling_rate_hz = read_u32(&mut r)?;
    let n_segments = read_u32(&mut r)?;
    let mut segments = Vec::with_capacity(n_segments.min(1 << 16) as usize);
    let mut raw = Vec::new();
    for _ in 0..n_segments {
        let n_samples = read_u32(&mut r)? as usize;
        let label = read_u32(&mut r)? as i32;
        let block_label = read_u32(&mut r)?;
        let subject_id = read_u32(&mut r)?;
        let session_id = read_u32(&mut r)?;
        let onset_ms = read_u64(&mut r)?;
        let class_label = match label {
            -1 => None,
            l if (0..=u16::MAX as i32).contains(&l) => Some(l as u16),
            l => return Err(Error::Format(format!("invalid class label {l}"))),
        };
        let count = n_channels as usize * n_samples;
        raw.resize(count * 4, 0);
        r.read_exact(&mut raw)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let samples = Array2::from_shape_vec((n_channels as usize, n_samples), values)
            .map_err(|e| Error::Format(e.to_string()))?;
        segments.push(Segment {
            samples,
            class_label,
            block_label,
            blank_neighbors: None,
            subject_id,
            session_id,
            onset_ms,
            image_id: None,
        });
    }
    Ok(EegbFile {
        n_channels,
        sampling_rate_hz,
        segments,
    })
}
