use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    Block,
    Rapid,
}

/// Timing constants of a presentation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub stimulus_ms: u64,
    pub blank_ms: u64,
    /// Stimuli per presentation block in rapid designs. Block designs use
    /// one block per class instead.
    pub rapid_block_size: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            stimulus_ms: 500,
            blank_ms: 10_000,
            rapid_block_size: 50,
        }
    }
}

/// A stimulus or blank-screen interval. Onsets are relative to the start of
/// the event's session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub onset_ms: u64,
    pub duration_ms: u64,
    /// `None` marks a blank screen.
    pub class_id: Option<u16>,
    /// Presentation block; a blank carries the index of the block before it.
    pub block_index: u32,
    pub session_index: u32,
    pub image_id: Option<u32>,
}

impl Event {
    pub fn is_blank(&self) -> bool {
        self.class_id.is_none()
    }

    pub fn end_ms(&self) -> u64 {
        self.onset_ms + self.duration_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSchedule {
    pub design: Design,
    pub n_classes: usize,
    pub images_per_class: usize,
    pub geometry: Geometry,
    pub events: Vec<Event>,
}

impl StimulusSchedule {
    pub fn stimuli(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| !e.is_blank())
    }

    pub fn n_sessions(&self) -> usize {
        self.events.iter().map(|e| e.session_index as usize + 1).max().unwrap_or(0)
    }

    pub fn n_blocks(&self) -> usize {
        self.stimuli().map(|e| e.block_index as usize + 1).max().unwrap_or(0)
    }

    pub fn session_events(&self, session: u32) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.session_index == session)
    }

    /// Length of a session in milliseconds (end of its last event).
    pub fn session_duration_ms(&self, session: u32) -> u64 {
        self.session_events(session).map(Event::end_ms).max().unwrap_or(0)
    }

    pub fn total_duration_ms(&self) -> u64 {
        (0..self.n_sessions() as u32).map(|s| self.session_duration_ms(s)).sum()
    }

    /// Class shown in each presentation block (block designs only have one).
    pub fn block_class(&self, block: u32) -> Option<u16> {
        self.stimuli().find(|e| e.block_index == block).and_then(|e| e.class_id)
    }

    /// For a blank following block `b`: `(class of block b, class of block b+1)`.
    /// Meaningful for block designs only.
    pub fn blank_neighbors(&self, blank: &Event) -> Option<(u16, u16)> {
        let prev = self.block_class(blank.block_index)?;
        let next = self.block_class(blank.block_index + 1)?;
        Some((prev, next))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Sidecar::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Sidecar = serde_json::from_str(s)?;
        Ok(sc.into())
    }
}

/// On-disk schedule sidecar.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    design: Design,
    #[serde(default)]
    n_classes: Option<usize>,
    #[serde(default)]
    images_per_class: Option<usize>,
    #[serde(default)]
    geometry: Option<Geometry>,
    events: Vec<Event>,
}

impl From<&StimulusSchedule> for Sidecar {
    fn from(s: &StimulusSchedule) -> Self {
        Sidecar {
            design: s.design,
            n_classes: Some(s.n_classes),
            images_per_class: Some(s.images_per_class),
            geometry: Some(s.geometry),
            events: s.events.clone(),
        }
    }
}

impl From<Sidecar> for StimulusSchedule {
    fn from(sc: Sidecar) -> Self {
        let n_classes = sc.n_classes.unwrap_or_else(|| {
            sc.events.iter().filter_map(|e| e.class_id).map(|c| c as usize + 1).max().unwrap_or(0)
        });
        let stimuli = sc.events.iter().filter(|e| !e.is_blank()).count();
        StimulusSchedule {
            design: sc.design,
            n_classes,
            images_per_class: sc.images_per_class.unwrap_or(stimuli / n_classes.max(1)),
            geometry: sc.geometry.unwrap_or_default(),
            events: sc.events,
        }
    }
}

/// Builds a block or rapid presentation schedule.
///
/// Block design: class order is a seeded permutation, split into `sessions`
/// consecutive chunks; every class is one block of `images_per_class`
/// stimuli, with a blank between consecutive blocks of a session.
///
/// Rapid design: all stimuli in one seeded random order, one session, grouped
/// into blocks of `geometry.rapid_block_size` separated by blanks.
pub fn generate_schedule(
    design: Design,
    n_classes: usize,
    images_per_class: usize,
    sessions: usize,
    seed: u64,
) -> Result<StimulusSchedule> {
    generate_schedule_with(design, n_classes, images_per_class, sessions, Geometry::default(), seed)
}

pub fn generate_schedule_with(
    design: Design,
    n_classes: usize,
    images_per_class: usize,
    sessions: usize,
    geometry: Geometry,
    seed: u64,
) -> Result<StimulusSchedule> {
    if n_classes < 2 || n_classes > u16::MAX as usize {
        return Err(Error::Config {
            field: "n_classes".into(),
            reason: format!("need at least 2 classes, got {n_classes}"),
        });
    }
    if images_per_class == 0 {
        return Err(Error::Config {
            field: "images_per_class".into(),
            reason: "must be at least 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5C4E_D01E]));
    let image_id = |class: usize, idx: usize| (class * images_per_class + idx) as u32;
    let mut events = Vec::new();

    match design {
        Design::Block => {
            if sessions == 0 || sessions > n_classes {
                return Err(Error::Config {
                    field: "sessions".into(),
                    reason: format!("need 1..={n_classes} sessions, got {sessions}"),
                });
            }
            let mut order: Vec<usize> = (0..n_classes).collect();
            order.shuffle(&mut rng);
            let per_session = n_classes.div_ceil(sessions);
            let mut block = 0u32;
            for (session, chunk) in order.chunks(per_session).enumerate() {
                let mut t = 0u64;
                for (k, &class) in chunk.iter().enumerate() {
                    if k > 0 {
                        events.push(Event {
                            onset_ms: t,
                            duration_ms: geometry.blank_ms,
                            class_id: None,
                            block_index: block - 1,
                            session_index: session as u32,
                            image_id: None,
                        });
                        t += geometry.blank_ms;
                    }
                    let mut idx: Vec<usize> = (0..images_per_class).collect();
                    idx.shuffle(&mut rng);
                    for i in idx {
                        events.push(Event {
                            onset_ms: t,
                            duration_ms: geometry.stimulus_ms,
                            class_id: Some(class as u16),
                            block_index: block,
                            session_index: session as u32,
                            image_id: Some(image_id(class, i)),
                        });
                        t += geometry.stimulus_ms;
                    }
                    block += 1;
                }
            }
        }
        Design::Rapid => {
            if geometry.rapid_block_size == 0 {
                return Err(Error::Config {
                    field: "rapid_block_size".into(),
                    reason: "must be at least 1".into(),
                });
            }
            let mut stimuli: Vec<(usize, usize)> = (0..n_classes)
                .flat_map(|c| (0..images_per_class).map(move |i| (c, i)))
                .collect();
            stimuli.shuffle(&mut rng);
            let mut t = 0u64;
            for (block, chunk) in stimuli.chunks(geometry.rapid_block_size).enumerate() {
                if block > 0 {
                    events.push(Event {
                        onset_ms: t,
                        duration_ms: geometry.blank_ms,
                        class_id: None,
                        block_index: block as u32 - 1,
                        session_index: 0,
                        image_id: None,
                    });
                    t += geometry.blank_ms;
                }
                for &(class, i) in chunk {
                    events.push(Event {
                        onset_ms: t,
                        duration_ms: geometry.stimulus_ms,
                        class_id: Some(class as u16),
                        block_index: block as u32,
                        session_index: 0,
                        image_id: Some(image_id(class, i)),
                    });
                    t += geometry.stimulus_ms;
                }
            }
        }
    }

    Ok(StimulusSchedule {
        design,
        n_classes,
        images_per_class,
        geometry,
        events,
    })
}

/// Images per class for a single-session rapid experiment lasting roughly
/// `minutes`: whole presentation blocks are fitted to the duration and the
/// stimuli spread evenly over classes.
pub fn rapid_images_per_class(minutes: f64, n_classes: usize, geometry: Geometry) -> usize {
    let block_ms = geometry.rapid_block_size as f64 * geometry.stimulus_ms as f64;
    let total_ms = minutes * 60_000.0;
    let blocks = ((total_ms + geometry.blank_ms as f64) / (block_ms + geometry.blank_ms as f64))
        .round()
        .max(1.0);
    let stimuli = blocks * geometry.rapid_block_size as f64;
    ((stimuli / n_classes as f64).round() as usize).max(1)
}

/// Block index of every stimulus event, in schedule order; the true class is
/// ignored.
pub fn assign_block_labels(sched: &StimulusSchedule) -> Vec<u32> {
    sched.stimuli().map(|e| e.block_index).collect()
}
