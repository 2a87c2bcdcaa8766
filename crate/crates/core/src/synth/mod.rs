//! Synthetic block-design, rapid-design and blank-interval experiments with
//! known ground truth.

pub mod generator;
pub mod schedule;
pub mod splits;

pub use generator::{synthesize_recording, EventTruth, NeuralModelParams, Synthesized};
pub use schedule::{
    assign_block_labels, generate_schedule, generate_schedule_with, rapid_images_per_class, Design, Event, Geometry,
    StimulusSchedule,
};
pub use splits::{make_splits, DatasetSplit, Part, Ratios};
