//! Bias-detection battery: blank and block-label leakage, per-subject versus
//! pooled training, duration sweeps and the one-hotness of encodings.

pub mod leakage;
pub mod onehot;
pub mod report;

pub use leakage::{
    blank_leakage, block_label_leakage, block_label_leakage_per_subject, duration_sweep, fit_and_test,
    per_subject_vs_pooled, Protocol,
};
pub use onehot::{one_hotness, EncodingMatrix, OneHotness};
pub use report::{mean_std, DiagnosticReport, ReportRow, SubjectScore};
