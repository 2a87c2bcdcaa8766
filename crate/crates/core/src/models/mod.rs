//! From-scratch classifiers: linear softmax, channel-wise and pooled
//! convolutional networks and an LSTM encoder, trained with Adam.

pub mod checkpoint;
pub mod eval;
pub mod network;
pub mod spec;
pub mod train;

pub use checkpoint::{load_model, read_blob, save_model, write_blob, write_history_csv};
pub use eval::{chance, evaluate, labels_of, predict_all, score, LabelKind};
pub use network::{argmax, softmax, Network};
pub use spec::{Family, Head, ModelSpec};
pub use train::{build, train, Checkpoint, EpochRecord, TrainConfig, TrainedModel};
