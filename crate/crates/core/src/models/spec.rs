use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Flattened input -> head.
    LinearSoftmax,
    /// Independent temporal convolutions per channel, ReLU, average pooling
    /// into `pool_bins` time bins per channel/filter (the 1D-CNN family).
    ChannelwiseCnn,
    /// Convolutions spanning every channel from the first layer, ReLU,
    /// average pooling over time.
    PooledCnn,
    /// Single LSTM layer with `encoder_dim` hidden units; the last hidden
    /// state feeds the head.
    RecurrentEncoder,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::LinearSoftmax,
        Family::ChannelwiseCnn,
        Family::PooledCnn,
        Family::RecurrentEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::LinearSoftmax => "linear-softmax",
            Family::ChannelwiseCnn => "channelwise-cnn",
            Family::PooledCnn => "pooled-cnn",
            Family::RecurrentEncoder => "recurrent-encoder",
        }
    }
}

/// Classifier head on top of the trunk features. `40` stands for
/// `n_classes` and `128` for `encoder_dim`; the encoder/classifier boundary
/// sits after the listed layers.
///
/// | head        | layers                         | encoding dim |
/// |-------------|--------------------------------|--------------|
/// | `fc40`      | FC(40) ‖ CE                    | 40           |
/// | `fc40-relu` | FC(40) ReLU ‖ CE               | 40           |
/// | `fc128`     | FC(128) ‖ CE                   | 128          |
/// | `relu-only` | FC(128) ReLU ‖ CE              | 128          |
/// | `relu-fc40` | FC(128) ReLU ‖ FC(40) CE       | 128          |
///
/// With `fc128` and `relu-only` the cross-entropy runs over all 128 outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    #[serde(alias = "direct")]
    Fc40,
    Fc40Relu,
    Fc128,
    #[serde(alias = "fc128-relu")]
    ReluOnly,
    ReluFc40,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Fc40 => "fc40",
            Head::Fc40Relu => "fc40-relu",
            Head::Fc128 => "fc128",
            Head::ReluOnly => "relu-only",
            Head::ReluFc40 => "relu-fc40",
        }
    }

    /// LSTM-style variant name when used on the recurrent encoder.
    pub fn lstm_variant(self) -> &'static str {
        match self {
            Head::ReluOnly => "LSTM",
            Head::Fc128 => "LSTM1",
            Head::Fc40 => "LSTM2",
            Head::Fc40Relu => "LSTM3",
            Head::ReluFc40 => "LSTM4",
        }
    }

    pub(crate) fn hidden_dim(self, spec: &ModelSpec) -> usize {
        match self {
            Head::Fc40 | Head::Fc40Relu => spec.n_classes,
            Head::Fc128 | Head::ReluOnly | Head::ReluFc40 => spec.encoder_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub head: Head,
    pub n_classes: usize,
    pub encoder_dim: usize,
    pub channels: usize,
    /// Input samples per channel before decimation.
    pub samples: usize,
    /// Non-overlapping averaging factor on the time axis.
    pub downsample: usize,
    /// Convolution filters (per channel for the channel-wise family).
    pub filters: usize,
    pub kernel: usize,
    pub pool_bins: usize,
}

impl ModelSpec {
    /// Family defaults for a `channels x samples` input.
    pub fn new(family: Family, channels: usize, samples: usize, n_classes: usize) -> Self {
        let (head, downsample, filters, kernel, pool_bins) = match family {
            Family::LinearSoftmax => (Head::Fc40, 1, 0, 0, 0),
            Family::ChannelwiseCnn => (Head::Fc40, 4, 4, 7, 4),
            Family::PooledCnn => (Head::Fc40, 4, 16, 7, 1),
            Family::RecurrentEncoder => (Head::ReluFc40, 4, 0, 0, 0),
        };
        Self {
            family,
            head,
            n_classes,
            encoder_dim: 128,
            channels,
            samples,
            downsample,
            filters,
            kernel,
            pool_bins,
        }
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn with_downsample(mut self, factor: usize) -> Self {
        self.downsample = factor;
        self
    }

    pub fn with_encoder_dim(mut self, dim: usize) -> Self {
        self.encoder_dim = dim;
        self
    }

    /// Time steps after decimation.
    pub fn steps(&self) -> usize {
        self.samples / self.downsample.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.downsample < 1 {
            return bad("downsample_factor must be >= 1".into());
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.channels == 0 || self.steps() == 0 {
            return bad(format!(
                "empty input: {} channels x {} steps",
                self.channels,
                self.steps()
            ));
        }
        if matches!(self.head, Head::Fc128 | Head::ReluOnly) && self.encoder_dim < self.n_classes {
            return bad(format!(
                "encoder_dim {} < n_classes {} for head {}",
                self.encoder_dim,
                self.n_classes,
                self.head.name()
            ));
        }
        if self.encoder_dim == 0 {
            return bad("encoder_dim must be >= 1".into());
        }
        match self.family {
            Family::ChannelwiseCnn | Family::PooledCnn => {
                if self.filters == 0 || self.kernel == 0 || self.pool_bins == 0 {
                    return bad("convolutional families need filters, kernel and pool_bins >= 1".into());
                }
                if self.kernel > self.steps() {
                    return bad(format!("kernel {} longer than {} steps", self.kernel, self.steps()));
                }
                if self.pool_bins > self.steps() - self.kernel + 1 {
                    return bad(format!("{} pool bins exceed the convolution output length", self.pool_bins));
                }
            }
            Family::LinearSoftmax | Family::RecurrentEncoder => {}
        }
        Ok(())
    }
}
