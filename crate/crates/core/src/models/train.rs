use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::eval::{labels_of, LabelKind};
use super::network::{argmax, cross_entropy, Network};
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::signal::Segment;
use crate::synth::DatasetSplit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 16,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config {
                field: "lr".into(),
                reason: format!("must be > 0, got {}", self.lr),
            });
        }
        if self.batch == 0 {
            return Err(Error::Config {
                field: "batch".into(),
                reason: "must be >= 1".into(),
            });
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config {
                field: "optimizer".into(),
                reason: "betas must lie in [0, 1) and eps must be > 0".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Parameters saved at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: Vec<f64>,
}

/// A network with its training bookkeeping. `network` holds the selected
/// (best validation accuracy) parameters once trained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub selected_epoch: Option<usize>,
    /// Checkpoint at the lowest validation accuracy, kept for auditing.
    pub lowest_val: Option<Checkpoint>,
}

pub fn build(spec: ModelSpec, seed: u64) -> Result<TrainedModel> {
    Ok(TrainedModel::untrained(Network::build(spec, seed)?))
}

impl TrainedModel {
    pub fn untrained(network: Network) -> Self {
        Self {
            network,
            history: Vec::new(),
            selected_epoch: None,
            lowest_val: None,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        self.network.spec()
    }

    /// The network at the lowest-validation-accuracy epoch, if trained.
    pub fn lowest_val_network(&self) -> Option<Network> {
        let c = self.lowest_val.as_ref()?;
        Network::from_params(self.spec().clone(), c.params.clone()).ok()
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            params[i] -= cfg.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
        }
    }
}

fn prepared(net: &Network, segs: &[Segment], kind: LabelKind) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let labels = labels_of(segs, kind)?;
    let out = net.output_dim();
    if let Some(&bad) = labels.iter().find(|&&l| l >= out) {
        return Err(Error::Data(format!("label {bad} out of range for {out} outputs")));
    }
    let inputs = segs.iter().map(|s| net.prepare(s.samples.view())).collect::<Result<_>>()?;
    Ok((inputs, labels))
}

fn loss_acc(net: &Network, inputs: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut hits = 0;
    for (x, &y) in inputs.iter().zip(labels) {
        let logits = net.trace(x).logits;
        loss += cross_entropy(&logits, y).0;
        hits += usize::from(argmax(&logits) == y);
    }
    let n = inputs.len() as f64;
    (loss / n, hits as f64 / n)
}

/// Mini-batch Adam on cross-entropy. Keeps the parameters of the epoch with
/// the highest validation accuracy (earliest on ties).
pub fn train(mut model: TrainedModel, split: &DatasetSplit, kind: LabelKind, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if kind == LabelKind::BlankPair {
        return Err(Error::Data("blank-pair labels are for evaluation only".into()));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            split.train.len(),
            split.val.len()
        )));
    }
    let (xs, ys) = prepared(&model.network, &split.train, kind)?;
    let (vx, vy) = prepared(&model.network, &split.val, kind)?;
    let n_params = model.network.n_params();
    let mut adam = Adam::new(n_params);
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut worst: Option<(f64, Checkpoint)> = None;
    model.history.clear();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, &[0x7EA1, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut hits = 0;
        for batch in order.chunks(cfg.batch) {
            grad.fill(0.0);
            for &i in batch {
                let (loss, pred) = model.network.loss_grad(&xs[i], ys[i], &mut grad);
                loss_sum += loss;
                hits += usize::from(pred == ys[i]);
            }
            if !loss_sum.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "non-finite loss".into(),
                });
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(model.network.params_mut(), &grad, cfg);
        }
        let (val_loss, val_acc) = loss_acc(&model.network, &vx, &vy);
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "non-finite validation loss".into(),
            });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / xs.len() as f64,
            train_acc: hits as f64 / xs.len() as f64,
            val_loss,
            val_acc,
        };
        log::debug!("epoch {epoch}: {rec:?}");
        model.history.push(rec);
        let snap = || Checkpoint {
            epoch,
            params: model.network.params().to_vec(),
        };
        if best.as_ref().map_or(true, |(acc, _)| val_acc > *acc) {
            best = Some((val_acc, snap()));
        }
        if worst.as_ref().map_or(true, |(acc, _)| val_acc < *acc) {
            worst = Some((val_acc, snap()));
        }
    }
    if let Some((_, ck)) = best {
        model.selected_epoch = Some(ck.epoch);
        model.network = Network::from_params(model.spec().clone(), ck.params)?;
    }
    model.lowest_val = worst.map(|(_, ck)| ck);
    Ok(model)
}
