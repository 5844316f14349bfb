//! AdamW with cosine annealing, seeded batching and best-epoch selection.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{VariantKey, VariantRecord};
use crate::embedding::{EmbeddingStore, Modality};
use crate::error::{Error, Result};
use crate::eval::{aggregate_report, Aggregate, DEFAULT_THRESHOLD};
use crate::nn::{Ablation, Checkpoint, Dropout, FusionDims, FusionModel, Params, TrainState, EXPERTS};
use crate::objectives::{loss_and_gradients, LossBreakdown, DEFAULT_LAMBDA, DEFAULT_TEMPERATURE};
use crate::rng;
use crate::tensor::Matrix;

pub const DEFAULT_LR: f64 = 3e-4;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_BATCH_SIZE: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub ablation: Ablation,
    pub dims: FusionDims,
    /// Aggregation of the validation AUROC used for model selection.
    pub aggregate: Aggregate,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: DEFAULT_LR,
            lr_min: 0.0,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            epochs: DEFAULT_EPOCHS,
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TEMPERATURE,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            ablation: Ablation::default(),
            dims: FusionDims::default(),
            aggregate: Aggregate::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_max", self.lr_max), ("tau", self.tau), ("eps", self.eps)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lr_min < 0.0 || self.lr_min > self.lr_max {
            return Err(Error::Config(format!(
                "lr_min must lie in [0, lr_max], got {}",
                self.lr_min
            )));
        }
        for (name, v) in [("weight_decay", self.weight_decay), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max - lr_min)(1 + cos(πt/T))`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let progress = t.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moment estimates for decoupled-decay Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps taken so far.
    pub t: u64,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update of every trainable tensor. Decayed tensors shrink by
    /// `1 - lr·wd` before the adaptive step; frozen tensors and their moments
    /// are left untouched.
    pub fn step(&mut self, params: &mut Params, grads: &[f64], trainable: &[bool], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (id, spec) in params.specs.iter().enumerate() {
            if !trainable[id] {
                continue;
            }
            let shrink = if spec.decay { 1.0 - lr * cfg.weight_decay } else { 1.0 };
            for i in spec.range() {
                let g = grads[i];
                self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
                self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                params.values[i] = params.values[i] * shrink - lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
}

/// Embedding triples aligned with their variants.
#[derive(Clone, Debug)]
pub struct Examples {
    pub keys: Vec<VariantKey>,
    pub inputs: [Matrix; 3],
    pub labels: Vec<Option<u8>>,
}

impl Examples {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn proteins(&self) -> Vec<String> {
        self.keys.iter().map(|k| k.protein_id.clone()).collect()
    }

    /// Labels, or an error naming the first unlabelled variant.
    pub fn required_labels(&self) -> Result<Vec<u8>> {
        self.labels
            .iter()
            .zip(&self.keys)
            .map(|(l, k)| l.ok_or_else(|| Error::Config(format!("variant {k} has no label"))))
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Examples {
        Examples {
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            inputs: std::array::from_fn(|m| self.inputs[m].select_rows(idx)),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Joins variants with their three stored embeddings. Every variant must be
/// present in every store.
pub fn assemble_examples(records: &[VariantRecord], stores: [&EmbeddingStore; 3]) -> Result<Examples> {
    let expected = [Modality::Sequence, Modality::Structure, Modality::Dynamics];
    let mut lookups = Vec::with_capacity(3);
    for (store, want) in stores.iter().zip(expected) {
        if store.modality != want {
            return Err(Error::Config(format!(
                "expected a {want:?} store, got {:?}",
                store.modality
            )));
        }
        let map: HashMap<&VariantKey, &[f32]> = store.entries.iter().map(|e| (&e.key, e.vector.as_slice())).collect();
        lookups.push(map);
    }
    let mut missing = Vec::new();
    let mut data: [Vec<f64>; 3] = Default::default();
    for r in records {
        let key = r.key();
        let found: Vec<Option<&&[f32]>> = lookups.iter().map(|m| m.get(&key)).collect();
        if found.iter().any(Option::is_none) {
            missing.push(key);
            continue;
        }
        for (m, v) in found.into_iter().enumerate() {
            data[m].extend(v.expect("checked").iter().map(|&x| x as f64));
        }
    }
    if let Some(first) = missing.first() {
        return Err(Error::MissingEmbeddings {
            count: missing.len(),
            first: first.to_string(),
        });
    }
    let n = records.len();
    let inputs = std::array::from_fn(|m| Matrix::from_vec(n, stores[m].dim, std::mem::take(&mut data[m])));
    Ok(Examples {
        keys: records.iter().map(VariantRecord::key).collect(),
        inputs,
        labels: records.iter().map(|r| r.label).collect(),
    })
}

/// Eval-mode outputs per variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// Probability of the functional class.
    pub prob: Vec<f64>,
    pub weights: Vec<[f64; EXPERTS]>,
}

const PREDICT_CHUNK: usize = 256;

pub fn predict(model: &FusionModel, ablation: &Ablation, inputs: &[Matrix; 3]) -> Result<Predictions> {
    let n = inputs[0].rows;
    let mut out = Predictions {
        prob: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
    };
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(n)).collect();
        let chunk: [Matrix; 3] = std::array::from_fn(|m| inputs[m].select_rows(&idx));
        let fwd = model.forward([&chunk[0], &chunk[1], &chunk[2]], ablation, Dropout::Off)?;
        for i in 0..idx.len() {
            let l = fwd.out.logits.row(i);
            out.prob.push(1.0 / (1.0 + (l[0] - l[1]).exp()));
            out.weights
                .push(fwd.out.weights.row(i).try_into().expect("four experts"));
        }
        start += PREDICT_CHUNK;
    }
    Ok(out)
}

/// Mean of each loss term over the steps of an epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossMeans {
    pub ce: f64,
    pub nce_seq_str: Option<f64>,
    pub nce_seq_dyn: Option<f64>,
    pub nce_str_dyn: Option<f64>,
    pub ctr: f64,
    pub total: f64,
}

impl LossMeans {
    fn from_steps(steps: &[LossBreakdown]) -> Self {
        let n = steps.len() as f64;
        let mean = |f: fn(&LossBreakdown) -> f64| steps.iter().map(f).sum::<f64>() / n;
        let opt = |f: fn(&LossBreakdown) -> Option<f64>| steps.iter().map(f).sum::<Option<f64>>().map(|s| s / n);
        Self {
            ce: mean(|s| s.ce),
            nce_seq_str: opt(|s| s.nce_seq_str),
            nce_seq_dyn: opt(|s| s.nce_seq_dyn),
            nce_str_dyn: opt(|s| s.nce_str_dyn),
            ctr: mean(|s| s.ctr),
            total: mean(|s| s.total),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train: LossMeans,
    pub val_auroc: f64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the highest validation AUROC, earliest on ties.
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub best: FusionModel,
    pub last: FusionModel,
    pub state: TrainState,
    pub history: TrainHistory,
}

impl TrainOutcome {
    pub fn best_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            seed: cfg.seed,
            ablation: cfg.ablation,
            model: self.best.clone(),
            state: None,
        }
    }

    pub fn last_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            seed: cfg.seed,
            ablation: cfg.ablation,
            model: self.last.clone(),
            state: Some(self.state.clone()),
        }
    }
}

/// Where to pick up an interrupted run.
pub struct Resume {
    /// Checkpoint carrying optimizer state.
    pub last: Checkpoint,
    /// Best model so far, when its epoch predates the resume point.
    pub best: Option<FusionModel>,
}

/// Mini-batches of a seeded permutation; a trailing batch of one row is
/// merged into the previous batch so the contrastive term stays defined.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::hashed(&[
        b"shuffle",
        &seed.to_le_bytes(),
        &(epoch as u64).to_le_bytes(),
    ]));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

fn validation_auroc(model: &FusionModel, cfg: &TrainConfig, val: &Examples, labels: &[u8]) -> Result<f64> {
    let p = predict(model, &cfg.ablation, &val.inputs)?;
    Ok(
        aggregate_report(&p.prob, labels, &val.proteins(), cfg.aggregate, DEFAULT_THRESHOLD)?
            .overall
            .auroc,
    )
}

fn log_line<T: Serialize>(log: &mut dyn Write, value: &T) -> Result<()> {
    let line = serde_json::to_string(value)?;
    writeln!(log, "{line}").map_err(|e| Error::io("training log", e))
}

#[derive(Serialize)]
struct StepLog<'a> {
    kind: &'static str,
    epoch: usize,
    step: u64,
    lr: f64,
    loss: &'a LossBreakdown,
}

#[derive(Serialize)]
struct EpochLog<'a> {
    kind: &'static str,
    #[serde(flatten)]
    record: &'a EpochRecord,
}

/// Trains for `cfg.epochs` epochs and keeps the best-validation parameters.
pub fn train(
    train_set: &Examples,
    val_set: &Examples,
    cfg: &TrainConfig,
    resume: Option<Resume>,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_labels = train_set.required_labels()?;
    let val_labels = val_set.required_labels()?;
    if train_set.len() < 2 {
        return Err(Error::Config("training needs at least two variants".into()));
    }

    let (mut model, mut opt, start_epoch, mut best, mut best_epoch, mut best_score) = match resume {
        None => {
            let model = FusionModel::new(cfg.dims, cfg.seed);
            let opt = AdamW::new(model.params.len());
            (model.clone(), opt, 0, model, 0, f64::NEG_INFINITY)
        }
        Some(r) => {
            let state = r
                .last
                .state
                .clone()
                .ok_or_else(|| Error::Config("checkpoint has no training state".into()))?;
            if r.last.model.dims != cfg.dims || r.last.ablation != cfg.ablation {
                return Err(Error::Config(
                    "checkpoint does not match the training configuration".into(),
                ));
            }
            let opt = AdamW {
                m: state.m,
                v: state.v,
                t: state.step,
            };
            let best = r.best.unwrap_or_else(|| r.last.model.clone());
            (
                r.last.model,
                opt,
                state.epoch as usize,
                best,
                state.best_epoch as usize,
                state.best_score,
            )
        }
    };
    let trainable = model.trainable(&cfg.ablation);
    let steps_per_epoch = epoch_batches(train_set.len(), cfg.batch_size, cfg.seed, 0).len();
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch,
    };

    for epoch in start_epoch..cfg.epochs {
        let mut losses = Vec::with_capacity(steps_per_epoch);
        let mut lr = cfg.lr_max;
        for (b, idx) in epoch_batches(train_set.len(), cfg.batch_size, cfg.seed, epoch)
            .iter()
            .enumerate()
        {
            let step = opt.t;
            lr = cosine_lr(step as usize, total_steps, cfg.lr_max, cfg.lr_min);
            let x: [Matrix; 3] = std::array::from_fn(|m| {
                if cfg.ablation.modalities[m] {
                    train_set.inputs[m].select_rows(idx)
                } else {
                    Matrix::zeros(idx.len(), 0)
                }
            });
            let labels: Vec<u8> = idx.iter().map(|&i| train_labels[i]).collect();
            let dropout = Dropout::On {
                seed: cfg.seed,
                epoch: epoch as u64,
                batch: b as u64,
            };
            let fwd = model.forward([&x[0], &x[1], &x[2]], &cfg.ablation, dropout)?;
            let (loss, grads) = loss_and_gradients(&model, &fwd, &labels, cfg.lambda, cfg.tau)?;
            if !loss.total.is_finite() || grads.params.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step: step as usize + 1,
                });
            }
            opt.step(&mut model.params, &grads.params, &trainable, lr, cfg);
            log_line(
                log,
                &StepLog {
                    kind: "step",
                    epoch: epoch + 1,
                    step: opt.t,
                    lr,
                    loss: &loss,
                },
            )?;
            losses.push(loss);
        }
        let val_auroc = validation_auroc(&model, cfg, val_set, &val_labels)?;
        if val_auroc > best_score {
            best_score = val_auroc;
            best_epoch = epoch + 1;
            best = model.clone();
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train: LossMeans::from_steps(&losses),
            val_auroc,
            lr,
        };
        log_line(
            log,
            &EpochLog {
                kind: "epoch",
                record: &record,
            },
        )?;
        history.epochs.push(record);
    }
    history.best_epoch = best_epoch;
    let state = TrainState {
        epoch: cfg.epochs as u32,
        step: opt.t,
        best_epoch: best_epoch as u32,
        best_score,
        m: opt.m,
        v: opt.v,
    };
    Ok(TrainOutcome {
        best,
        last: model,
        state,
        history,
    })
}
