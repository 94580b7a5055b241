//! Mini-batch training, early stopping, and evaluation.
//!
//! Training is bitwise deterministic for a fixed dataset, model config and
//! [`TrainConfig`]: the only randomness is the per-epoch shuffle, drawn
//! from a generator seeded with `seed`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::effective_head_count;
use crate::autodiff::{concat_rows, Gradients, Tape};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::metrics::{confusion, report, ClassificationReport};
use crate::model::{argmax, forward_var, TwinModelConfig};
use crate::params::ParameterSet;
use crate::tensor::{sigmoid, Tensor};

/// Gate value at or above which a head counts as active in the history.
pub const ACTIVE_GATE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeights {
    #[default]
    None,
    /// `w_c = N / (K · n_c)` over the `K` classes present in the training set.
    Balanced,
}

impl std::str::FromStr for ClassWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ClassWeights::None),
            "balanced" => Ok(ClassWeights::Balanced),
            other => Err(Error::config(format!("unknown class weighting `{other}`"))),
        }
    }
}

/// Training hyperparameters. Unknown keys are rejected when read from JSON;
/// missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Epochs without a validation improvement before stopping; 0 never stops.
    pub early_stop_patience: usize,
    /// Where to write the best parameters whenever they improve.
    pub checkpoint_path: Option<PathBuf>,
    pub class_weights: ClassWeights,
    /// Share of training windows kept for fitting when a validation split is
    /// carved out of them.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            optimizer: Optimizer::default(),
            seed: 0,
            early_stop_patience: 10,
            checkpoint_path: None,
            class_weights: ClassWeights::None,
            val_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return bad(format!(
                    "adam needs beta1, beta2 in [0, 1) and eps > 0, got {beta1}, {beta2}, {eps}"
                ));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} is outside (0, 1)", self.val_fraction));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("train config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
    /// Heads with gate ≥ [`ACTIVE_GATE_THRESHOLD`], per attention layer.
    pub effective_heads: BTreeMap<String, usize>,
    /// Gate values per attention layer.
    pub gates: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub stopped_early: bool,
}

fn check_dataset(ds: &WindowedDataset, config: &TwinModelConfig, what: &str) -> Result<()> {
    ds.validate()?;
    if ds.n_classes() != config.n_classes {
        return Err(Error::contract(format!(
            "{what} set has {} classes but the model predicts {}",
            ds.n_classes(),
            config.n_classes
        )));
    }
    if let Some(shape) = ds.window_shape() {
        if shape != [config.window_len, config.n_features] {
            return Err(Error::contract(format!(
                "{what} windows are {shape:?}, the model expects [{}, {}]",
                config.window_len, config.n_features
            )));
        }
    }
    Ok(())
}

fn class_weights(kind: ClassWeights, ds: &WindowedDataset, n_classes: usize) -> Option<Vec<f64>> {
    match kind {
        ClassWeights::None => None,
        ClassWeights::Balanced => {
            let counts = ds.class_counts();
            let k = counts.len() as f64;
            let n = ds.len() as f64;
            Some(
                (0..n_classes)
                    .map(|c| counts.get(&c).map_or(0.0, |&nc| n / (k * nc as f64)))
                    .collect(),
            )
        }
    }
}

/// Logits of every window in `ds`, one row each.
pub fn predict_logits(params: &ParameterSet, config: &TwinModelConfig, ds: &WindowedDataset) -> Result<Vec<Vec<f64>>> {
    ds.windows
        .iter()
        .map(|w| {
            // a fresh tape per window keeps memory flat
            let tape = Tape::no_grad();
            let bound = tape.bind(params);
            Ok(forward_var(w, &bound, config)?.value().data().to_vec())
        })
        .collect()
}

/// Predictions and the report computed from them.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: ClassificationReport,
    pub predictions: Vec<usize>,
    /// Mean cross-entropy of the true labels.
    pub loss: f64,
}

/// Predicts every window of `ds` and scores the predictions.
pub fn evaluate(params: &ParameterSet, config: &TwinModelConfig, ds: &WindowedDataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::contract("cannot evaluate an empty dataset"));
    }
    check_dataset(ds, config, "evaluation")?;
    let logits = predict_logits(params, config, ds)?;
    let predictions: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    let loss = Tensor::from_rows(&logits)?.cross_entropy(&ds.labels)?;
    let report = report(&confusion(&predictions, &ds.labels, config.n_classes)?)?;
    Ok(Evaluation {
        report,
        predictions,
        loss,
    })
}

struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    step: i32,
}

fn apply_update(params: &mut ParameterSet, grads: &Gradients, cfg: &TrainConfig, adam: &mut AdamState) -> Result<()> {
    let lr = cfg.learning_rate;
    if let Optimizer::Adam { .. } = cfg.optimizer {
        adam.step += 1;
    }
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("no gradient for `{name}`")))?
            .data();
        let data = p.data_mut();
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, gi) in data.iter_mut().zip(g) {
                    *w -= lr * gi;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let m = adam.m.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
                let v = adam.v.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
                let c1 = 1.0 - beta1.powi(adam.step);
                let c2 = 1.0 - beta2.powi(adam.step);
                for i in 0..g.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

type GateSnapshot = (BTreeMap<String, usize>, BTreeMap<String, Vec<f64>>);

fn gate_snapshot(params: &ParameterSet, config: &TwinModelConfig) -> Result<GateSnapshot> {
    let mut counts = BTreeMap::new();
    let mut gates = BTreeMap::new();
    for prefix in config.attention_prefixes() {
        let logits = params.get(&format!("{prefix}.gate_logits"))?;
        counts.insert(prefix.clone(), effective_head_count(logits, ACTIVE_GATE_THRESHOLD)?);
        gates.insert(prefix, logits.data().iter().map(|&z| sigmoid(z)).collect());
    }
    Ok((counts, gates))
}

/// Full-batch-or-mini-batch gradient of the (weighted) mean cross-entropy
/// over `indices` of `ds`. Returns `(loss, gradients)`.
pub fn batch_gradient(
    params: &ParameterSet,
    config: &TwinModelConfig,
    ds: &WindowedDataset,
    indices: &[usize],
    weights: Option<&[f64]>,
) -> Result<(f64, Gradients)> {
    let tape = Tape::new();
    let bound = tape.bind(params);
    let logits = indices
        .iter()
        .map(|&i| forward_var(&ds.windows[i], &bound, config))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = indices.iter().map(|&i| ds.labels[i]).collect();
    let loss = concat_rows(&logits)?.weighted_cross_entropy(&labels, weights)?;
    let grads = tape.backward(loss, &bound)?;
    Ok((loss.value().data()[0], grads))
}

fn diverged(epoch: usize, batch: usize, reason: String, params: &ParameterSet) -> Error {
    Error::Diverged {
        epoch,
        batch,
        reason,
        norms: params.norm_dump(),
    }
}

/// Trains from `initial` and returns the parameters of the epoch with the
/// best validation macro F1 (the earliest one on ties) with the history.
pub fn train(
    initial: &ParameterSet,
    config: &TwinModelConfig,
    train_ds: &WindowedDataset,
    val_ds: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<(ParameterSet, TrainHistory)> {
    cfg.validate()?;
    config.check_params(initial)?;
    check_dataset(train_ds, config, "training")?;
    check_dataset(val_ds, config, "validation")?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::contract("training and validation sets must be non-empty"));
    }
    let weights = class_weights(cfg.class_weights, train_ds, config.n_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = initial.clone();
    let mut adam = AdamState {
        m: BTreeMap::new(),
        v: BTreeMap::new(),
        step: 0,
    };
    let mut history = TrainHistory {
        best_val_macro_f1: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = params.clone();
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = match batch_gradient(&params, config, train_ds, idx, weights.as_deref()) {
                Ok(r) => r,
                Err(Error::NonFinite { op }) => {
                    return Err(diverged(epoch, batch, format!("non-finite value in {op}"), &params));
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(epoch, batch, format!("loss is {loss}"), &params));
            }
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                return Err(diverged(
                    epoch,
                    batch,
                    format!("gradient of `{name}` is not finite"),
                    &params,
                ));
            }
            loss_sum += loss * idx.len() as f64;
            apply_update(&mut params, &grads, cfg, &mut adam)?;
            if let Some((name, _)) = params.iter().find(|(_, p)| !p.is_finite()) {
                return Err(diverged(
                    epoch,
                    batch,
                    format!("parameter `{name}` is not finite"),
                    &params,
                ));
            }
        }

        let val = evaluate(&params, config, val_ds)?;
        let (effective_heads, gates) = gate_snapshot(&params, config)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_ds.len() as f64,
            val_loss: val.loss,
            val_macro_f1: val.report.macro_avg.f1,
            effective_heads,
            gates,
        });
        if val.report.macro_avg.f1 > history.best_val_macro_f1 {
            history.best_val_macro_f1 = val.report.macro_avg.f1;
            history.best_epoch = epoch;
            best = params.clone();
            since_best = 0;
            if let Some(path) = &cfg.checkpoint_path {
                best.save(path)?;
            }
        } else {
            since_best += 1;
        }
        if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
            history.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    Ok((best, history))
}
