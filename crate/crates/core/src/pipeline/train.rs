//! Training loop, evaluation and the per-epoch history.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{predicted_label, MetricsReport};
use crate::dualgraph::DualGraph;
use crate::error::{Error, Result};
use crate::gnn::{batch_loss, loss_ce, Adam, GnnConfig, GraphBatch, LrSchedule, Mode, Model};
use crate::io::sha256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gnn: GnnConfig,
    pub epochs: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    /// Graphs per optimizer step.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { gnn: GnnConfig::default(), epochs: 40, seed: 0, schedule: LrSchedule::default(), batch_size: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_f1: f64,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation F1 (ties go to the
    /// lower validation loss, then the earlier epoch); the initial model
    /// when no epoch ran.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

fn labels_of(graphs: &[DualGraph]) -> Result<Vec<usize>> {
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| g.label.map(usize::from).ok_or_else(|| Error::InvalidArgument(format!("graph {i} has no label"))))
        .collect()
}

/// Inference-mode logits of every graph, in order.
pub fn predict_all(model: &Model, graphs: &[DualGraph]) -> Result<Vec<[f64; 2]>> {
    graphs.par_iter().map(|g| model.predict(g)).collect()
}

/// Metrics of `model` on labelled `graphs`.
pub fn evaluate(model: &Model, graphs: &[DualGraph]) -> Result<MetricsReport> {
    let labels = labels_of(graphs)?;
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let logits = predict_all(model, graphs)?;
    Ok(MetricsReport::from_pairs(logits.iter().zip(&labels).map(|(z, &y)| (predicted_label(*z), y as u8))))
}

fn mean_loss(model: &Model, graphs: &[DualGraph], labels: &[usize]) -> Result<f64> {
    let logits = predict_all(model, graphs)?;
    Ok(logits.iter().zip(labels).map(|(z, &y)| loss_ce(*z, y)).sum::<f64>() / graphs.len() as f64)
}

/// Trains on `train` and selects the checkpoint on `val`. The result
/// depends only on the config and the set of training graphs, not on their
/// order.
pub fn train(train: &[DualGraph], val: &[DualGraph], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() && cfg.epochs > 0 {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut model = Model::new(cfg.gnn.clone(), cfg.seed)?;
    let input_dim = cfg.gnn.input_dim;

    let mut keyed: Vec<([u8; 32], &DualGraph)> =
        train.iter().map(|g| g.serialize().map(|b| (sha256(&b), g))).collect::<Result<_>>()?;
    keyed.sort_by_key(|k| k.0);
    let canonical: Vec<&DualGraph> = keyed.into_iter().map(|(_, g)| g).collect();
    let train_labels: Vec<usize> = canonical
        .iter()
        .map(|g| g.label.map(usize::from).ok_or_else(|| Error::InvalidArgument("unlabelled training graph".into())))
        .collect::<Result<_>>()?;
    let batches: Vec<GraphBatch> =
        canonical.iter().map(|g| GraphBatch::from_graph(g, input_dim)).collect::<Result<_>>()?;
    let val_labels = labels_of(val)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_5eed);
    let mut adam = Adam::new(model.param_count());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Model)> = None;
    let mut order: Vec<usize> = (0..batches.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let merged;
            let batch = if chunk.len() == 1 {
                &batches[chunk[0]]
            } else {
                let graphs: Vec<&DualGraph> = chunk.iter().map(|&i| canonical[i]).collect();
                merged = GraphBatch::from_graphs(&graphs, input_dim)?;
                &merged
            };
            let labels: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let fwd = model.forward(batch, Mode::Train { seed: rng.gen() })?;
            let (loss, dlogits) = batch_loss(&fwd.logits, &labels);
            let grads = model.backward(batch, &fwd, &dlogits)?;
            adam.step(model.params_mut(), &grads.params, lr)?;
            model.update_running_stats(&fwd);
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / batches.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
        }
        let (val_acc, val_f1, val_loss) = if val.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            let m = evaluate(&model, val)?;
            (m.accuracy, m.f1, mean_loss(&model, val, &val_labels)?)
        };
        log::info!("epoch {epoch}: lr {lr:.2e} train_loss {train_loss:.5} val_acc {val_acc:.4} val_f1 {val_f1:.4}");
        history.push(EpochRecord { epoch, lr, train_loss, val_acc, val_f1 });
        let better = match &best {
            None => true,
            Some((f1, loss, _, _)) => val_f1 > *f1 || (val_f1 == *f1 && val_loss < *loss),
        };
        if better {
            best = Some((val_f1, val_loss, epoch, model.clone()));
        }
    }
    Ok(match best {
        Some((_, _, epoch, m)) => TrainOutcome { model: m, history, best_epoch: Some(epoch) },
        None => TrainOutcome { model, history, best_epoch: None },
    })
}

/// History as CSV: `epoch,lr,train_loss,val_acc,val_f1`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_acc,val_f1\n");
    for r in history {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.lr, r.train_loss, r.val_acc, r.val_f1));
    }
    out
}
