use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use super::model::Model;
use super::TrainConfig;
use crate::classifier_loss::multitask_loss_sum;
use crate::data::{Conversation, Dataset, TaxonomySpec};
use crate::error::{Error, Result};
use crate::numerics::checkpoint::{load_checkpoint, save_checkpoint};
use crate::numerics::{Adam, AdamConfig, ParamStore, Purpose, RngStream, Tape};

/// Fills the gradients of `store` with those of the batch objective
/// `mean_utterances(alpha L_C + (1 - alpha) L_F) + lambda ||theta||^2` and returns it.
pub fn loss_and_grad(
    model: &Model,
    store: &mut ParamStore,
    batch: &[&Conversation],
    mut drop: Option<&mut RngStream>,
) -> Result<f64> {
    store.zero_grads();
    let total: usize = batch.iter().map(|c| c.len()).sum();
    if total == 0 {
        return Err(Error::Dataset("batch has no utterances".into()));
    }
    let alpha = model.alpha();
    let seed = 1.0 / total as f64;
    let mut data_loss = 0.0;
    for conv in batch {
        let targets = model.targets(conv)?;
        let mut tape = Tape::with_mode(model.cfg.float_mode);
        let probs = model.forward(&mut tape, store, conv, drop.as_deref_mut())?;
        let loss = multitask_loss_sum(&mut tape, probs, &targets, &model.taxonomy, alpha)?;
        tape.backward_into(loss, seed, store)?;
        data_loss += tape.value(loss).item();
    }
    let penalty = store.apply_l2_penalty(model.cfg.lambda);
    Ok(data_loss * seed + penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<Metrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub log: Vec<EpochLog>,
}

pub fn train(model: &Model, train_set: &Dataset, eval_set: Option<&Dataset>) -> Result<TrainOutcome> {
    train_with(model, train_set, eval_set, |_| {})
}

/// Minibatches of conversations in a seeded per-epoch order, one Adam step per
/// batch. `on_epoch` sees each log entry as soon as it is complete.
pub fn train_with(
    model: &Model,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    model.check_dataset(train_set)?;
    if let Some(ev) = eval_set {
        model.check_dataset(ev)?;
    }
    if train_set.conversations.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let cfg = &model.cfg;
    let mut store = model.init_params()?;
    let mut adam = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut shuffle = RngStream::new(Purpose::Shuffle, cfg.seed);
    let mut drop = RngStream::new(Purpose::DropMessage, cfg.seed);
    let mut order: Vec<usize> = (0..train_set.conversations.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Conversation> = chunk.iter().map(|&i| &train_set.conversations[i]).collect();
            let loss = match loss_and_grad(model, &mut store, &batch, Some(&mut drop)) {
                // non-finite activations mean the parameters already blew up
                Err(Error::NumericInput(_)) => f64::NAN,
                other => other?,
            };
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            adam.step(&mut store)?;
            loss_sum += loss;
            n_batches += 1;
        }
        let eval = match eval_set {
            Some(ev) => Some(evaluate(model, &store, ev)?.metrics),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            eval,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params: store, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub y_true: Vec<usize>,
    pub y_pred: Vec<usize>,
}

/// Eval mode: no DropMessage, argmax predictions over every utterance.
pub fn evaluate(model: &Model, store: &ParamStore, ds: &Dataset) -> Result<Evaluation> {
    model.check_dataset(ds)?;
    let mut y_true = Vec::with_capacity(ds.n_utterances());
    let mut y_pred = Vec::with_capacity(ds.n_utterances());
    for conv in &ds.conversations {
        y_true.extend(model.targets(conv)?);
        y_pred.extend(model.predict_probs(store, conv)?.argmax_rows());
    }
    let metrics = compute_metrics(&y_true, &y_pred, model.taxonomy.fine_labels())?;
    Ok(Evaluation { metrics, y_true, y_pred })
}

/// Sidecar stored next to a checkpoint so that it can be evaluated on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub taxonomy: TaxonomySpec,
}

pub fn meta_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn save_model(model: &Model, store: &ParamStore, ckpt: impl AsRef<Path>) -> Result<()> {
    let ckpt = ckpt.as_ref();
    save_checkpoint(store, ckpt)?;
    let meta = CheckpointMeta {
        config: model.cfg.clone(),
        taxonomy: model.taxonomy.to_spec(),
    };
    std::fs::write(meta_path(ckpt), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn load_model(ckpt: impl AsRef<Path>) -> Result<(Model, ParamStore)> {
    let ckpt = ckpt.as_ref();
    let meta_file = meta_path(ckpt);
    let text = std::fs::read_to_string(&meta_file)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", meta_file.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let model = Model::new(meta.config, meta.taxonomy.resolve()?)?;
    let loaded = load_checkpoint(ckpt)?;
    let mut store = model.init_params()?;
    crate::numerics::checkpoint::restore_into(&mut store, &loaded)?;
    Ok((model, store))
}
