//! Adam, the training loop with best-epoch selection, evaluation and the
//! multi- vs single-input comparison report.

mod adam;
mod config;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Split, SplitData};
use crate::error::{Error, Result};
use crate::nn::{CheckpointMeta, Checkpoint, Model};
use crate::tensor::{BnMode, Prng, Scalar, Tape};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{ConfigFile, Precision, Profile, TrainConfig};
pub use metrics::{
    compare_report, compute_metrics, predict_class, ComparisonPair, ComparisonReport, ComparisonRow, ConfusionMatrix,
    EvalReport, Metrics,
};

/// Images per forward pass during evaluation.
const EVAL_BATCH: usize = 64;
/// PRNG stream tag for the per-epoch shuffles (weights use the root seed).
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    /// 1-based.
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
}

/// 1-based index of the highest accuracy; the earliest epoch wins ties.
pub fn best_epoch(val_accuracies: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &a) in val_accuracies.iter().enumerate() {
        if best.map_or(true, |b| a > val_accuracies[b]) {
            best = Some(i);
        }
    }
    best.map(|i| i + 1)
}

/// Splits a shuffled order into batches of `batch_size`; a trailing batch of
/// one sample is merged into the batch before it.
pub fn make_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Eval-mode confusion matrix over a preloaded split.
pub fn evaluate_data<T: Scalar>(model: &Model<T>, data: &SplitData<T>) -> Result<ConfusionMatrix> {
    if data.is_empty() {
        return Err(Error::data("cannot evaluate an empty split"));
    }
    let mut cm = ConfusionMatrix::default();
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let batch = data.batch(chunk)?;
        let sil = if model.is_multi_input() { batch.sil.as_ref() } else { None };
        let logits = model.predict_logits(&batch.rgb, sil)?;
        for (row, &truth) in logits.data().chunks_exact(2).zip(&batch.labels) {
            cm.record(truth, predict_class(row));
        }
    }
    Ok(cm)
}

pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<(ConfusionMatrix, Metrics)> {
    let data = SplitData::load(manifest, split, model.spec().image_size, model.is_multi_input())?;
    if data.is_empty() {
        return Err(Error::data(format!("{} split is empty", split.name())));
    }
    let cm = evaluate_data(model, &data)?;
    Ok((cm, compute_metrics(&cm)?))
}

fn accuracy(cm: &ConfusionMatrix) -> f64 {
    (cm.0[0][0] + cm.0[1][1]) as f64 / cm.total() as f64
}

/// Loads the train and val splits and runs [`train_on`].
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    manifest: &DatasetManifest,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let size = model.spec().image_size;
    let multi = model.is_multi_input();
    let train = SplitData::load(manifest, Split::Train, size, multi)?;
    let val = SplitData::load(manifest, Split::Val, size, multi)?;
    train_on(model, &train, &val, config, on_epoch)
}

/// Mini-batch Adam on categorical cross-entropy. After every epoch the
/// validation accuracy is measured in eval mode; the returned checkpoint is
/// the one from the best epoch, and `model` is left holding those weights.
pub fn train_on<T: Scalar>(
    model: &mut Model<T>,
    train: &SplitData<T>,
    val: &SplitData<T>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::data(format!(
            "training needs >= 2 train and >= 1 val samples, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    if config.batch_size > train.len() {
        return Err(Error::invalid(format!(
            "batch_size {} exceeds the {} training samples",
            config.batch_size,
            train.len()
        )));
    }
    if *model.spec() != config.model_spec() {
        return Err(Error::invalid("model does not match the training config"));
    }
    let adam = AdamConfig { lr: config.lr, beta1: config.beta1, beta2: config.beta2, eps: config.adam_eps };
    let mut state = AdamState::<T>::new(model.params().iter().map(|t| t.len()));
    let mut shuffler = Prng::new(config.seed).derive(SHUFFLE_STREAM);
    let config_json = serde_json::to_value(config)?;
    let config_hash = config.hash();
    let mut logs: Vec<EpochLog> = Vec::new();
    let mut best: Option<(usize, Checkpoint)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffler.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for idx in make_batches(&order, config.batch_size) {
            let batch = train.batch(&idx)?;
            let mut tape = Tape::new();
            let sil = if model.is_multi_input() { batch.sil.as_ref() } else { None };
            let (logits, params) = model.forward(&mut tape, &batch.rgb, sil, BnMode::Train)?;
            let (loss, probs) = tape.softmax_cross_entropy(logits, &batch.labels)?;
            let loss_value = tape.value(loss).data()[0].as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NumericFailure(format!("epoch {epoch}: training loss is not finite")));
            }
            loss_sum += loss_value * idx.len() as f64;
            correct += probs
                .data()
                .chunks_exact(2)
                .zip(&batch.labels)
                .filter(|(p, &y)| predict_class(p) == y)
                .count();
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Vec<T>> = params.iter().map(|&v| grads.take(v).into_data()).collect();
            let grad_refs: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
            let mut param_refs: Vec<&mut [T]> = model.store_mut().params.iter_mut().map(|(_, t)| t.data_mut()).collect();
            adam_step(&mut param_refs, &grad_refs, &mut state, &adam).map_err(|e| match e {
                Error::NumericFailure(m) => Error::NumericFailure(format!("epoch {epoch}: {m}")),
                other => other,
            })?;
        }
        let val_acc = accuracy(&evaluate_data(model, val)?);
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy: val_acc,
        };
        on_epoch(&log);
        if best.as_ref().map_or(true, |(_, b)| val_acc > b.meta.val_accuracy) {
            let meta = CheckpointMeta {
                epoch,
                val_accuracy: val_acc,
                config_hash: config_hash.clone(),
                model: config.model_spec(),
                config: config_json.clone(),
            };
            best = Some((epoch, model.to_checkpoint(meta)));
        }
        logs.push(log);
    }
    let (best_epoch, best) = best.expect("at least one epoch ran");
    model.load_tensors(&best)?;
    Ok(TrainOutcome { best, best_epoch, logs })
}
