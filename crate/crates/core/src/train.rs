//! Mini-batch training with dev-accuracy early stopping, and evaluation.

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{Confusion, Metrics};
use crate::model::{Mode, Model};
use crate::rng::{self, Site};
use crate::scalar::Scalar;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, recorded in training mode.
    pub train_loss: f64,
    /// Training-set accuracy with dropout off, after the epoch's updates.
    pub train_accuracy: f64,
    pub dev: Metrics,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best dev-accuracy epoch.
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
}

fn check_dataset(config: &Config, data: &Dataset, what: &str) -> Result<()> {
    let limits = config.limits();
    for s in &data.samples {
        s.validate(&limits)?;
    }
    if data.is_empty() {
        return Err(Error::Config(format!("{what} set is empty")));
    }
    Ok(())
}

pub fn train<S: Scalar>(
    config: &Config,
    train_set: &Dataset,
    dev_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(config, train_set, "training")?;
    check_dataset(config, dev_set, "dev")?;
    if train_set.header != dev_set.header {
        return Err(Error::Config(
            "training and dev sets have different embedding widths".into(),
        ));
    }
    let mut model = Model::<S>::new(config.clone(), train_set.header)?;
    let mut adam = AdamState::new(config.adam(), model.store());
    let mut best: Option<Checkpoint> = None;
    let mut stale = 0;
    let mut logs = Vec::new();

    for epoch in 1..=config.max_epochs {
        let key = rng::derive(config.seed, Site::Shuffle, &[epoch as u64]);
        let mut loss_sum = 0.0;
        for batch in batch_indices(train_set.len(), config.batch_size, Some(key))? {
            model.store_mut().zero_grad();
            let scale = S::lit(1.0 / batch.len() as f64);
            let step = adam.steps_taken();
            for (slot, &i) in batch.iter().enumerate() {
                let mode = Mode::Train {
                    step,
                    slot: slot as u64,
                };
                loss_sum += model.accumulate_gradients(&train_set.samples[i], mode, scale)?.as_f64();
            }
            adam.step(model.store_mut())?;
        }
        let train_accuracy = evaluate_model(&model, train_set)?.accuracy;
        let dev = evaluate_model(&model, dev_set)?;
        match &best {
            Some(b) if dev.accuracy <= b.best_dev_accuracy => stale += 1,
            _ => {
                best = Some(Checkpoint::from_model(&model, epoch, dev.accuracy));
                stale = 0;
            }
        }
        let b = best.as_ref().expect("set on the first epoch");
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy,
            dev,
            best_epoch: b.epoch,
            best_dev_accuracy: b.best_dev_accuracy,
            steps: adam.steps_taken(),
        };
        on_epoch(&log);
        logs.push(log);
        if stale >= config.early_stop_patience {
            break;
        }
    }

    let checkpoint = match best {
        Some(b) => b,
        None => Checkpoint::from_model(&model, 0, 0.0),
    };
    Ok(TrainOutcome { checkpoint, logs })
}

/// Dropout-off metrics of `model` on `data`.
pub fn evaluate_model<S: Scalar>(model: &Model<S>, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let mut confusion = Confusion::default();
    for s in &data.samples {
        confusion.record(model.predict(s)?.predicted_label(), s.label);
    }
    Ok(Metrics::from(confusion))
}

pub fn evaluate(checkpoint: &Checkpoint, data: &Dataset) -> Result<Metrics> {
    let model: Model<f64> = checkpoint.to_model()?;
    if model.dims() != data.header {
        return Err(Error::Config("dataset widths differ from the checkpoint's".into()));
    }
    evaluate_model(&model, data)
}

/// Holds out `round(fraction · len)` samples (at least one when `len ≥ 2`) chosen by a keyed shuffle.
pub fn split_dev(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("dev fraction {fraction} outside (0,1)")));
    }
    let n = data.len();
    let held = ((n as f64 * fraction).round() as usize).clamp(usize::from(n >= 2), n.saturating_sub(1));
    let order = batch_indices(n, n.max(1), Some(rng::derive(seed, Site::Split, &[])))?.concat();
    let mut dev_mask = vec![false; n];
    for &i in &order[..held] {
        dev_mask[i] = true;
    }
    let pick = |want: bool| Dataset {
        header: data.header,
        samples: data
            .samples
            .iter()
            .zip(&dev_mask)
            .filter(|(_, &m)| m == want)
            .map(|(s, _)| s.clone())
            .collect(),
    };
    Ok((pick(false), pick(true)))
}
