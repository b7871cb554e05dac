use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::eval::{confusion, predict_all};
use crate::models::Model;
use crate::nn::{Mode, Module};
use crate::tensor::Tensor;

use super::{
    adam_step, save_checkpoint, task_label_index, total_loss, AdamState, CheckpointMeta, EpochRecord, FeatureSet,
    Result, TrainConfig, TrainError, TrainingLog,
};

/// Where a resumed run picks up.
#[derive(Debug, Clone)]
pub struct ResumeState {
    pub epoch: usize,
    pub adam: AdamState,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    pub log: TrainingLog,
}

#[derive(Default)]
pub struct FitOptions<'a> {
    /// Receives `best.tns`, `last.tns`, their sidecars and `log.csv`.
    pub checkpoint_dir: Option<&'a Path>,
    pub resume: Option<ResumeState>,
    pub config_hash: String,
    /// Ends training after the first epoch whose record satisfies it.
    pub stop_when: Option<Box<dyn Fn(&EpochRecord) -> bool + 'a>>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub log: TrainingLog,
    pub adam: AdamState,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
}

fn accuracies(model: &Model, data: &FeatureSet) -> Result<[Option<f64>; 3]> {
    let mut out = [None; 3];
    if data.is_empty() {
        return Ok(out);
    }
    let preds = predict_all(model, data, 16).map_err(|e| match e {
        crate::eval::EvalError::Train(t) => t,
        crate::eval::EvalError::Model(m) => TrainError::Model(m),
        other => TrainError::InvalidConfig(other.to_string()),
    })?;
    let sched = model.schedule();
    for (k, p) in preds.iter().enumerate() {
        let Some(slot) = task_label_index(&sched.task_names[k]) else { continue };
        let labels = data.labels_for(&sched.task_names[k])?;
        let cm = confusion(p, &labels, sched.heads[k]).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        out[slot] = Some(cm.accuracy());
    }
    Ok(out)
}

/// Mini-batch Adam over `train`, reshuffled each epoch from the seed and
/// epoch number. The model selection metric is validation accent accuracy,
/// or training accent accuracy when the validation set is empty.
pub fn fit(model: &Model, train: &FeatureSet, val: &FeatureSet, cfg: &TrainConfig, opts: FitOptions) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let sched = model.schedule().clone();
    let weights = cfg.task_weights.for_heads(&sched.task_names)?;
    let params: Vec<(String, Tensor)> = {
        let mut v = Vec::new();
        model.visit_params("", &mut |n, t| v.push((n, t.clone())));
        v
    };
    let adam_cfg = cfg.adam();
    let (start, mut adam, mut best_metric, mut best_epoch, mut log) = match opts.resume {
        Some(r) => (r.epoch, r.adam, r.best_metric, r.best_epoch, r.log),
        None => (0, AdamState::new(&params), None, None, TrainingLog::default()),
    };
    if let Some(dir) = opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in start + 1..=cfg.epochs {
        order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            for (_, p) in &params {
                p.zero_grad();
            }
            let x = train.batch(idx)?;
            let labels = sched
                .task_names
                .iter()
                .map(|t| train.labels_at(t, idx))
                .collect::<Result<Vec<_>>>()?;
            let logits = model.forward(&x, Mode::Train)?;
            let loss = total_loss(&logits, &labels, &weights)?;
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b + 1 });
            }
            loss.backward()?;
            adam_step(&params, &mut adam, &adam_cfg)?;
            loss_sum += value * idx.len() as f64;
        }
        for (_, p) in &params {
            p.zero_grad();
        }

        let train_acc = accuracies(model, train)?;
        let val_acc = accuracies(model, val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc,
            val_acc,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4}, train acc {:?}, val acc {:?}",
            cfg.epochs,
            record.train_loss,
            record.train_acc,
            record.val_acc
        );
        let metric = if val.is_empty() { train_acc[0] } else { val_acc[0] };
        let improved = metric.is_some_and(|m| best_metric.is_none_or(|b| m > b));
        if improved {
            best_metric = metric;
            best_epoch = Some(epoch);
        }
        let stop = opts.stop_when.as_ref().is_some_and(|f| f(&record));
        log.push(record);

        if let Some(dir) = opts.checkpoint_dir {
            let meta = CheckpointMeta {
                schedule_id: sched.id.clone(),
                seed: cfg.seed,
                config_hash: opts.config_hash.clone(),
                epoch,
                adam_step: adam.t,
                best_metric,
                best_epoch,
                schedule: sched.clone(),
            };
            if improved {
                save_checkpoint(&dir.join("best.tns"), model, &adam, &meta)?;
            }
            save_checkpoint(&dir.join("last.tns"), model, &adam, &meta)?;
            log.write(&dir.join("log.csv"))?;
        }
        if stop {
            break;
        }
    }
    Ok(FitOutcome {
        log,
        adam,
        best_metric,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FeatureMap;
    use crate::models::{build, schedule_for};
    use crate::train::{restore_checkpoint, TaskWeights};

    fn dataset(n: usize) -> FeatureSet {
        let maps = (0..n)
            .map(|i| {
                let data = (0..2 * 64 * 516).map(|j| ((i * 31 + j) as f32 * 0.013).sin() * (1 + i % 6) as f32).collect();
                let fm = FeatureMap {
                    source: format!("clip{i}"),
                    channels: 2,
                    coeffs: 64,
                    frames: 516,
                    data,
                };
                (fm, [i % 6, i % 2, i % 5])
            })
            .collect();
        FeatureSet::from_maps([2, 64, 516], maps).unwrap()
    }

    fn cfg(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 3,
            learning_rate: lr,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let model: Model = build(&schedule_for("mpsa-tiny").unwrap(), 1).unwrap();
        let before: Vec<_> = model.state().into_iter().filter(|e| !e.name.contains("running")).collect();
        let data = dataset(6);
        let out = fit(&model, &data, &FeatureSet::new([2, 64, 516]), &cfg(2, 0.0), FitOptions::default()).unwrap();
        let after: Vec<_> = model.state().into_iter().filter(|e| !e.name.contains("running")).collect();
        assert_eq!(before, after);
        let l = &out.log.records;
        assert_eq!(l.len(), 2);
        assert!((l[0].train_loss - l[1].train_loss).abs() < 0.05 * l[0].train_loss);
        assert!(l[0].val_acc.iter().all(Option::is_none));
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let data = dataset(6);
        let val = dataset(3);
        let sched = schedule_for("mpsa-tiny").unwrap();
        let mut c = cfg(3, 1e-3);
        c.task_weights = TaskWeights::default();

        let straight: Model = build(&sched, 2).unwrap();
        let full = fit(&straight, &data, &val, &c, FitOptions::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let first: Model = build(&sched, 2).unwrap();
        let mut short = c.clone();
        short.epochs = 2;
        fit(&first, &data, &val, &short, FitOptions { checkpoint_dir: Some(dir.path()), ..Default::default() }).unwrap();

        let resumed: Model = build(&sched, 99).unwrap();
        let (adam, meta) = restore_checkpoint(&resumed, &dir.path().join("last.tns")).unwrap();
        assert_eq!(meta.epoch, 2);
        let resume = ResumeState {
            epoch: meta.epoch,
            adam,
            best_metric: meta.best_metric,
            best_epoch: meta.best_epoch,
            log: TrainingLog::read(&dir.path().join("log.csv")).unwrap(),
        };
        let rest = fit(&resumed, &data, &val, &c, FitOptions { resume: Some(resume), ..Default::default() }).unwrap();
        assert_eq!(rest.log, full.log);
        assert_eq!(resumed.state(), straight.state());
        assert!(dir.path().join("best.tns").exists() && dir.path().join("best.toml").exists());
    }
}
