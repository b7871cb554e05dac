use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::{load_wav, standardize, Accent, AgeGroup, Gender, TARGET_DURATION_S, TARGET_SAMPLE_RATE};
use crate::dsp::mfcc;
use crate::eval::{evaluate, MetricReport};
use crate::models::{build, report_architecture, schedule_for, Model};
use crate::nn::Mode;
use crate::tensor::{no_grad, softmax, Tensor};
use crate::train::{fit, load_checkpoint, restore_checkpoint, FitOptions, ResumeState, TrainingLog};

use super::{load_feature_set, PipelineError, Result, RunConfig, Split};

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub config_hash: String,
    pub log: TrainingLog,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
}

fn next_run_dir(root: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    for i in 1.. {
        let dir = root.join(format!("run-{i:04}"));
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("run directory numbering is unbounded")
}

/// Trains on `<data_dir>/train.csv`, selecting checkpoints on
/// `<data_dir>/validation.csv`, into a fresh run directory. A resumed run
/// continues from a checkpoint's epoch and optimizer state.
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let cache = cfg.cache_root();
    let train_manifest = cfg.data_dir.join(Split::Train.manifest_name());
    if !train_manifest.exists() {
        return Err(PipelineError::data(format!(
            "training manifest {} not found (run preprocess first)",
            train_manifest.display()
        )));
    }
    let train_set = load_feature_set(&train_manifest, &cache, &cfg.dsp)?;
    let val_set = load_feature_set(&cfg.data_dir.join(Split::Validation.manifest_name()), &cache, &cfg.dsp)?;
    let schedule = schedule_for(&cfg.model)?;
    let model: Model = build(&schedule, cfg.seed)?;
    let hash = cfg.hash();

    let resume = match resume {
        Some(path) => {
            let (adam, meta) = restore_checkpoint(&model, path)?;
            let log_path = path.with_file_name("log.csv");
            let mut log = if log_path.exists() { TrainingLog::read(&log_path)? } else { TrainingLog::default() };
            log.records.retain(|r| r.epoch <= meta.epoch);
            Some(ResumeState {
                epoch: meta.epoch,
                adam,
                best_metric: meta.best_metric,
                best_epoch: meta.best_epoch,
                log,
            })
        }
        None => None,
    };

    let run_dir = next_run_dir(&cfg.runs_dir)?;
    std::fs::write(run_dir.join("config.toml"), format!("# config hash {hash}\n{}", cfg.to_toml()))?;
    log::info!("run {} (config hash {hash})", run_dir.display());
    let out = fit(
        &model,
        &train_set,
        &val_set,
        &cfg.train_config(),
        FitOptions {
            checkpoint_dir: Some(&run_dir),
            resume,
            config_hash: hash.clone(),
            stop_when: None,
        },
    )?;
    Ok(TrainSummary {
        run_dir,
        config_hash: hash,
        log: out.log,
        best_epoch: out.best_epoch,
        best_metric: out.best_metric,
    })
}

/// Evaluates a checkpoint on one split and writes `<split>_<task>.toml` and
/// `<split>_<task>_confusion.csv` into the reports directory.
pub fn evaluate_checkpoint(checkpoint: &Path, split: Split, cfg: &RunConfig) -> Result<Vec<MetricReport>> {
    let (model, _, _) = load_checkpoint(checkpoint)?;
    let manifest = cfg.data_dir.join(split.manifest_name());
    if !manifest.exists() {
        return Err(PipelineError::data(format!("manifest {} not found", manifest.display())));
    }
    let data = load_feature_set(&manifest, &cfg.cache_root(), &cfg.dsp)?;
    let reports = evaluate(&model, &data, cfg.beta)?;
    std::fs::create_dir_all(&cfg.reports_dir)?;
    for r in &reports {
        std::fs::write(cfg.reports_dir.join(format!("{split}_{}.toml", r.task)), r.to_text())?;
        std::fs::write(cfg.reports_dir.join(format!("{split}_{}_confusion.csv", r.task)), r.confusion_csv())?;
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadPrediction {
    pub task: String,
    pub class: usize,
    pub label: String,
    pub probabilities: Vec<f32>,
}

fn label_name(task: &str, class: usize) -> String {
    let name = match task {
        "accent" => Accent::from_id(class).map(|a| a.name()),
        "gender" => Gender::from_id(class).map(|g| g.name()),
        "age" => AgeGroup::from_id(class).map(|a| a.name()),
        _ => None,
    };
    name.map_or_else(|| class.to_string(), str::to_string)
}

/// Standardizes one WAV file, extracts features and reports every head's
/// most likely class with its softmax distribution.
pub fn predict(checkpoint: &Path, wav: &Path, cfg: &RunConfig) -> Result<Vec<HeadPrediction>> {
    let (model, _, _) = load_checkpoint(checkpoint)?;
    let clip = standardize(&load_wav(wav)?, TARGET_SAMPLE_RATE, TARGET_DURATION_S)?;
    let fm = mfcc(&clip, &cfg.dsp)?;
    let [c, h, w] = fm.shape();
    let x = Tensor::from_vec(fm.data, &[1, c, h, w]).map_err(|e| PipelineError::internal(e.to_string()))?;
    let logits = no_grad(|| model.forward(&x, Mode::Eval))?;
    let sched = model.schedule();
    logits
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let p = softmax(l, 1).map_err(|e| PipelineError::internal(e.to_string()))?.to_vec();
            let class = crate::eval::argmax(&p);
            let task = sched.task_names[k].clone();
            Ok(HeadPrediction {
                label: label_name(&task, class),
                task,
                class,
                probabilities: p,
            })
        })
        .collect()
}

pub fn format_predictions(preds: &[HeadPrediction]) -> String {
    let mut out = String::new();
    for p in preds {
        let _ = writeln!(out, "{}: {} (class {}, p = {:.4})", p.task, p.label, p.class, p.probabilities[p.class]);
        for (c, v) in p.probabilities.iter().enumerate() {
            let _ = writeln!(out, "  {:>2} {:<14} {v:.6}", c, label_name(&p.task, c));
        }
    }
    out
}

/// Architecture table for a model id; `classes` swaps in a single head of
/// that width.
pub fn inspect(model_id: &str, classes: Option<usize>) -> Result<String> {
    let mut schedule = schedule_for(model_id)?;
    if let Some(c) = classes {
        if c == 0 {
            return Err(PipelineError::usage("--classes must be at least 1"));
        }
        schedule = schedule.with_heads(vec![c], vec!["classes".into()]);
    }
    let model: Model = build(&schedule, 0)?;
    Ok(report_architecture(&model))
}
