//! Confusion matrices, precision/recall, F-beta (per class, micro, macro)
//! and model evaluation over a feature set.

use std::fmt::Write as _;

use serde::Serialize;

use crate::models::Model;
use crate::nn::Mode;
use crate::tensor::no_grad;
use crate::train::FeatureSet;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("class id {id} out of range for {classes} classes")]
    ClassOutOfRange { id: usize, classes: usize },
    #[error("beta must be non-negative, got {0}")]
    NegativeBeta(f64),
    #[error("precision and recall must lie in [0, 1], got {0} and {1}")]
    OutOfUnitRange(f64, f64),
    #[error("confusion matrix is empty")]
    Empty,
    #[error("cannot merge {0}-class and {1}-class matrices")]
    ClassCountMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Self {
        let classes = rows.len();
        assert!(rows.iter().all(|r| r.len() == classes), "confusion matrix must be square");
        Self {
            classes,
            counts: rows.concat(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, label: usize, pred: usize) -> Result<()> {
        for id in [label, pred] {
            if id >= self.classes {
                return Err(EvalError::ClassOutOfRange { id, classes: self.classes });
            }
        }
        self.counts[label * self.classes + pred] += 1;
        Ok(())
    }

    pub fn get(&self, label: usize, pred: usize) -> u64 {
        self.counts[label * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, label: usize) -> u64 {
        (0..self.classes).map(|p| self.get(label, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, pred)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(EvalError::ClassCountMismatch(self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.classes).map(|c| self.get(c, c)).sum::<u64>() as f64 / total as f64
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &l) in preds.iter().zip(labels) {
        cm.add(l, p)?;
    }
    Ok(cm)
}

/// Row-normalized rates; rows without samples stay zero.
pub fn normalize(cm: &ConfusionMatrix) -> Vec<Vec<f64>> {
    (0..cm.classes)
        .map(|t| {
            let sum = cm.row_sum(t);
            (0..cm.classes)
                .map(|p| if sum == 0 { 0.0 } else { cm.get(t, p) as f64 / sum as f64 })
                .collect()
        })
        .collect()
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(1 + b^2) P R / (b^2 P + R)`, zero when the denominator vanishes.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(EvalError::NegativeBeta(beta));
    }
    if !(0.0..=1.0).contains(&precision) || !(0.0..=1.0).contains(&recall) {
        return Err(EvalError::OutOfUnitRange(precision, recall));
    }
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + b2) * precision * recall / den)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
}

pub fn per_class(cm: &ConfusionMatrix, beta: f64) -> Result<Vec<ClassMetrics>> {
    (0..cm.classes)
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            Ok(ClassMetrics {
                class: c,
                support: cm.row_sum(c),
                precision,
                recall,
                f_beta: f_beta(precision, recall, beta)?,
            })
        })
        .collect()
}

/// Micro F-beta from pooled counts and the unweighted mean of per-class
/// F-beta.
pub fn micro_macro_f(cm: &ConfusionMatrix, beta: f64) -> Result<(f64, f64)> {
    if cm.total() == 0 || cm.classes == 0 {
        return Err(EvalError::Empty);
    }
    let tp: u64 = (0..cm.classes).map(|c| cm.get(c, c)).sum();
    let fp: u64 = (0..cm.classes).map(|c| cm.col_sum(c) - cm.get(c, c)).sum();
    let fn_: u64 = (0..cm.classes).map(|c| cm.row_sum(c) - cm.get(c, c)).sum();
    let micro = f_beta(ratio(tp, tp + fp), ratio(tp, tp + fn_), beta)?;
    let classes = per_class(cm, beta)?;
    let macro_ = classes.iter().map(|m| m.f_beta).sum::<f64>() / cm.classes as f64;
    Ok((micro, macro_))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub task: String,
    pub beta: f64,
    pub samples: u64,
    pub accuracy: f64,
    pub micro_f_beta: f64,
    pub macro_f_beta: f64,
    pub per_class: Vec<ClassMetrics>,
    #[serde(skip)]
    pub confusion: ConfusionMatrix,
}

impl MetricReport {
    pub fn from_confusion(task: &str, cm: ConfusionMatrix, beta: f64) -> Result<Self> {
        let (micro, macro_) = micro_macro_f(&cm, beta)?;
        Ok(Self {
            task: task.to_string(),
            beta,
            samples: cm.total(),
            accuracy: cm.accuracy(),
            micro_f_beta: micro,
            macro_f_beta: macro_,
            per_class: per_class(&cm, beta)?,
            confusion: cm,
        })
    }

    /// Structured text document (TOML).
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report fields serialize")
    }

    /// Normalized confusion matrix with a header of predicted ids and the
    /// true id leading each row.
    pub fn confusion_csv(&self) -> String {
        let norm = normalize(&self.confusion);
        let mut out = String::from("true\\pred");
        for p in 0..self.confusion.classes() {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
        for (t, row) in norm.iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Per-head predictions over a feature set, evaluated in eval mode.
pub fn predict_all(model: &Model, data: &FeatureSet, batch_size: usize) -> Result<Vec<Vec<usize>>> {
    let heads = model.num_heads();
    let mut preds = vec![Vec::with_capacity(data.len()); heads];
    no_grad(|| -> Result<()> {
        for chunk in (0..data.len()).collect::<Vec<_>>().chunks(batch_size.max(1)) {
            let x = data.batch(chunk)?;
            let logits = model.forward(&x, Mode::Eval)?;
            for (k, l) in logits.iter().enumerate() {
                let classes = l.shape()[1];
                preds[k].extend(l.data().chunks(classes).map(argmax));
            }
        }
        Ok(())
    })?;
    Ok(preds)
}

/// One report per model head.
pub fn evaluate(model: &Model, data: &FeatureSet, beta: f64) -> Result<Vec<MetricReport>> {
    if data.is_empty() {
        return Err(EvalError::Empty);
    }
    let preds = predict_all(model, data, 16)?;
    let schedule = model.schedule();
    preds
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let task = &schedule.task_names[k];
            let labels = data.labels_for(task)?;
            let cm = confusion(p, &labels, schedule.heads[k])?;
            MetricReport::from_confusion(task, cm, beta)
        })
        .collect()
}
