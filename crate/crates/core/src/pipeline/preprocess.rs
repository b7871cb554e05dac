use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{
    add_gaussian_noise, load_manifest, load_wav, split_dataset, standardize, write_manifest, write_wav, DatasetSplit,
    SampleRecord, WavFormat, TARGET_DURATION_S, TARGET_SAMPLE_RATE,
};

use super::{PipelineError, Result, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOptions {
    pub augment: usize,
    pub noise_sigma_lsb: f64,
    pub seed: u64,
    pub keep_going: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreprocessSummary {
    pub processed: usize,
    pub augmented: usize,
    pub failures: Vec<(PathBuf, String)>,
    /// Train, validation, test sizes before augmentation.
    pub split_sizes: (usize, usize, usize),
}

impl PreprocessSummary {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} processed, {} augmented, {} failed (split {}/{}/{})",
            self.processed,
            self.augmented,
            self.failures.len(),
            self.split_sizes.0,
            self.split_sizes.1,
            self.split_sizes.2
        );
        for (p, m) in &self.failures {
            s.push_str(&format!("\n  failed: {}: {m}", p.display()));
        }
        s
    }
}

fn noise_seed(seed: u64, stem: &str, k: usize) -> u64 {
    let d = Sha256::digest(format!("{seed}:{stem}:{k}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

struct Outcome {
    written: Vec<SampleRecord>,
    augmented: Vec<SampleRecord>,
}

fn process_one(rec: &SampleRecord, out_dir: &Path, augment: usize, opts: &PreprocessOptions) -> Result<Outcome> {
    let stem = rec.audio_path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let clip = standardize(&load_wav(&rec.audio_path)?, TARGET_SAMPLE_RATE, TARGET_DURATION_S)?;
    let path = out_dir.join(format!("{stem}.wav"));
    write_wav(&path, &clip, WavFormat::Float32)?;
    let mut written = rec.clone();
    written.audio_path = path;
    let mut augmented = Vec::with_capacity(augment);
    for k in 1..=augment {
        let noisy = add_gaussian_noise(&clip, opts.noise_sigma_lsb, noise_seed(opts.seed, &stem, k))?;
        let path = out_dir.join(format!("{stem}_aug{k}.wav"));
        write_wav(&path, &noisy, WavFormat::Float32)?;
        let mut r = rec.clone();
        r.audio_path = path;
        augmented.push(r);
    }
    log::info!("ok {}", rec.audio_path.display());
    Ok(Outcome {
        written: vec![written],
        augmented,
    })
}

/// Standardizes every clip of a manifest into `out_dir`, splits 6:2:2 and
/// adds `_aug<k>` noisy copies of training clips. Writes `train.csv`,
/// `validation.csv`, `test.csv` and `all.csv` next to the audio.
pub fn preprocess(manifest: &Path, out_dir: &Path, opts: &PreprocessOptions) -> Result<PreprocessSummary> {
    if !(opts.noise_sigma_lsb >= 0.0) {
        return Err(PipelineError::usage(format!("noise sigma {} is negative", opts.noise_sigma_lsb)));
    }
    let records = load_manifest(manifest)?;
    let mut stems = HashSet::new();
    for r in &records {
        let stem = r.audio_path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if !stems.insert(stem.clone()) {
            return Err(PipelineError::data(format!("two manifest rows share the file name {stem:?}")));
        }
    }
    std::fs::create_dir_all(out_dir)?;

    let split = if records.len() >= 3 {
        split_dataset(&records, opts.seed)?
    } else {
        if !records.is_empty() {
            log::warn!("{} records are too few to split; all go to training", records.len());
        }
        DatasetSplit {
            train: records.clone(),
            validation: Vec::new(),
            test: Vec::new(),
            seed: opts.seed,
        }
    };
    let train_paths: HashSet<&PathBuf> = split.train.iter().map(|r| &r.audio_path).collect();

    let results: Vec<(PathBuf, Result<Outcome>)> = records
        .par_iter()
        .map(|r| {
            let augment = if train_paths.contains(&r.audio_path) { opts.augment } else { 0 };
            (r.audio_path.clone(), process_one(r, out_dir, augment, opts))
        })
        .collect();

    let mut summary = PreprocessSummary::default();
    let mut done = std::collections::HashMap::new();
    for (path, res) in results {
        match res {
            Ok(o) => {
                summary.processed += 1;
                summary.augmented += o.augmented.len();
                done.insert(path, o);
            }
            Err(e) => {
                log::error!("failed {}: {e}", path.display());
                summary.failures.push((path, e.msg));
            }
        }
    }
    if !summary.failures.is_empty() && !opts.keep_going {
        return Err(PipelineError::data(summary.to_text()));
    }

    let pick = |subset: &[SampleRecord], with_aug: bool| -> Vec<SampleRecord> {
        let mut out = Vec::new();
        for r in subset {
            if let Some(o) = done.get(&r.audio_path) {
                out.extend(o.written.iter().cloned());
                if with_aug {
                    out.extend(o.augmented.iter().cloned());
                }
            }
        }
        out
    };
    let train = pick(&split.train, true);
    let validation = pick(&split.validation, false);
    let test = pick(&split.test, false);
    let all = pick(&records, false);
    summary.split_sizes = (
        train.len() - summary.augmented,
        validation.len(),
        test.len(),
    );
    for (s, recs) in [(Split::Train, train), (Split::Validation, validation), (Split::Test, test), (Split::All, all)] {
        write_manifest(&out_dir.join(s.manifest_name()), &recs)?;
    }
    Ok(summary)
}
