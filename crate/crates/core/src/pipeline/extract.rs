use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{load_manifest, load_wav};
use crate::dsp::{mfcc, read_feature_cache, write_feature_cache, DspConfig};
use crate::train::FeatureSet;

use super::{PipelineError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractSummary {
    pub total: usize,
    pub computed: usize,
    pub skipped: usize,
    pub failures: Vec<(PathBuf, String)>,
}

impl ExtractSummary {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} records: {} computed, {} cached, {} failed",
            self.total,
            self.computed,
            self.skipped,
            self.failures.len()
        );
        for (p, m) in &self.failures {
            s.push_str(&format!("\n  failed: {}: {m}", p.display()));
        }
        s
    }
}

/// Cache file named by the SHA-256 of the WAV bytes and the DSP settings.
pub fn cache_path_for(wav: &Path, dsp: &DspConfig, cache_dir: &Path) -> Result<PathBuf> {
    let bytes = std::fs::read(wav).map_err(|e| PipelineError::data(format!("{}: {e}", wav.display())))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    h.update(toml::to_string(dsp).expect("dsp config serializes").as_bytes());
    Ok(cache_dir.join(format!("{}.mfc", hex::encode(h.finalize()))))
}

enum Status {
    Computed,
    Cached,
}

fn extract_one(wav: &Path, dsp: &DspConfig, cache_dir: &Path) -> Result<Status> {
    let path = cache_path_for(wav, dsp, cache_dir)?;
    if path.exists() {
        return Ok(Status::Cached);
    }
    let clip = load_wav(wav)?;
    let mut fm = mfcc(&clip, dsp)?;
    fm.source = wav.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    write_feature_cache(&fm, &path)?;
    Ok(Status::Computed)
}

/// MFCC features for every manifest record; existing cache files are kept.
pub fn extract(manifest: &Path, cache_dir: &Path, dsp: &DspConfig, keep_going: bool) -> Result<ExtractSummary> {
    dsp.validate()?;
    let records = load_manifest(manifest)?;
    std::fs::create_dir_all(cache_dir)?;
    let results: Vec<(PathBuf, Result<Status>)> = records
        .par_iter()
        .map(|r| (r.audio_path.clone(), extract_one(&r.audio_path, dsp, cache_dir)))
        .collect();
    let mut summary = ExtractSummary {
        total: records.len(),
        ..Default::default()
    };
    for (path, res) in results {
        match res {
            Ok(Status::Computed) => summary.computed += 1,
            Ok(Status::Cached) => summary.skipped += 1,
            Err(e) => {
                log::error!("failed {}: {e}", path.display());
                summary.failures.push((path, e.msg));
            }
        }
    }
    if !summary.failures.is_empty() && !keep_going {
        return Err(PipelineError::data(summary.to_text()));
    }
    Ok(summary)
}

/// Reads cached features for every record of a manifest. A missing
/// manifest yields an empty set; missing cache entries are reported
/// together.
pub fn load_feature_set(manifest: &Path, cache_dir: &Path, dsp: &DspConfig) -> Result<FeatureSet> {
    if !manifest.exists() {
        return Ok(FeatureSet::new([2, dsp.n_mfcc, 0]));
    }
    let records = load_manifest(manifest)?;
    let mut missing = Vec::new();
    let mut maps = Vec::with_capacity(records.len());
    for r in &records {
        let path = match cache_path_for(&r.audio_path, dsp, cache_dir) {
            Ok(p) if p.exists() => p,
            _ => {
                missing.push(r.audio_path.display().to_string());
                continue;
            }
        };
        maps.push((read_feature_cache(&path)?, r.task_labels()));
    }
    if !missing.is_empty() {
        return Err(PipelineError::data(format!(
            "no cached features for {} record(s) of {} (run extract first): {}",
            missing.len(),
            manifest.display(),
            missing.join(", ")
        )));
    }
    let shape = maps.first().map_or([2, dsp.n_mfcc, 0], |(fm, _)| fm.shape());
    Ok(FeatureSet::from_maps(shape, maps)?)
}
