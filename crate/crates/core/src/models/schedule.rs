use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::{DenseBlockSpec, DenseVariant, SpcConfig};
use crate::tensor::{conv2d_output_size, pool_output_size};

pub const MODEL_IDS: &[&str] = &["densenet121", "multi", "psa", "mpsa", "mpsa-tiny", "densenet-tiny"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    /// Width seen by the stem.
    pub width: usize,
    /// Feature-map width before the centered time crop.
    pub source_width: usize,
}

impl Default for InputSpec {
    fn default() -> Self {
        Self {
            channels: 2,
            height: 64,
            width: 512,
            source_width: 516,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// 3x3 stride-2 max pooling after the stem convolution.
    pub max_pool: bool,
}

impl StemSpec {
    pub fn standard(channels: usize) -> Self {
        Self {
            channels,
            kernel: 7,
            stride: 2,
            padding: 3,
            max_pool: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub block: DenseBlockSpec,
    pub transition: Option<usize>,
}

/// Expected channel count and spatial size at a named point of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Checkpoint {
    pub fn new(stage: impl Into<String>, channels: usize, height: usize, width: usize) -> Self {
        Self {
            stage: stage.into(),
            channels,
            height,
            width,
        }
    }
}

impl fmt::Display for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<14} {:>5} channels  {}x{}", self.stage, self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSchedule {
    pub id: String,
    pub input: InputSpec,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub final_norm: bool,
    pub heads: Vec<usize>,
    pub task_names: Vec<String>,
    pub expected: Vec<Checkpoint>,
}

pub const TASKS: [&str; 3] = ["accent", "gender", "age"];

fn single_task(classes: usize) -> (Vec<usize>, Vec<String>) {
    (vec![classes], vec!["accent".to_string()])
}

fn multi_task() -> (Vec<usize>, Vec<String>) {
    (vec![6, 2, 5], TASKS.iter().map(|s| s.to_string()).collect())
}

/// Canonical DenseNet-121 trunk: growth 32, bottleneck 128, halving
/// transitions.
fn densenet_trunk(variant: DenseVariant) -> Vec<StageSpec> {
    let mut channels = 64;
    let repeats = [6, 12, 24, 16];
    repeats
        .iter()
        .enumerate()
        .map(|(i, &layers)| {
            let block = DenseBlockSpec::new(layers, 32, variant.clone());
            channels = block.out_channels(channels);
            let transition = (i + 1 < repeats.len()).then(|| {
                channels /= 2;
                channels
            });
            StageSpec { block, transition }
        })
        .collect()
}

impl ArchSchedule {
    pub fn for_id(id: &str) -> Result<Self, ModelError> {
        let input = InputSpec::default();
        let schedule = match id {
            "densenet121" => {
                let (heads, task_names) = single_task(6);
                let mut s = Self::derived(id, input, StemSpec::standard(64), densenet_trunk(DenseVariant::Plain), heads, task_names);
                s.expected = s.propagate()?;
                s
            }
            "multi" => {
                let (heads, task_names) = multi_task();
                let mut s = Self::derived(id, input, StemSpec::standard(64), densenet_trunk(DenseVariant::Plain), heads, task_names);
                s.expected = s.propagate()?;
                s
            }
            "psa" => {
                let (heads, task_names) = single_task(6);
                let trunk = densenet_trunk(DenseVariant::Psa(SpcConfig::default()));
                let mut s = Self::derived(id, input, StemSpec::standard(64), trunk, heads, task_names);
                s.expected = s.propagate()?;
                s
            }
            "mpsa" => Self::mpsa(),
            "mpsa-tiny" => Self::tiny(id, DenseVariant::Psa(SpcConfig {
                kernel_sizes: vec![3, 5, 7, 9],
                group_sizes: vec![1, 2, 4, 8],
                se_reduction: 4,
            })),
            "densenet-tiny" => Self::tiny(id, DenseVariant::Plain),
            other => {
                return Err(ModelError::UnknownModel {
                    id: other.to_string(),
                    valid: MODEL_IDS.join(", "),
                })
            }
        };
        Ok(schedule)
    }

    fn derived(
        id: &str,
        input: InputSpec,
        stem: StemSpec,
        stages: Vec<StageSpec>,
        heads: Vec<usize>,
        task_names: Vec<String>,
    ) -> Self {
        Self {
            id: id.to_string(),
            input,
            stem,
            stages,
            final_norm: true,
            heads,
            task_names,
            expected: Vec::new(),
        }
    }

    /// The literal MPSA table: growth 64 in blocks 1-3 and 24 in block 4,
    /// transitions to 208, 488 and 1012 channels, three task heads.
    fn mpsa() -> Self {
        let psa = DenseVariant::Psa(SpcConfig::default());
        let block = |layers, growth| DenseBlockSpec::new(layers, growth, psa.clone()).with_bottleneck(256);
        let stages = vec![
            StageSpec { block: block(6, 64), transition: Some(208) },
            StageSpec { block: block(12, 64), transition: Some(488) },
            StageSpec { block: block(24, 64), transition: Some(1012) },
            StageSpec { block: block(16, 24), transition: None },
        ];
        let (heads, task_names) = multi_task();
        let mut s = Self::derived("mpsa", InputSpec::default(), StemSpec::standard(64), stages, heads, task_names);
        s.expected = vec![
            Checkpoint::new("stem", 64, 32, 256),
            Checkpoint::new("block1", 448, 16, 128),
            Checkpoint::new("transition1", 208, 8, 64),
            Checkpoint::new("block2", 976, 8, 64),
            Checkpoint::new("transition2", 488, 4, 32),
            Checkpoint::new("block3", 2024, 4, 32),
            Checkpoint::new("transition3", 1012, 2, 16),
            Checkpoint::new("block4", 1396, 2, 16),
            Checkpoint::new("global_pool", 1396, 1, 1),
        ];
        s
    }

    /// Width- and depth-reduced variant for fast experiments: stem 16,
    /// growth 8, two layers per block, halving transitions.
    fn tiny(id: &str, variant: DenseVariant) -> Self {
        let mut channels = 16;
        let stages = (0..4)
            .map(|i| {
                let block = DenseBlockSpec::new(2, 8, variant.clone());
                channels = block.out_channels(channels);
                let transition = (i < 3).then(|| {
                    channels /= 2;
                    channels
                });
                StageSpec { block, transition }
            })
            .collect();
        let (heads, task_names) = multi_task();
        let mut s = Self::derived(id, InputSpec::default(), StemSpec::standard(16), stages, heads, task_names);
        s.expected = s.propagate().expect("tiny schedule is consistent");
        s
    }

    /// Replaces the classifier heads, e.g. `[1000]` for an ImageNet-sized head.
    pub fn with_heads(mut self, heads: Vec<usize>, task_names: Vec<String>) -> Self {
        self.heads = heads;
        self.task_names = task_names;
        self
    }

    /// Shapes at each checkpoint computed from the layer arithmetic alone.
    pub fn propagate(&self) -> Result<Vec<Checkpoint>, ModelError> {
        let bad = |stage: &str, msg: String| ModelError::Geometry {
            stage: stage.to_string(),
            msg,
        };
        let st = &self.stem;
        let (mut h, mut w) = match (
            conv2d_output_size(self.input.height, st.kernel, st.stride, st.padding),
            conv2d_output_size(self.input.width, st.kernel, st.stride, st.padding),
        ) {
            (Some(h), Some(w)) => (h, w),
            _ => return Err(bad("stem", "kernel larger than input".into())),
        };
        let mut c = st.channels;
        let mut out = vec![Checkpoint::new("stem", c, h, w)];
        if st.max_pool {
            match (pool_output_size(h, 3, 2, 1), pool_output_size(w, 3, 2, 1)) {
                (Some(ph), Some(pw)) => (h, w) = (ph, pw),
                _ => return Err(bad("stem", "max pool window larger than map".into())),
            }
        }
        for (i, stage) in self.stages.iter().enumerate() {
            c = stage.block.out_channels(c);
            out.push(Checkpoint::new(format!("block{}", i + 1), c, h, w));
            if let Some(t) = stage.transition {
                match (pool_output_size(h, 2, 2, 0), pool_output_size(w, 2, 2, 0)) {
                    (Some(ph), Some(pw)) => (h, w) = (ph, pw),
                    _ => return Err(bad(&format!("transition{}", i + 1), format!("{h}x{w} map too small to pool"))),
                }
                c = t;
                out.push(Checkpoint::new(format!("transition{}", i + 1), c, h, w));
            }
        }
        out.push(Checkpoint::new("global_pool", c, 1, 1));
        Ok(out)
    }

    /// Compares propagated shapes with the expected checkpoints.
    pub fn validate(&self) -> Result<Vec<Checkpoint>, ModelError> {
        if self.heads.is_empty() || self.heads.len() != self.task_names.len() || self.heads.contains(&0) {
            return Err(ModelError::Geometry {
                stage: "heads".into(),
                msg: format!("{} heads for tasks {:?}", self.heads.len(), self.task_names),
            });
        }
        let got = self.propagate()?;
        if got.len() != self.expected.len() {
            return Err(ModelError::Geometry {
                stage: "schedule".into(),
                msg: format!("{} checkpoints computed, {} expected", got.len(), self.expected.len()),
            });
        }
        for (g, e) in got.iter().zip(&self.expected) {
            if g.stage != e.stage {
                return Err(ModelError::Geometry {
                    stage: e.stage.clone(),
                    msg: format!("computed checkpoint is named {}", g.stage),
                });
            }
            let mismatch = |quantity: &'static str, expected: String, actual: String| ModelError::CheckpointMismatch {
                stage: e.stage.clone(),
                quantity,
                expected,
                actual,
            };
            if g.channels != e.channels {
                return Err(mismatch("channels", e.channels.to_string(), g.channels.to_string()));
            }
            if (g.height, g.width) != (e.height, e.width) {
                return Err(mismatch(
                    "output size",
                    format!("{}x{}", e.height, e.width),
                    format!("{}x{}", g.height, g.width),
                ));
            }
        }
        Ok(got)
    }

    pub fn final_channels(&self) -> usize {
        self.stages.iter().fold(self.stem.channels, |c, s| {
            let c = s.block.out_channels(c);
            s.transition.unwrap_or(c)
        })
    }
}

pub fn schedule_for(id: &str) -> Result<ArchSchedule, ModelError> {
    ArchSchedule::for_id(id)
}
