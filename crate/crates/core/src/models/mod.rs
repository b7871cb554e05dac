//! DenseNet-family classifiers built from declarative schedules.

mod schedule;

use std::cell::RefCell;
use std::fmt::Write as _;

use rand::SeedableRng;

use crate::nn::{join, BatchNorm2d, Conv2d, DenseBlock, Linear, Mode, Module, Rng64, Transition};
use crate::tensor::{
    global_avg_pool2d, narrow, pool2d, Conv2dOptions, Element, NamedArray, PoolKind, Tensor, TensorError,
};

pub use schedule::{
    schedule_for, ArchSchedule, Checkpoint, InputSpec, StageSpec, StemSpec, MODEL_IDS, TASKS,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown model `{id}`; valid ids: {valid}")]
    UnknownModel { id: String, valid: String },
    #[error("{stage}: {quantity} expected {expected}, computed {actual}")]
    CheckpointMismatch {
        stage: String,
        quantity: &'static str,
        expected: String,
        actual: String,
    },
    #[error("{stage}: {msg}")]
    Geometry { stage: String, msg: String },
    #[error("input shape {got:?} does not match (N, {channels}, {height}, {width} or {source_width})")]
    InputShape {
        got: Vec<usize>,
        channels: usize,
        height: usize,
        width: usize,
        source_width: usize,
    },
    #[error("state entry `{name}`: {msg}")]
    State { name: String, msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

struct Stage<T: Element> {
    block: DenseBlock<T>,
    transition: Option<Transition<T>>,
}

pub struct Model<T: Element = f32> {
    schedule: ArchSchedule,
    stem_conv: Conv2d<T>,
    stem_norm: BatchNorm2d<T>,
    stages: Vec<Stage<T>>,
    final_norm: Option<BatchNorm2d<T>>,
    heads: Vec<Linear<T>>,
}

/// Instantiates a schedule after checking every expected checkpoint.
pub fn build<T: Element>(schedule: &ArchSchedule, seed: u64) -> Result<Model<T>> {
    schedule.validate()?;
    let mut rng = Rng64::seed_from_u64(seed);
    let st = &schedule.stem;
    let stem_conv = Conv2d::new(
        schedule.input.channels,
        st.channels,
        st.kernel,
        Conv2dOptions {
            stride: st.stride,
            padding: st.padding,
            groups: 1,
        },
        &mut rng,
    )?;
    let mut c = st.channels;
    let mut stages = Vec::with_capacity(schedule.stages.len());
    for spec in &schedule.stages {
        let block = DenseBlock::new(c, &spec.block, &mut rng)?;
        c = spec.block.out_channels(c);
        let transition = match spec.transition {
            Some(out) => {
                let t = Transition::new(c, out, &mut rng)?;
                c = out;
                Some(t)
            }
            None => None,
        };
        stages.push(Stage { block, transition });
    }
    let heads = schedule.heads.iter().map(|&k| Linear::new(c, k, &mut rng)).collect();
    Ok(Model {
        schedule: schedule.clone(),
        stem_conv,
        stem_norm: BatchNorm2d::new(st.channels),
        stages,
        final_norm: schedule.final_norm.then(|| BatchNorm2d::new(c)),
        heads,
    })
}

impl<T: Element> Model<T> {
    pub fn schedule(&self) -> &ArchSchedule {
        &self.schedule
    }

    pub fn id(&self) -> &str {
        &self.schedule.id
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Centers the time axis on the stem's input width when given the
    /// uncropped feature map.
    pub fn crop_input(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let inp = &self.schedule.input;
        let s = x.shape();
        let shape_err = || ModelError::InputShape {
            got: s.to_vec(),
            channels: inp.channels,
            height: inp.height,
            width: inp.width,
            source_width: inp.source_width,
        };
        if s.len() != 4 || s[0] == 0 || s[1] != inp.channels || s[2] != inp.height {
            return Err(shape_err());
        }
        if s[3] == inp.width {
            Ok(x.clone())
        } else if s[3] == inp.source_width && inp.source_width > inp.width {
            Ok(narrow(x, 3, (inp.source_width - inp.width) / 2, inp.width)?)
        } else {
            Err(shape_err())
        }
    }

    /// Pooled trunk features, `(N, C_final)`.
    pub fn features(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let x = self.crop_input(x)?;
        let n = x.shape()[0];
        let mut h = self.stem_norm.forward(&self.stem_conv.forward(&x)?, mode)?.relu();
        if self.schedule.stem.max_pool {
            h = pool2d(&h, PoolKind::Max, 3, 2, 1)?;
        }
        for stage in &self.stages {
            h = stage.block.forward(&h, mode)?;
            if let Some(t) = &stage.transition {
                h = t.forward(&h, mode)?;
            }
        }
        if let Some(norm) = &self.final_norm {
            h = norm.forward(&h, mode)?.relu();
        }
        let c = h.shape()[1];
        Ok(global_avg_pool2d(&h)?.reshape(&[n, c])?)
    }

    /// One logits tensor `(N, classes_k)` per head from a single trunk pass.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        let f = self.features(x, mode)?;
        Ok(self.heads.iter().map(|h| h.forward(&f)).collect::<Result<_, _>>()?)
    }

    /// Runtime shapes at each checkpoint for an input batch.
    pub fn trace_shapes(&self, x: &Tensor<T>) -> Result<Vec<Checkpoint>> {
        let x = self.crop_input(x)?;
        let ck = |stage: String, t: &Tensor<T>| {
            let s = t.shape();
            Checkpoint::new(stage, s[1], s[2], s[3])
        };
        let mode = Mode::Eval;
        let mut h = self.stem_norm.forward(&self.stem_conv.forward(&x)?, mode)?.relu();
        let mut out = vec![ck("stem".into(), &h)];
        if self.schedule.stem.max_pool {
            h = pool2d(&h, PoolKind::Max, 3, 2, 1)?;
        }
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.block.forward(&h, mode)?;
            out.push(ck(format!("block{}", i + 1), &h));
            if let Some(t) = &stage.transition {
                h = t.forward(&h, mode)?;
                out.push(ck(format!("transition{}", i + 1), &h));
            }
        }
        out.push(ck("global_pool".into(), &global_avg_pool2d(&h)?));
        Ok(out)
    }

    pub fn head_parameters(&self, head: usize) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.heads[head].visit_params(&self.head_prefix(head), &mut |n, t| out.push((n, t.clone())));
        out
    }

    fn head_prefix(&self, head: usize) -> String {
        format!("head_{}", self.schedule.task_names[head])
    }

    /// Parameters followed by batch-norm running statistics, as named arrays.
    pub fn state(&self) -> Vec<NamedArray> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, t| {
            out.push(NamedArray::new(name, t.shape().to_vec(), to_f32(&t.data())));
        });
        self.visit_buffers("", &mut |name, b| {
            let b = b.borrow();
            out.push(NamedArray::new(name, vec![b.len()], to_f32(&b)));
        });
        out
    }

    /// Restores every parameter and buffer; names and shapes must match
    /// exactly.
    pub fn load_state(&self, entries: &[NamedArray]) -> Result<()> {
        let mut by_name: std::collections::HashMap<&str, &NamedArray> =
            entries.iter().map(|e| (e.name.as_str(), e)).collect();
        let mut err = None;
        self.visit_params("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match by_name.remove(name.as_str()) {
                Some(e) if e.shape == t.shape() => {
                    *t.data_mut() = e.data.iter().map(|&v| T::of(v as f64)).collect();
                }
                Some(e) => {
                    err = Some(ModelError::State {
                        msg: format!("shape {:?} does not match {:?}", e.shape, t.shape()),
                        name,
                    })
                }
                None => err = Some(ModelError::State { name, msg: "missing".into() }),
            }
        });
        self.visit_buffers("", &mut |name, b| {
            if err.is_some() {
                return;
            }
            let mut b = b.borrow_mut();
            match by_name.remove(name.as_str()) {
                Some(e) if e.data.len() == b.len() => {
                    *b = e.data.iter().map(|&v| T::of(v as f64)).collect();
                }
                Some(_) => err = Some(ModelError::State { name, msg: "length mismatch".into() }),
                None => err = Some(ModelError::State { name, msg: "missing".into() }),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(ModelError::State {
                name: extra.to_string(),
                msg: "not part of this model".into(),
            });
        }
        Ok(())
    }
}

fn to_f32<T: Element>(v: &[T]) -> Vec<f32> {
    v.iter().map(|x| x.as_f64() as f32).collect()
}

impl<T: Element> Module<T> for Model<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.stem_conv.visit_params(&join(prefix, "stem.conv"), f);
        self.stem_norm.visit_params(&join(prefix, "stem.norm"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.block.visit_params(&join(prefix, &format!("block{}", i + 1)), f);
            if let Some(t) = &s.transition {
                t.visit_params(&join(prefix, &format!("transition{}", i + 1)), f);
            }
        }
        if let Some(n) = &self.final_norm {
            n.visit_params(&join(prefix, "final_norm"), f);
        }
        for (k, h) in self.heads.iter().enumerate() {
            h.visit_params(&join(prefix, &self.head_prefix(k)), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &RefCell<Vec<T>>)) {
        self.stem_norm.visit_buffers(&join(prefix, "stem.norm"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.block.visit_buffers(&join(prefix, &format!("block{}", i + 1)), f);
            if let Some(t) = &s.transition {
                t.visit_buffers(&join(prefix, &format!("transition{}", i + 1)), f);
            }
        }
        if let Some(n) = &self.final_norm {
            n.visit_buffers(&join(prefix, "final_norm"), f);
        }
    }
}

pub fn count_parameters<T: Element>(model: &Model<T>) -> usize {
    model.num_parameters()
}

/// Per-stage table: layer description, output size, channels, parameters.
pub fn report_architecture<T: Element>(model: &Model<T>) -> String {
    let s = &model.schedule;
    let shapes = s.propagate().unwrap_or_default();
    let mut stage_params: Vec<(String, usize)> = Vec::new();
    model.visit_params("", &mut |name, t| {
        let stage = name.split('.').next().unwrap_or("").to_string();
        match stage_params.last_mut() {
            Some((last, n)) if *last == stage => *n += t.numel(),
            _ => stage_params.push((stage, t.numel())),
        }
    });
    let params_of = |stage: &str| stage_params.iter().find(|(s, _)| s == stage).map(|p| p.1).unwrap_or(0);

    let mut out = String::new();
    let _ = writeln!(out, "model {}  input {}x{}x{}", s.id, s.input.channels, s.input.height, s.input.width);
    let _ = writeln!(out, "{:<14} {:<40} {:>11} {:>9} {:>12}", "stage", "layers", "output size", "channels", "params");
    let mut row = |stage: &str, layers: String, ck: Option<&Checkpoint>, params: usize| {
        let (size, ch) = ck
            .map(|c| (format!("{}x{}", c.height, c.width), c.channels.to_string()))
            .unwrap_or_default();
        let _ = writeln!(out, "{stage:<14} {layers:<40} {size:>11} {ch:>9} {params:>12}");
    };
    let find = |name: &str| shapes.iter().find(|c| c.stage == name);
    let st = &s.stem;
    let pool = if st.max_pool { ", 3x3 max pool s2" } else { "" };
    row(
        "stem",
        format!("{0}x{0} conv s{1}, {2} ch{pool}", st.kernel, st.stride, st.channels),
        find("stem"),
        params_of("stem"),
    );
    for (i, stage) in s.stages.iter().enumerate() {
        let b = &stage.block;
        let kind = match &b.variant {
            crate::nn::DenseVariant::Plain => "3x3 conv".to_string(),
            crate::nn::DenseVariant::Psa(cfg) => format!("PSA s={}", cfg.splits()),
        };
        let name = format!("block{}", i + 1);
        row(
            &name,
            format!("[1x1 conv {}; {kind}] x {}, growth {}", b.bottleneck, b.layers, b.growth),
            find(&name),
            params_of(&name),
        );
        if stage.transition.is_some() {
            let name = format!("transition{}", i + 1);
            row(&name, "1x1 conv; 2x2 avg pool".into(), find(&name), params_of(&name));
        }
    }
    let head_desc = s.heads.iter().map(|k| format!("{k}d")).collect::<Vec<_>>().join("/");
    let head_params: usize = stage_params
        .iter()
        .filter(|(n, _)| n.starts_with("head_") || n == "final_norm")
        .map(|p| p.1)
        .sum();
    row(
        "classifier",
        format!("global avg pool; {head_desc} fc, softmax"),
        find("global_pool"),
        head_params,
    );
    let n = model.num_parameters();
    let _ = writeln!(out, "total parameters: {n} ({:.2}M)", n as f64 / 1e6);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model<f32> {
        build(&schedule_for("mpsa-tiny").unwrap(), 7).unwrap()
    }

    fn batch(n: usize, width: usize, seed: u32) -> Tensor<f32> {
        let len = n * 2 * 64 * width;
        let data = (0..len)
            .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f32 / 500.0 - 1.0)
            .collect();
        Tensor::from_vec(data, &[n, 2, 64, width]).unwrap()
    }

    #[test]
    fn densenet121_imagenet_head_has_7_98m_parameters() {
        let s = schedule_for("densenet121").unwrap().with_heads(vec![1000], vec!["imagenet".into()]);
        let m: Model<f32> = build(&s, 0).unwrap();
        let n = count_parameters(&m) as f64;
        assert!((n / 7.98e6 - 1.0).abs() < 0.01, "{n}");
    }

    #[test]
    fn tiny_forward_shapes_and_crop() {
        let m = tiny();
        let logits = m.forward(&batch(3, 516, 1), Mode::Eval).unwrap();
        let shapes: Vec<&[usize]> = logits.iter().map(|l| l.shape()).collect();
        assert_eq!(shapes, [&[3, 6][..], &[3, 2], &[3, 5]]);
        let cropped = narrow(&batch(3, 516, 1), 3, 2, 512).unwrap();
        let direct = m.forward(&cropped, Mode::Eval).unwrap();
        assert_eq!(logits[0].to_vec(), direct[0].to_vec());
        assert!(matches!(m.forward(&batch(1, 500, 1), Mode::Eval), Err(ModelError::InputShape { .. })));
    }

    #[test]
    fn runtime_shapes_match_schedule() {
        let m = tiny();
        assert_eq!(m.trace_shapes(&batch(1, 512, 2)).unwrap(), m.schedule().expected);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = tiny().state();
        let b = tiny().state();
        assert_eq!(a, b);
        let c = build::<f32>(&schedule_for("mpsa-tiny").unwrap(), 8).unwrap().state();
        assert_ne!(a, c);
    }

    #[test]
    fn eval_forward_is_pure_and_batch_independent() {
        let m = tiny();
        let x = batch(2, 512, 3);
        let a = m.forward(&x, Mode::Eval).unwrap()[0].to_vec();
        assert_eq!(a, m.forward(&x, Mode::Eval).unwrap()[0].to_vec());
        let halves = crate::tensor::split(&x, 2, 0).unwrap();
        let swapped = crate::tensor::concat(&[halves[1].clone(), halves[0].clone()], 0).unwrap();
        let b = m.forward(&swapped, Mode::Eval).unwrap()[0].to_vec();
        assert_eq!(&a[..6], &b[6..]);
        assert_eq!(&a[6..], &b[..6]);
    }

    #[test]
    fn heads_share_the_trunk() {
        let m = tiny();
        let x = batch(1, 512, 4);
        let before: Vec<Vec<f32>> = m.forward(&x, Mode::Eval).unwrap().iter().map(|t| t.to_vec()).collect();
        let (_, head) = &m.head_parameters(1)[0];
        head.data_mut()[0] += 1.0;
        let after: Vec<Vec<f32>> = m.forward(&x, Mode::Eval).unwrap().iter().map(|t| t.to_vec()).collect();
        assert_eq!(before[0], after[0]);
        assert_ne!(before[1], after[1]);
        assert_eq!(before[2], after[2]);
        let trunk = &m.parameters()[0].1;
        trunk.data_mut()[0] += 0.5;
        let moved: Vec<Vec<f32>> = m.forward(&x, Mode::Eval).unwrap().iter().map(|t| t.to_vec()).collect();
        for k in 0..3 {
            assert_ne!(moved[k], after[k]);
        }
    }

    #[test]
    fn state_round_trip_and_mismatch() {
        let a = tiny();
        let b = build::<f32>(&schedule_for("mpsa-tiny").unwrap(), 99).unwrap();
        b.load_state(&a.state()).unwrap();
        assert_eq!(a.state(), b.state());
        let other = build::<f32>(&schedule_for("densenet-tiny").unwrap(), 0).unwrap();
        assert!(matches!(other.load_state(&a.state()), Err(ModelError::State { .. })));
    }

    #[test]
    fn report_lists_table_sizes() {
        let m = tiny();
        let r = report_architecture(&m);
        assert!(r.contains("32x256") && r.contains("1x1"));
        assert!(r.contains(&format!("total parameters: {}", count_parameters(&m))));
    }
}
