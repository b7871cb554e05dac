//! Layers with named parameters: linear, convolution, batch norm, squeeze
//! excitation, pyramid split attention, dense blocks and transitions.

mod attention;
mod dense;

use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{
    batch_norm2d, conv2d, invalid, matmul, Conv2dOptions, Element, Result, RunningStats, Tensor,
};

pub use crate::tensor::BatchNormMode as Mode;
pub use attention::{PsaModule, SeWeight, SpcConfig, SpcModule};
pub use dense::{DenseBlock, DenseBlockSpec, DenseLayer, DenseVariant, Transition};

pub type Rng64 = ChaCha8Rng;

/// Anything owning trainable tensors (and optionally non-trainable buffers)
/// under dotted names.
pub trait Module<T: Element> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));

    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(String, &RefCell<Vec<T>>)) {}

    fn parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.numel());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn he_normal<T: Element>(shape: &[usize], fan_in: usize, rng: &mut Rng64) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive fan-in");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(normal.sample(rng))).collect();
    Tensor::parameter(data, shape).expect("shape matches length")
}

fn uniform<T: Element>(shape: &[usize], bound: f64, rng: &mut Rng64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
    Tensor::parameter(data, shape).expect("shape matches length")
}

/// Fully connected layer; weight stored as `(in, out)`.
pub struct Linear<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng64) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: uniform(&[inputs, outputs], bound, rng),
            bias: uniform(&[outputs], bound, rng),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `(N, in) -> (N, out)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        matmul(x, &self.weight)?.add(&self.bias)
    }
}

impl<T: Element> Module<T> for Linear<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
}

pub struct Conv2d<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub opts: Conv2dOptions,
}

impl<T: Element> Conv2d<T> {
    /// Square kernel, He-initialized, no bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        opts: Conv2dOptions,
        rng: &mut Rng64,
    ) -> Result<Self> {
        let g = opts.groups;
        if g == 0 || in_channels % g != 0 || out_channels % g != 0 {
            return Err(invalid(
                "conv2d",
                format!("{in_channels} -> {out_channels} channels not divisible into {g} groups"),
            ));
        }
        let per_group = in_channels / g;
        Ok(Self {
            weight: he_normal(&[out_channels, per_group, kernel, kernel], per_group * kernel * kernel, rng),
            bias: None,
            opts,
        })
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = Some(Tensor::parameter(vec![T::zero(); self.out_channels()], &[self.out_channels()]).unwrap());
        self
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.opts.groups
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = conv2d(x, &self.weight, self.opts)?;
        match &self.bias {
            Some(b) => y.add_channel_bias(b),
            None => Ok(y),
        }
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

pub struct BatchNorm2d<T: Element = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: RunningStats<T>,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::parameter(vec![T::one(); channels], &[channels]).unwrap(),
            beta: Tensor::parameter(vec![T::zero(); channels], &[channels]).unwrap(),
            stats: RunningStats::new(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        batch_norm2d(x, &self.gamma, &self.beta, &self.stats, mode)
    }
}

impl<T: Element> Module<T> for BatchNorm2d<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &RefCell<Vec<T>>)) {
        f(join(prefix, "running_mean"), &self.stats.mean);
        f(join(prefix, "running_var"), &self.stats.var);
    }
}
