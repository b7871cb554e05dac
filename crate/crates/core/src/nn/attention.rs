use serde::{Deserialize, Serialize};

use super::{join, Conv2d, Linear, Module, Rng64};
use crate::tensor::{concat, global_avg_pool2d, invalid, softmax, split, Conv2dOptions, Element, Result, Tensor};

/// Squeeze-excitation: per-channel weights in `(0, 1)` from pooled
/// channel means through a `C -> C/r -> C` bottleneck.
pub struct SeWeight<T: Element = f32> {
    pub reduce: Linear<T>,
    pub expand: Linear<T>,
}

impl<T: Element> SeWeight<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut Rng64) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(invalid(
                "se_weight",
                format!("reduction {reduction} does not divide {channels} channels"),
            ));
        }
        let hidden = channels / reduction;
        Ok(Self {
            reduce: Linear::new(channels, hidden, rng),
            expand: Linear::new(hidden, channels, rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.reduce.in_features()
    }

    /// `(N, C, H, W) -> (N, C, 1, 1)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels() {
            return Err(invalid(
                "se_weight",
                format!("expected (N, {}, H, W), got {s:?}", self.channels()),
            ));
        }
        let n = s[0];
        let z = global_avg_pool2d(x)?.reshape(&[n, self.channels()])?;
        let z = self.reduce.forward(&z)?.relu();
        let z = self.expand.forward(&z)?.sigmoid();
        z.reshape(&[n, self.channels(), 1, 1])
    }
}

impl<T: Element> Module<T> for SeWeight<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.reduce.visit_params(&join(prefix, "reduce"), f);
        self.expand.visit_params(&join(prefix, "expand"), f);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpcConfig {
    pub kernel_sizes: Vec<usize>,
    pub group_sizes: Vec<usize>,
    /// Squeeze-excitation reduction inside the attention branch.
    pub se_reduction: usize,
}

impl Default for SpcConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![3, 5, 7, 9],
            group_sizes: vec![1, 4, 8, 16],
            se_reduction: 16,
        }
    }
}

impl SpcConfig {
    pub fn splits(&self) -> usize {
        self.kernel_sizes.len()
    }

    /// Checks the configuration against an input width of `channels`.
    pub fn validate(&self, channels: usize) -> Result<usize> {
        let s = self.splits();
        if s == 0 || self.group_sizes.len() != s {
            return Err(invalid(
                "spc",
                format!("{} kernels but {} group sizes", s, self.group_sizes.len()),
            ));
        }
        if channels % s != 0 {
            return Err(invalid("spc", format!("{channels} channels do not split into {s} parts")));
        }
        let part = channels / s;
        for (&k, &g) in self.kernel_sizes.iter().zip(&self.group_sizes) {
            if k % 2 == 0 {
                return Err(invalid("spc", format!("kernel {k} is not odd")));
            }
            if g == 0 || part % g != 0 {
                return Err(invalid("spc", format!("split width {part} not divisible by group size {g}")));
            }
        }
        Ok(part)
    }
}

/// Split-and-concat: each channel slice is convolved at its own scale.
pub struct SpcModule<T: Element = f32> {
    pub convs: Vec<Conv2d<T>>,
}

impl<T: Element> SpcModule<T> {
    pub fn new(channels: usize, cfg: &SpcConfig, rng: &mut Rng64) -> Result<Self> {
        let part = cfg.validate(channels)?;
        let convs = cfg
            .kernel_sizes
            .iter()
            .zip(&cfg.group_sizes)
            .map(|(&k, &g)| {
                let opts = Conv2dOptions {
                    stride: 1,
                    padding: k / 2,
                    groups: g,
                };
                Conv2d::new(part, part, k, opts, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { convs })
    }

    pub fn channels(&self) -> usize {
        self.convs.iter().map(|c| c.out_channels()).sum()
    }

    /// Per-split outputs before concatenation.
    pub fn branches(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if x.rank() != 4 || x.shape()[1] != self.channels() {
            return Err(invalid(
                "spc",
                format!("expected (N, {}, H, W), got {:?}", self.channels(), x.shape()),
            ));
        }
        split(x, self.convs.len(), 1)?
            .iter()
            .zip(&self.convs)
            .map(|(part, conv)| conv.forward(part))
            .collect()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        concat(&self.branches(x)?, 1)
    }
}

impl<T: Element> Module<T> for SpcModule<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

/// Pyramid split attention: SPC branches reweighted by squeeze-excitation
/// scores normalized with a softmax across the branches. One SE unit is
/// shared by all branches.
pub struct PsaModule<T: Element = f32> {
    pub spc: SpcModule<T>,
    pub se: SeWeight<T>,
}

impl<T: Element> PsaModule<T> {
    pub fn new(channels: usize, cfg: &SpcConfig, rng: &mut Rng64) -> Result<Self> {
        let spc = SpcModule::new(channels, cfg, rng)?;
        let part = channels / cfg.splits();
        let se = SeWeight::new(part, cfg.se_reduction, rng)?;
        Ok(Self { spc, se })
    }

    pub fn channels(&self) -> usize {
        self.spc.channels()
    }

    fn attend(&self, branches: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let n = branches[0].shape()[0];
        let part = self.se.channels();
        let scores = branches
            .iter()
            .map(|b| self.se.forward(b)?.reshape(&[n, 1, part]))
            .collect::<Result<Vec<_>>>()?;
        let att = softmax(&concat(&scores, 1)?, 1)?;
        split(&att, branches.len(), 1)?
            .into_iter()
            .map(|a| a.reshape(&[n, part, 1, 1]))
            .collect()
    }

    /// Attention weights per split, each `(N, C/s, 1, 1)`; they sum to one
    /// across splits.
    pub fn attention(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.attend(&self.spc.branches(x)?)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let branches = self.spc.branches(x)?;
        let att = self.attend(&branches)?;
        let weighted = branches
            .iter()
            .zip(&att)
            .map(|(b, a)| b.scale_channels(a))
            .collect::<Result<Vec<_>>>()?;
        concat(&weighted, 1)
    }
}

impl<T: Element> Module<T> for PsaModule<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.spc.visit_params(&join(prefix, "spc"), f);
        self.se.visit_params(&join(prefix, "se"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, probe_loss, probe_weights, GradCheckOptions};
    use rand::SeedableRng;

    fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::parameter(probe_weights(shape, seed).to_vec(), shape).unwrap()
    }

    #[test]
    fn se_identity_maps_give_sigmoid_of_relu_means() {
        let mut rng = Rng64::seed_from_u64(0);
        let se = SeWeight::<f64>::new(3, 1, &mut rng).unwrap();
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for l in [&se.reduce, &se.expand] {
            *l.weight.data_mut() = eye.clone();
            *l.bias.data_mut() = vec![0.0; 3];
        }
        let x = input(&[2, 3, 2, 2], 1);
        let y = se.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 1, 1]);
        let xd = x.to_vec();
        for (i, v) in y.to_vec().iter().enumerate() {
            let mean = xd[i * 4..i * 4 + 4].iter().sum::<f64>() / 4.0;
            let want = 1.0 / (1.0 + (-mean.max(0.0)).exp());
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn se_outputs_in_open_unit_interval_and_ratio_checked() {
        let mut rng = Rng64::seed_from_u64(3);
        let se = SeWeight::<f32>::new(32, 16, &mut rng).unwrap();
        let x = Tensor::from_vec((0..32 * 9).map(|i| (i as f32).sin() * 50.0).collect(), &[1, 32, 3, 3]).unwrap();
        assert!(se.forward(&x).unwrap().to_vec().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(SeWeight::<f32>::new(30, 16, &mut rng).is_err());
    }

    #[test]
    fn se_gradcheck() {
        let mut rng = Rng64::seed_from_u64(4);
        let se = SeWeight::<f64>::new(4, 2, &mut rng).unwrap();
        let x = input(&[2, 4, 3, 3], 5);
        let params = se.parameters();
        let mut all: Vec<(&str, &Tensor<f64>)> = params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        all.push(("x", &x));
        let r = check_gradients(&all, || probe_loss(&se.forward(&x)?, 6), GradCheckOptions::default()).unwrap();
        assert!(r.passes(1e-3), "{r:?}");
    }

    #[test]
    fn spc_identity_and_shapes() {
        let mut rng = Rng64::seed_from_u64(0);
        let cfg = SpcConfig {
            kernel_sizes: vec![1],
            group_sizes: vec![1],
            se_reduction: 1,
        };
        let spc = SpcModule::<f64>::new(3, &cfg, &mut rng).unwrap();
        *spc.convs[0].weight.data_mut() = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = input(&[2, 3, 4, 5], 2);
        assert_eq!(spc.forward(&x).unwrap().to_vec(), x.to_vec());

        let spc = SpcModule::<f32>::new(64, &SpcConfig::default(), &mut rng).unwrap();
        assert!(spc.convs.iter().all(|c| c.out_channels() == 16));
        let x = Tensor::zeros(&[1, 64, 9, 7]);
        for b in spc.branches(&x).unwrap() {
            assert_eq!(b.shape(), &[1, 16, 9, 7]);
        }
        assert!(SpcModule::<f32>::new(24, &SpcConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn spc_and_psa_preserve_shape_over_widths() {
        let mut rng = Rng64::seed_from_u64(9);
        for c in [8usize, 16, 32, 64] {
            for s in [1usize, 2, 4] {
                let cfg = SpcConfig {
                    kernel_sizes: [3, 5, 7, 9][..s].to_vec(),
                    group_sizes: vec![1; s],
                    se_reduction: 2,
                };
                let x = Tensor::<f32>::from_vec(vec![0.5; 2 * c * 36], &[2, c, 6, 6]).unwrap();
                let spc = SpcModule::new(c, &cfg, &mut rng).unwrap();
                assert_eq!(spc.forward(&x).unwrap().shape(), x.shape());
                let psa = PsaModule::new(c, &cfg, &mut rng).unwrap();
                assert_eq!(psa.forward(&x).unwrap().shape(), x.shape());
            }
        }
    }

    #[test]
    fn psa_attention_sums_to_one_across_splits() {
        let mut rng = Rng64::seed_from_u64(5);
        let psa = PsaModule::<f64>::new(64, &SpcConfig::default(), &mut rng).unwrap();
        let x = input(&[3, 64, 5, 5], 7);
        let att = psa.attention(&x).unwrap();
        assert_eq!(att.len(), 4);
        let vals: Vec<Vec<f64>> = att.iter().map(|a| a.to_vec()).collect();
        for i in 0..vals[0].len() {
            let s: f64 = vals.iter().map(|v| v[i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn psa_with_one_split_equals_spc() {
        let mut rng = Rng64::seed_from_u64(6);
        let cfg = SpcConfig {
            kernel_sizes: vec![3],
            group_sizes: vec![1],
            se_reduction: 2,
        };
        let psa = PsaModule::<f64>::new(4, &cfg, &mut rng).unwrap();
        let x = input(&[2, 4, 4, 4], 8);
        assert_eq!(psa.forward(&x).unwrap().to_vec(), psa.spc.forward(&x).unwrap().to_vec());
    }

    #[test]
    fn psa_gradcheck() {
        let mut rng = Rng64::seed_from_u64(10);
        let cfg = SpcConfig {
            kernel_sizes: vec![3, 5],
            group_sizes: vec![1, 2],
            se_reduction: 2,
        };
        let psa = PsaModule::<f64>::new(8, &cfg, &mut rng).unwrap();
        let x = input(&[1, 8, 4, 4], 11);
        let params = psa.parameters();
        let mut all: Vec<(&str, &Tensor<f64>)> = params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        all.push(("x", &x));
        let r = check_gradients(&all, || probe_loss(&psa.forward(&x)?, 12), GradCheckOptions::default()).unwrap();
        assert!(r.passes(1e-3), "{r:?}");
    }
}
