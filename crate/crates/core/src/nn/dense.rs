use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::{join, BatchNorm2d, Conv2d, Mode, Module, PsaModule, Rng64, SpcConfig};
use crate::tensor::{concat, invalid, pool2d, Conv2dOptions, Element, PoolKind, Result, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenseVariant {
    /// BN-ReLU-1x1 then BN-ReLU-3x3.
    Plain,
    /// The 3x3 is replaced by PSA followed by a 1x1 projection to `growth`.
    Psa(SpcConfig),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseBlockSpec {
    pub layers: usize,
    pub growth: usize,
    pub bottleneck: usize,
    pub variant: DenseVariant,
}

impl DenseBlockSpec {
    /// Bottleneck defaults to `4 * growth`.
    pub fn new(layers: usize, growth: usize, variant: DenseVariant) -> Self {
        Self {
            layers,
            growth,
            bottleneck: 4 * growth,
            variant,
        }
    }

    pub fn with_bottleneck(mut self, bottleneck: usize) -> Self {
        self.bottleneck = bottleneck;
        self
    }

    pub fn out_channels(&self, in_channels: usize) -> usize {
        in_channels + self.layers * self.growth
    }
}

enum Head<T: Element> {
    Plain(Conv2d<T>),
    Psa { psa: PsaModule<T>, proj: Conv2d<T> },
}

pub struct DenseLayer<T: Element = f32> {
    norm1: BatchNorm2d<T>,
    conv1: Conv2d<T>,
    norm2: BatchNorm2d<T>,
    head: Head<T>,
}

fn conv1x1<T: Element>(cin: usize, cout: usize, rng: &mut Rng64) -> Result<Conv2d<T>> {
    Conv2d::new(cin, cout, 1, Conv2dOptions::default(), rng)
}

impl<T: Element> DenseLayer<T> {
    pub fn new(in_channels: usize, spec: &DenseBlockSpec, rng: &mut Rng64) -> Result<Self> {
        if spec.growth == 0 || spec.bottleneck == 0 {
            return Err(invalid("dense_layer", "growth and bottleneck must be positive"));
        }
        let conv1 = conv1x1(in_channels, spec.bottleneck, rng)?;
        let head = match &spec.variant {
            DenseVariant::Plain => {
                let opts = Conv2dOptions {
                    padding: 1,
                    ..Conv2dOptions::default()
                };
                Head::Plain(Conv2d::new(spec.bottleneck, spec.growth, 3, opts, rng)?)
            }
            DenseVariant::Psa(cfg) => Head::Psa {
                psa: PsaModule::new(spec.bottleneck, cfg, rng)?,
                proj: conv1x1(spec.bottleneck, spec.growth, rng)?,
            },
        };
        Ok(Self {
            norm1: BatchNorm2d::new(in_channels),
            conv1,
            norm2: BatchNorm2d::new(spec.bottleneck),
            head,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.norm1.channels()
    }

    pub fn growth(&self) -> usize {
        match &self.head {
            Head::Plain(c) => c.out_channels(),
            Head::Psa { proj, .. } => proj.out_channels(),
        }
    }

    /// New feature maps only, `(N, growth, H, W)`.
    pub fn new_features(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.shape()[1] != self.in_channels() {
            return Err(invalid(
                "dense_layer",
                format!("expected (N, {}, H, W), got {:?}", self.in_channels(), x.shape()),
            ));
        }
        let h = self.conv1.forward(&self.norm1.forward(x, mode)?.relu())?;
        let h = self.norm2.forward(&h, mode)?.relu();
        match &self.head {
            Head::Plain(conv) => conv.forward(&h),
            Head::Psa { psa, proj } => proj.forward(&psa.forward(&h)?),
        }
    }

    /// `concat(x, new_features(x))` along channels.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.new_features(x, mode)?;
        concat(&[x.clone(), y], 1)
    }
}

impl<T: Element> Module<T> for DenseLayer<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.norm1.visit_params(&join(prefix, "norm1"), f);
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.norm2.visit_params(&join(prefix, "norm2"), f);
        match &self.head {
            Head::Plain(c) => c.visit_params(&join(prefix, "conv2"), f),
            Head::Psa { psa, proj } => {
                psa.visit_params(&join(prefix, "psa"), f);
                proj.visit_params(&join(prefix, "proj"), f);
            }
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &RefCell<Vec<T>>)) {
        self.norm1.visit_buffers(&join(prefix, "norm1"), f);
        self.norm2.visit_buffers(&join(prefix, "norm2"), f);
    }
}

pub struct DenseBlock<T: Element = f32> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Element> DenseBlock<T> {
    pub fn new(in_channels: usize, spec: &DenseBlockSpec, rng: &mut Rng64) -> Result<Self> {
        let layers = (0..spec.layers)
            .map(|i| DenseLayer::new(in_channels + i * spec.growth, spec, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }
}

impl<T: Element> Module<T> for DenseBlock<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&join(prefix, &format!("layer{}", i + 1)), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &RefCell<Vec<T>>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_buffers(&join(prefix, &format!("layer{}", i + 1)), f);
        }
    }
}

/// BN-ReLU-1x1 conv, then 2x2 average pooling with stride 2.
pub struct Transition<T: Element = f32> {
    pub norm: BatchNorm2d<T>,
    pub conv: Conv2d<T>,
}

impl<T: Element> Transition<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut Rng64) -> Result<Self> {
        if out_channels == 0 {
            return Err(invalid("transition", "out_channels must be positive"));
        }
        Ok(Self {
            norm: BatchNorm2d::new(in_channels),
            conv: conv1x1(in_channels, out_channels, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.conv.forward(&self.norm.forward(x, mode)?.relu())?;
        pool2d(&h, PoolKind::Avg, 2, 2, 0)
    }
}

impl<T: Element> Module<T> for Transition<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.conv.visit_params(&join(prefix, "conv"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &RefCell<Vec<T>>)) {
        self.norm.visit_buffers(&join(prefix, "norm"), f);
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

    fn small_psa() -> DenseVariant {
        DenseVariant::Psa(SpcConfig {
            kernel_sizes: vec![3, 5],
            group_sizes: vec![1, 2],
            se_reduction: 2,
        })
    }

    #[test]
    fn layer_appends_growth_channels() {
        let mut rng = Rng64::seed_from_u64(0);
        for variant in [DenseVariant::Plain, small_psa()] {
            let spec = DenseBlockSpec::new(1, 4, variant);
            let layer = DenseLayer::<f32>::new(6, &spec, &mut rng).unwrap();
            let y = layer.forward(&Tensor::zeros(&[2, 6, 5, 5]), Mode::Train).unwrap();
            assert_eq!(y.shape(), &[2, 10, 5, 5]);
        }
    }

    #[test]
    fn block_of_six_growth_64_on_64_gives_448() {
        let mut rng = Rng64::seed_from_u64(1);
        let spec = DenseBlockSpec::new(6, 64, DenseVariant::Plain);
        assert_eq!(spec.out_channels(64), 448);
        let block = DenseBlock::<f32>::new(64, &spec, &mut rng).unwrap();
        let y = block.forward(&Tensor::zeros(&[1, 64, 2, 2]), Mode::Train).unwrap();
        assert_eq!(y.shape(), &[1, 448, 2, 2]);
    }

    #[test]
    fn block_realizes_triangular_connection_count() {
        let mut rng = Rng64::seed_from_u64(2);
        for k in 1..6 {
            let spec = DenseBlockSpec::new(k, 3, DenseVariant::Plain);
            let block = DenseBlock::<f32>::new(5, &spec, &mut rng).unwrap();
            // layer j reads the block input plus its j-1 predecessors
            let sources: usize = block
                .layers
                .iter()
                .map(|l| 1 + (l.in_channels() - 5) / 3)
                .sum();
            assert_eq!(sources, k * (k + 1) / 2);
        }
    }

    #[test]
    fn transition_halves_and_compresses() {
        let mut rng = Rng64::seed_from_u64(4);
        let t = Transition::<f32>::new(448, 208, &mut rng).unwrap();
        let y = t.forward(&Tensor::zeros(&[1, 448, 16, 128]), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 208, 8, 64]);
        // hand count: BN 2 x 448, 1x1 conv 208 x 448
        assert_eq!(t.num_parameters(), 2 * 448 + 208 * 448);
    }

    #[test]
    fn transition_on_constant_input_pools_constants() {
        let mut rng = Rng64::seed_from_u64(5);
        let t = Transition::<f64>::new(3, 3, &mut rng).unwrap();
        let x = Tensor::from_vec(vec![0.7; 3 * 16], &[1, 3, 4, 4]).unwrap();
        let y = t.forward(&x, Mode::Eval).unwrap().to_vec();
        for c in 0..3 {
            let plane = &y[c * 4..c * 4 + 4];
            assert!(plane.iter().all(|v| (v - plane[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn dense_layer_param_count_by_hand() {
        let mut rng = Rng64::seed_from_u64(6);
        let spec = DenseBlockSpec::new(1, 4, DenseVariant::Plain);
        let l = DenseLayer::<f32>::new(8, &spec, &mut rng).unwrap();
        // BN(8) + 1x1 8->16 + BN(16) + 3x3 16->4
        assert_eq!(l.num_parameters(), 16 + 128 + 32 + 576);
        let spec = DenseBlockSpec::new(1, 4, small_psa()).with_bottleneck(8);
        let l = DenseLayer::<f32>::new(8, &spec, &mut rng).unwrap();
        // BN(8) + 1x1 8->8 + BN(8) + SPC(4*4*3*3 + 4*2*5*5) + SE(4*2+2 + 2*4+4) + 1x1 8->4
        assert_eq!(l.num_parameters(), 16 + 64 + 16 + (144 + 200) + (10 + 12) + 32);
    }

    #[test]
    fn dense_layer_and_transition_gradcheck() {
        let mut rng = Rng64::seed_from_u64(7);
        let opts = GradCheckOptions {
            max_coords: Some(150),
            ..GradCheckOptions::default()
        };
        for variant in [DenseVariant::Plain, small_psa()] {
            let spec = DenseBlockSpec::new(1, 2, variant).with_bottleneck(4);
            let layer = DenseLayer::<f64>::new(3, &spec, &mut rng).unwrap();
            let x = input(&[2, 3, 4, 4], 8);
            let params = layer.parameters();
            let mut all: Vec<(&str, &Tensor<f64>)> = params.iter().map(|(n, t)| (n.as_str(), t)).collect();
            all.push(("x", &x));
            let r = check_gradients(&all, || probe_loss(&layer.forward(&x, Mode::Train)?, 9), opts).unwrap();
            assert!(r.passes(1e-3), "{r:?}");
        }
        let t = Transition::<f64>::new(3, 2, &mut rng).unwrap();
        let x = input(&[2, 3, 4, 4], 10);
        let params = t.parameters();
        let mut all: Vec<(&str, &Tensor<f64>)> = params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        all.push(("x", &x));
        let r = check_gradients(&all, || probe_loss(&t.forward(&x, Mode::Train)?, 11), opts).unwrap();
        assert!(r.passes(1e-3), "{r:?}");
    }
}
