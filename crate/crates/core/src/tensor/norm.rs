use std::cell::RefCell;

use super::{invalid, Element, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Running mean/variance of a batch-norm layer. Not trainable.
#[derive(Debug)]
pub struct RunningStats<T: Element> {
    pub mean: RefCell<Vec<T>>,
    pub var: RefCell<Vec<T>>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: RefCell::new(vec![T::zero(); channels]),
            var: RefCell::new(vec![T::one(); channels]),
            momentum: T::of(0.1),
            eps: T::of(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.borrow().len()
    }
}

/// Batch normalization over `(N, H, W)` for each channel of an
/// `(N, C, H, W)` input, followed by the per-channel affine `gamma * x + beta`.
pub fn batch_norm2d<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    mode: BatchNormMode,
) -> Result<Tensor<T>> {
    let xs = x.shape().to_vec();
    if xs.len() != 4 {
        return Err(invalid("batch_norm2d", format!("expected (N, C, H, W), got {xs:?}")));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if gamma.shape() != [c] || beta.shape() != [c] || stats.channels() != c {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm2d",
            lhs: xs.clone(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let plane = h * w;
    let m = n * plane;
    let eps = stats.eps;
    let (mean, inv_std) = match mode {
        BatchNormMode::Train => {
            if m < 2 {
                return Err(invalid(
                    "batch_norm2d",
                    format!("train mode needs at least 2 values per channel, got N*H*W = {m}"),
                ));
            }
            let xd = x.data();
            let mf = T::of(m as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += xd[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
                }
                let mu = s / mf;
                let mut v = T::zero();
                for b in 0..n {
                    for &val in &xd[(b * c + ch) * plane..][..plane] {
                        let d = val - mu;
                        v += d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = v / mf;
            }
            let mom = stats.momentum;
            let unbias = mf / T::of((m - 1) as f64);
            let mut rm = stats.mean.borrow_mut();
            let mut rv = stats.var.borrow_mut();
            for ch in 0..c {
                rm[ch] = (T::one() - mom) * rm[ch] + mom * mean[ch];
                rv[ch] = (T::one() - mom) * rv[ch] + mom * var[ch] * unbias;
            }
            let inv = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect::<Vec<_>>();
            (mean, inv)
        }
        BatchNormMode::Eval => {
            let mean = stats.mean.borrow().clone();
            let inv = stats
                .var
                .borrow()
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect();
            (mean, inv)
        }
    };
    let out = {
        let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let (mu, inv, g, be) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
                for (o, &v) in out[off..off + plane].iter_mut().zip(&xd[off..off + plane]) {
                    *o = g * (v - mu) * inv + be;
                }
            }
        }
        out
    };
    Ok(Tensor::from_op(
        out,
        xs,
        "batch_norm2d",
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |a| {
            let xd = a.inputs[0].data();
            let gd = a.inputs[1].data();
            let dy = a.grad;
            let mut dx = vec![T::zero(); xd.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mf = T::of(m as f64);
            for ch in 0..c {
                let (mu, inv) = (mean[ch], inv_std[ch]);
                let mut sum_dy = T::zero();
                let mut sum_dy_xhat = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    for i in off..off + plane {
                        let xhat = (xd[i] - mu) * inv;
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * xhat;
                    }
                }
                dgamma[ch] = sum_dy_xhat;
                dbeta[ch] = sum_dy;
                let g = gd[ch];
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    for i in off..off + plane {
                        dx[i] = match mode {
                            BatchNormMode::Train => {
                                let xhat = (xd[i] - mu) * inv;
                                g * inv / mf * (mf * dy[i] - sum_dy - xhat * sum_dy_xhat)
                            }
                            BatchNormMode::Eval => g * inv * dy[i],
                        };
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        },
    ))
}
