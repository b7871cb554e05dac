//! Central finite-difference oracle for checking backward rules.
//!
//! Works purely through forward evaluations and in-place perturbation of leaf
//! data, so it shares no code with the backward rules it audits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter label and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.checked > 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Gradients below this magnitude are compared on an absolute scale.
    pub floor: f64,
    /// Upper bound on sampled coordinates across all parameters.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backprop gradients of `loss` w.r.t. each leaf in `params`
/// against `(L(x + h) - L(x - h)) / 2h`.
pub fn check_gradients<F>(params: &[(&str, &Tensor<f64>)], loss: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, (_, p))| (0..p.numel()).map(move |i| (pi, i)))
        .collect();
    if let Some(limit) = opts.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        while coords.len() > limit {
            let k = rng.random_range(0..coords.len());
            coords.swap_remove(k);
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (pi, i) in coords {
        let (name, p) = params[pi];
        let orig = p.data()[i];
        p.data_mut()[i] = orig + opts.step;
        let up = loss()?.item();
        p.data_mut()[i] = orig - opts.step;
        let down = loss()?.item();
        p.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        let err = relative_error(analytic[pi][i], numeric, opts.floor);
        report.checked += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((name.to_string(), i));
        }
    }
    Ok(report)
}

/// Deterministic pseudo-random weights for reducing a tensor to a scalar,
/// so that every output element contributes a distinct gradient.
pub fn probe_weights(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = super::numel(shape);
    let v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape).expect("shape matches length")
}

/// `sum(y * probe)` with a fixed probe.
pub fn probe_loss(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    Ok(y.mul(&probe_weights(y.shape(), seed))?.sum())
}
