use super::{invalid, Element, Result, Tensor, TensorError};

fn softmax_rows<T: Element>(x: &[T], outer: usize, len: usize, inner: usize, log: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).fold(T::neg_infinity(), |m, k| m.max(x[at(k)]));
            let sum: T = (0..len).map(|k| (x[at(k)] - max).exp()).sum();
            let log_sum = sum.ln();
            for k in 0..len {
                let z = x[at(k)] - max;
                out[at(k)] = if log { z - log_sum } else { z.exp() / sum };
            }
        }
    }
    out
}

fn axis_layout(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() || shape[axis] == 0 {
        return Err(invalid(op, format!("axis {axis} invalid for shape {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

/// Max-subtracted softmax along `axis`.
pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_layout("softmax", x.shape(), axis)?;
    let out = softmax_rows(&x.data(), outer, len, inner, false);
    Ok(Tensor::from_op(out, x.shape().to_vec(), "softmax", vec![x.clone()], move |a| {
        let (s, g) = (a.output, a.grad);
        let mut gx = vec![T::zero(); s.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let dot: T = (0..len).map(|k| s[at(k)] * g[at(k)]).sum();
                for k in 0..len {
                    gx[at(k)] = s[at(k)] * (g[at(k)] - dot);
                }
            }
        }
        vec![Some(gx)]
    }))
}

pub fn log_softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_layout("log_softmax", x.shape(), axis)?;
    let out = softmax_rows(&x.data(), outer, len, inner, true);
    Ok(Tensor::from_op(out, x.shape().to_vec(), "log_softmax", vec![x.clone()], move |a| {
        let (y, g) = (a.output, a.grad);
        let mut gx = vec![T::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let gsum: T = (0..len).map(|k| g[at(k)]).sum();
                for k in 0..len {
                    gx[at(k)] = g[at(k)] - y[at(k)].exp() * gsum;
                }
            }
        }
        vec![Some(gx)]
    }))
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
///
/// `logits` is `(N, C)`; the result is a scalar.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(invalid(
            "cross_entropy",
            format!("logits {s:?} do not match {} labels", labels.len()),
        ));
    }
    let (n, c) = (s[0], s[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(TensorError::LabelOutOfRange { label, classes: c });
    }
    let logp = softmax_rows(&logits.data(), n, c, 1, true);
    let nf = T::of(n as f64);
    let loss = -labels
        .iter()
        .enumerate()
        .map(|(i, &l)| logp[i * c + l])
        .sum::<T>()
        / nf;
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![loss],
        Vec::new(),
        "cross_entropy",
        vec![logits.clone()],
        move |a| {
            let scale = a.grad[0] / nf;
            let mut g: Vec<T> = logp.iter().map(|&lp| lp.exp() * scale).collect();
            for (i, &l) in labels.iter().enumerate() {
                g[i * c + l] -= scale;
            }
            vec![Some(g)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let x = Tensor::<f64>::from_vec(vec![0.0, 0.0], &[1, 2]).unwrap();
        assert_eq!(softmax(&x, 1).unwrap().to_vec(), vec![0.5, 0.5]);
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let p = softmax(&x, 0).unwrap().to_vec();
        // e^k / (e + e^2 + e^3), evaluated independently
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (k, want) in [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / z).enumerate() {
            assert!((p[k] - want).abs() < 1e-15);
        }
        assert!((p[0] - 0.0900).abs() < 5e-5 && (p[1] - 0.2447).abs() < 5e-5 && (p[2] - 0.6652).abs() < 5e-5);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::<f64>::zeros(&[4, 6]);
        let l = cross_entropy(&logits, &[0, 1, 2, 5]).unwrap();
        assert!((l.item() - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn out_of_range_label() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        assert!(matches!(
            cross_entropy(&logits, &[3]),
            Err(TensorError::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_without_nan(v in proptest::collection::vec(-1e4f64..1e4, 2..12)) {
            let n = v.len();
            let x = Tensor::<f32>::from_vec(v.iter().map(|&a| a as f32).collect(), &[1, n]).unwrap();
            let p = softmax(&x, 1).unwrap().to_vec();
            prop_assert!(p.iter().all(|a| a.is_finite()));
            let s: f64 = p.iter().map(|&a| a as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
