use super::{invalid, Element, Result, Tensor, TensorError};

/// `(outer, inner)` extents around `axis`.
fn around(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat<T: Element>(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = tensors
        .first()
        .ok_or_else(|| invalid("concat", "no tensors given"))?;
    let base = first.shape().to_vec();
    if axis >= base.len() {
        return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
    }
    for t in &tensors[1..] {
        let s = t.shape();
        let same_rest = s.len() == base.len()
            && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !same_rest {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: base.clone(),
                rhs: s.to_vec(),
            });
        }
    }
    let (outer, inner) = around(&base, axis);
    let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(outer * total);
    {
        let datas: Vec<_> = tensors.iter().map(|t| t.data()).collect();
        for o in 0..outer {
            for (d, &wdt) in datas.iter().zip(&widths) {
                out.extend_from_slice(&d[o * wdt..(o + 1) * wdt]);
            }
        }
    }
    let mut shape = base;
    shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
    Ok(Tensor::from_op(out, shape, "concat", tensors.to_vec(), move |a| {
        let mut grads: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(w * outer)).collect();
        for o in 0..outer {
            let mut off = o * total;
            for (g, &wdt) in grads.iter_mut().zip(&widths) {
                g.extend_from_slice(&a.grad[off..off + wdt]);
                off += wdt;
            }
        }
        grads.into_iter().map(Some).collect()
    }))
}

/// Slice `[start, start + len)` along `axis`.
pub fn narrow<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() || start + len > shape[axis] {
        return Err(invalid(
            "narrow",
            format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
        ));
    }
    let (outer, inner) = around(&shape, axis);
    let full = shape[axis] * inner;
    let (lo, width) = (start * inner, len * inner);
    let mut out = Vec::with_capacity(outer * width);
    {
        let d = x.data();
        for o in 0..outer {
            out.extend_from_slice(&d[o * full + lo..o * full + lo + width]);
        }
    }
    let mut oshape = shape.clone();
    oshape[axis] = len;
    let n_in = x.numel();
    Ok(Tensor::from_op(out, oshape, "narrow", vec![x.clone()], move |a| {
        let mut g = vec![T::zero(); n_in];
        for o in 0..outer {
            g[o * full + lo..o * full + lo + width].copy_from_slice(&a.grad[o * width..(o + 1) * width]);
        }
        vec![Some(g)]
    }))
}

/// Splits along `axis` into pieces of the given extents.
pub fn split_sizes<T: Element>(x: &Tensor<T>, sizes: &[usize], axis: usize) -> Result<Vec<Tensor<T>>> {
    let shape = x.shape();
    if axis >= shape.len() || sizes.iter().sum::<usize>() != shape[axis] {
        return Err(invalid(
            "split",
            format!("sizes {sizes:?} do not cover axis {axis} of {shape:?}"),
        ));
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let t = narrow(x, axis, start, len);
            start += len;
            t
        })
        .collect()
}

/// Splits along `axis` into `parts` equal pieces.
pub fn split<T: Element>(x: &Tensor<T>, parts: usize, axis: usize) -> Result<Vec<Tensor<T>>> {
    let shape = x.shape();
    if parts == 0 || axis >= shape.len() || shape[axis] % parts != 0 {
        return Err(invalid(
            "split",
            format!("axis {axis} of {shape:?} does not divide into {parts} parts"),
        ));
    }
    split_sizes(x, &vec![shape[axis] / parts; parts], axis)
}
