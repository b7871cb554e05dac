use super::{invalid, Element, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
    /// Mean over the whole `H x W` plane; `size`/`stride`/`padding` are ignored.
    GlobalAvg,
}

pub fn pool_output_size(input: usize, size: usize, stride: usize, padding: usize) -> Option<usize> {
    super::conv2d_output_size(input, size, stride, padding)
}

/// Square-window pooling over an `(N, C, H, W)` tensor.
///
/// Padding never wins a max (padded cells are skipped) and counts as zero for
/// the average. Max-pool ties route the gradient to the first cell in
/// row-major order.
pub fn pool2d<T: Element>(
    x: &Tensor<T>,
    kind: PoolKind,
    size: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    if kind == PoolKind::GlobalAvg {
        return global_avg_pool2d(x);
    }
    let xs = x.shape().to_vec();
    if xs.len() != 4 {
        return Err(invalid("pool2d", format!("expected (N, C, H, W), got {xs:?}")));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if padding * 2 >= size && padding > 0 {
        return Err(invalid("pool2d", format!("padding {padding} too large for window {size}")));
    }
    let (Some(oh), Some(ow)) = (
        pool_output_size(h, size, stride, padding),
        pool_output_size(w, size, stride, padding),
    ) else {
        return Err(invalid(
            "pool2d",
            format!("window {size} (stride {stride}) larger than input {h}x{w}"),
        ));
    };
    let planes = n * c;
    let mut out = vec![T::zero(); planes * oh * ow];
    // For max pooling, the flat input index chosen for every output cell.
    let mut argmax = if kind == PoolKind::Max { vec![0usize; out.len()] } else { Vec::new() };
    let area = T::of((size * size) as f64);
    {
        let xd = x.data();
        for pl in 0..planes {
            let src = &xd[pl * h * w..(pl + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (pl * oh + oy) * ow + ox;
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    let mut acc = T::zero();
                    for i in 0..size {
                        let iy = (oy * stride + i) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..size {
                            let ix = (ox * stride + j) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            let v = src[idx];
                            acc += v;
                            if best_idx == usize::MAX || v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    match kind {
                        PoolKind::Max => {
                            out[o] = best;
                            argmax[o] = pl * h * w + best_idx;
                        }
                        _ => out[o] = acc / area,
                    }
                }
            }
        }
    }
    let numel_in = x.numel();
    Ok(Tensor::from_op(
        out,
        vec![n, c, oh, ow],
        match kind {
            PoolKind::Max => "max_pool2d",
            _ => "avg_pool2d",
        },
        vec![x.clone()],
        move |a| {
            let mut gx = vec![T::zero(); numel_in];
            match kind {
                PoolKind::Max => {
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += a.grad[o];
                    }
                }
                _ => {
                    for pl in 0..planes {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = a.grad[(pl * oh + oy) * ow + ox] / area;
                                for i in 0..size {
                                    let iy = (oy * stride + i) as isize - padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for j in 0..size {
                                        let ix = (ox * stride + j) as isize - padding as isize;
                                        if ix >= 0 && ix < w as isize {
                                            gx[pl * h * w + iy as usize * w + ix as usize] += g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}

/// `(N, C, H, W) -> (N, C, 1, 1)` plane means.
pub fn global_avg_pool2d<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape().to_vec();
    if xs.len() != 4 || xs[2] * xs[3] == 0 {
        return Err(invalid("global_avg_pool2d", format!("expected non-empty (N, C, H, W), got {xs:?}")));
    }
    let plane = xs[2] * xs[3];
    let inv = T::one() / T::of(plane as f64);
    let out: Vec<T> = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Ok(Tensor::from_op(
        out,
        vec![xs[0], xs[1], 1, 1],
        "global_avg_pool2d",
        vec![x.clone()],
        move |a| {
            let gx = a
                .grad
                .iter()
                .flat_map(|&g| std::iter::repeat_n(g * inv, plane))
                .collect();
            vec![Some(gx)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_average_of_four() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let y = pool2d(&x, PoolKind::GlobalAvg, 0, 0, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 2.5);
    }

    #[test]
    fn avg_two_by_two_halves_spatial_dims() {
        let x = Tensor::<f64>::zeros(&[2, 3, 16, 128]);
        let y = pool2d(&x, PoolKind::Avg, 2, 2, 0).unwrap();
        assert_eq!(y.shape(), &[2, 3, 8, 64]);
        let odd = Tensor::<f64>::zeros(&[1, 1, 5, 7]);
        assert_eq!(pool2d(&odd, PoolKind::Avg, 2, 2, 0).unwrap().shape(), &[1, 1, 2, 3]);
    }

    #[test]
    fn max_gradient_goes_to_the_max_only() {
        let x = Tensor::<f64>::parameter(vec![1.0, 5.0, 3.0, 2.0], &[1, 1, 2, 2]).unwrap();
        pool2d(&x, PoolKind::Max, 2, 2, 0).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn max_ties_pick_first_index() {
        let x = Tensor::<f64>::parameter(vec![7.0, 7.0, 7.0, 7.0], &[1, 1, 2, 2]).unwrap();
        pool2d(&x, PoolKind::Max, 2, 2, 0).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn padded_max_pool_matches_stem_geometry() {
        let x = Tensor::<f64>::zeros(&[1, 1, 32, 256]);
        let y = pool2d(&x, PoolKind::Max, 3, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 16, 128]);
    }

    #[test]
    fn window_larger_than_input_is_an_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(pool2d(&x, PoolKind::Avg, 3, 1, 0).is_err());
    }
}
