use super::{gemm, invalid, Element, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

/// Output extent along one spatial axis (floor division, as in the usual
/// strided-convolution convention). `None` when the kernel does not fit.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `x` holds `g.c` channel planes; `col` is `(c*kh*kw) x (oh*ow)`.
fn im2col<T: Element>(x: &[T], g: Geom, col: &mut [T]) {
    let p = g.oh * g.ow;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col[((c * g.kh + i) * g.kw + j) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], g: Geom, dx: &mut [T]) {
    let p = g.oh * g.ow;
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &col[((c * g.kh + i) * g.kw + j) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in row[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Grouped 2-D cross-correlation with zero padding and no bias.
///
/// `x` is `(N, C, H, W)`, `w` is `(F, C/groups, kh, kw)`.
pub fn conv2d<T: Element>(x: &Tensor<T>, w: &Tensor<T>, opts: Conv2dOptions) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape().to_vec(), w.shape().to_vec());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: xs,
            rhs: ws,
        });
    }
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (f, cg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let groups = opts.groups;
    if groups == 0 || c % groups != 0 || f % groups != 0 || cg != c / groups {
        return Err(invalid(
            "conv2d",
            format!("groups={groups} incompatible with input {xs:?} and weight {ws:?}"),
        ));
    }
    let oh = conv2d_output_size(h, kh, opts.stride, opts.padding);
    let ow = conv2d_output_size(wd, kw, opts.stride, opts.padding);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(invalid(
            "conv2d",
            format!(
                "kernel {kh}x{kw} (stride {}, padding {}) does not fit input {h}x{wd}",
                opts.stride, opts.padding
            ),
        ));
    };
    let fg = f / groups;
    let geom = Geom {
        c: cg,
        h,
        w: wd,
        kh,
        kw,
        oh,
        ow,
        stride: opts.stride,
        pad: opts.padding,
    };
    let k = cg * kh * kw;
    let p = oh * ow;
    let mut out = vec![T::zero(); n * f * p];
    {
        let xd = x.data();
        let wdat = w.data();
        let mut col = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        for b in 0..n {
            for g in 0..groups {
                let xg = &xd[(b * c + g * cg) * h * wd..][..cg * h * wd];
                let cols: &[T] = if geom.is_pointwise() {
                    xg
                } else {
                    im2col(xg, geom, &mut col);
                    &col
                };
                let wg = &wdat[g * fg * k..(g + 1) * fg * k];
                let og = &mut out[(b * f + g * fg) * p..][..fg * p];
                gemm(fg, k, p, wg, false, cols, false, og, false);
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![n, f, oh, ow],
        "conv2d",
        vec![x.clone(), w.clone()],
        move |args| {
            let xd = args.inputs[0].data();
            let wdat = args.inputs[1].data();
            let need_x = args.inputs[0].requires_grad();
            let need_w = args.inputs[1].requires_grad();
            let mut gx = need_x.then(|| vec![T::zero(); n * c * h * wd]);
            let mut gw = need_w.then(|| vec![T::zero(); f * k]);
            let pointwise = geom.is_pointwise();
            let mut col = vec![T::zero(); if pointwise { 0 } else { k * p }];
            let mut dcol = vec![T::zero(); if pointwise || !need_x { 0 } else { k * p }];
            for b in 0..n {
                for g in 0..groups {
                    let go = &args.grad[(b * f + g * fg) * p..][..fg * p];
                    let xg = &xd[(b * c + g * cg) * h * wd..][..cg * h * wd];
                    if let Some(gw) = gw.as_mut() {
                        let cols: &[T] = if pointwise {
                            xg
                        } else {
                            im2col(xg, geom, &mut col);
                            &col
                        };
                        let dst = &mut gw[g * fg * k..(g + 1) * fg * k];
                        gemm(fg, p, k, go, false, cols, true, dst, true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let wg = &wdat[g * fg * k..(g + 1) * fg * k];
                        let dst = &mut gx[(b * c + g * cg) * h * wd..][..cg * h * wd];
                        if pointwise {
                            gemm(k, fg, p, wg, true, go, false, dst, true);
                        } else {
                            gemm(k, fg, p, wg, true, go, false, &mut dcol, false);
                            col2im(&dcol, geom, dst);
                        }
                    }
                }
            }
            vec![gx, gw]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop evaluation.
    #[allow(clippy::too_many_arguments)]
    fn naive(
        x: &[f64],
        w: &[f64],
        (n, c, h, wd): (usize, usize, usize, usize),
        (f, kh, kw): (usize, usize, usize),
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> (Vec<f64>, usize, usize) {
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let (cg, fg) = (c / groups, f / groups);
        let mut out = vec![0.0; n * f * oh * ow];
        for b in 0..n {
            for o in 0..f {
                let g = o / fg;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cg {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * stride + i) as isize - pad as isize;
                                    let ix = (ox * stride + j) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xc = g * cg + ci;
                                    acc += x[((b * c + xc) * h + iy as usize) * wd + ix as usize]
                                        * w[((o * cg + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                        out[((b * f + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        (out, oh, ow)
    }

    #[test]
    fn pointwise_unit_kernel_is_identity() {
        let x = Tensor::<f64>::from_vec((0..2 * 3 * 4).map(f64::from).collect(), &[1, 2, 3, 4]).unwrap();
        let w = Tensor::<f64>::from_vec(vec![1.0, 0.0, 0.0, 1.0], &[2, 2, 1, 1]).unwrap();
        let y = conv2d(&x, &w, Conv2dOptions::default()).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn ones_kernel_on_ones_input() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, Conv2dOptions::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn matches_naive_oracle_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..120 {
            let groups = [1, 2, 4][case % 3];
            let cg = rng.random_range(1..3);
            let fg = rng.random_range(1..3);
            let (c, f) = (cg * groups, fg * groups);
            let n = rng.random_range(1..3);
            let kh = rng.random_range(1..4);
            let kw = rng.random_range(1..4);
            let pad = rng.random_range(0..2);
            let stride = rng.random_range(1..3);
            let h = rng.random_range(kh..7);
            let wd = rng.random_range(kw..7);
            let xv: Vec<f64> = (0..n * c * h * wd).map(|_| rng.random_range(-1.0..1.0)).collect();
            let wv: Vec<f64> = (0..f * cg * kh * kw).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (want, oh, ow) = naive(&xv, &wv, (n, c, h, wd), (f, kh, kw), stride, pad, groups);
            let x = Tensor::from_vec(xv, &[n, c, h, wd]).unwrap();
            let w = Tensor::from_vec(wv, &[f, cg, kh, kw]).unwrap();
            let y = conv2d(&x, &w, Conv2dOptions { stride, padding: pad, groups }).unwrap();
            assert_eq!(y.shape(), &[n, f, oh, ow]);
            for (g, w) in y.to_vec().iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "case {case}");
            }
        }
    }

    #[test]
    fn grouped_f32_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xv: Vec<f64> = (0..2 * 4 * 8 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wv: Vec<f64> = (0..4 * 2 * 3 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (want, _, _) = naive(&xv, &wv, (2, 4, 8, 8), (4, 3, 3), 1, 1, 2);
        let x = Tensor::<f32>::from_vec(xv.iter().map(|&v| v as f32).collect(), &[2, 4, 8, 8]).unwrap();
        let w = Tensor::<f32>::from_vec(wv.iter().map(|&v| v as f32).collect(), &[4, 2, 3, 3]).unwrap();
        let y = conv2d(&x, &w, Conv2dOptions { stride: 1, padding: 1, groups: 2 }).unwrap();
        let max = y
            .to_vec()
            .iter()
            .zip(&want)
            .fold(0.0f64, |m, (g, w)| m.max((*g as f64 - w).abs()));
        assert!(max < 1e-5, "max abs diff {max}");
    }

    #[test]
    fn rejects_bad_groups_and_oversized_kernels() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
        assert!(conv2d(&x, &w, Conv2dOptions { groups: 2, ..Default::default() }).is_err());
        let w = Tensor::<f64>::zeros(&[1, 3, 5, 5]);
        assert!(conv2d(&x, &w, Conv2dOptions::default()).is_err());
    }

    #[test]
    fn stem_geometry_floors() {
        assert_eq!(conv2d_output_size(64, 7, 2, 3), Some(32));
        assert_eq!(conv2d_output_size(512, 7, 2, 3), Some(256));
        assert_eq!(conv2d_output_size(2, 3, 1, 0), None);
    }
}
