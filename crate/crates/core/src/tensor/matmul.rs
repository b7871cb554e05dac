use super::{gemm, Element, Result, Tensor, TensorError};

/// `(m, k) x (k, n) -> (m, n)`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(m, k, n, &a.data(), false, &b.data(), false, &mut out, false);
    Ok(Tensor::from_op(
        out,
        vec![m, n],
        "matmul",
        vec![a.clone(), b.clone()],
        move |args| {
            let ad = args.inputs[0].data();
            let bd = args.inputs[1].data();
            let ga = args.inputs[0].requires_grad().then(|| {
                // dA = dC * B^T
                let mut g = vec![T::zero(); m * k];
                gemm(m, n, k, args.grad, false, &bd, true, &mut g, false);
                g
            });
            let gb = args.inputs[1].requires_grad().then(|| {
                // dB = A^T * dC
                let mut g = vec![T::zero(); k * n];
                gemm(k, m, n, &ad, true, args.grad, false, &mut g, false);
                g
            });
            vec![ga, gb]
        },
    ))
}

pub fn transpose2d<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let s = a.shape();
    if s.len() != 2 {
        return Err(super::invalid("transpose2d", format!("rank-2 input required, got {s:?}")));
    }
    let (r, c) = (s[0], s[1]);
    let flip = move |src: &[T], rows: usize, cols: usize| {
        let mut out = vec![T::zero(); rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = src[i * cols + j];
            }
        }
        out
    };
    let data = flip(&a.data(), r, c);
    Ok(Tensor::from_op(data, vec![c, r], "transpose2d", vec![a.clone()], move |args| {
        vec![Some(flip(args.grad, c, r))]
    }))
}
