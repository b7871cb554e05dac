use super::{Element, Result, Tensor, TensorError};

/// Binary ops accept equal shapes, or a right-hand side whose shape is a
/// suffix of the left-hand side (repeated along the leading dims).
fn broadcast_repeats(op: &'static str, a: &[usize], b: &[usize]) -> Result<usize> {
    if a == b {
        return Ok(1);
    }
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        let inner: usize = b.iter().product();
        let outer: usize = a.iter().product();
        return Ok(if inner == 0 { 0 } else { outer / inner });
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

fn reduce_repeats<T: Element>(g: &[T], inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); inner];
    for chunk in g.chunks(inner.max(1)) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += *v;
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

fn binary<T: Element>(op: Binary, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let name = match op {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
    };
    // Let the broadcast operand sit on the right for commutative ops.
    if matches!(op, Binary::Add | Binary::Mul) && a.rank() < b.rank() {
        return binary(op, b, a);
    }
    broadcast_repeats(name, a.shape(), b.shape())?;
    let inner = b.numel();
    let data: Vec<T> = {
        let (ad, bd) = (a.data(), b.data());
        ad.iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[i % inner.max(1)];
                match op {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect()
    };
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        name,
        vec![a.clone(), b.clone()],
        move |args| {
            let g = args.grad;
            let (ga, gb): (Vec<T>, Vec<T>) = match op {
                Binary::Add => (g.to_vec(), g.to_vec()),
                Binary::Sub => (g.to_vec(), g.iter().map(|&v| -v).collect()),
                Binary::Mul => {
                    let ad = args.inputs[0].data();
                    let bd = args.inputs[1].data();
                    let ga = g
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| v * bd[i % inner.max(1)])
                        .collect();
                    let gb = g.iter().zip(ad.iter()).map(|(&v, &x)| v * x).collect();
                    (ga, gb)
                }
            };
            let gb = if gb.len() == inner {
                gb
            } else {
                reduce_repeats(&gb, inner)
            };
            vec![Some(ga), Some(gb)]
        },
    ))
}

fn unary<T: Element>(
    x: &Tensor<T>,
    name: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Tensor<T> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(data, x.shape().to_vec(), name, vec![x.clone()], move |args| {
        let xd = args.inputs[0].data();
        let g = xd
            .iter()
            .zip(args.output)
            .zip(args.grad)
            .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
            .collect();
        vec![Some(g)]
    })
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Mul, self, other)
    }

    /// ReLU; the derivative at exactly zero is taken as zero.
    pub fn relu(&self) -> Tensor<T> {
        unary(
            self,
            "relu",
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(
            self,
            "sigmoid",
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            |_, s| s * (T::one() - s),
        )
    }

    pub fn ln(&self) -> Tensor<T> {
        unary(self, "log", |v| v.ln(), |x, _| T::one() / x)
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, "exp", |v| v.exp(), |_, y| y)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        unary(self, "scale", move |v| v * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum::<T>();
        let n = self.numel();
        Tensor::from_op(vec![s], Vec::new(), "sum", vec![self.clone()], move |a| {
            vec![Some(vec![a.grad[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum().scale(T::one() / T::of(n as f64))
    }

    /// Multiplies each `(n, c)` plane of an `(N, C, H, W)` tensor by `w[n, c]`.
    /// `w` may be shaped `(N, C)` or `(N, C, 1, 1)`.
    pub fn scale_channels(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ws = w.shape();
        let ok = xs.len() == 4
            && (ws == [xs[0], xs[1]] || ws == [xs[0], xs[1], 1, 1]);
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "scale_channels",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let plane = xs[2] * xs[3];
        let data: Vec<T> = {
            let (xd, wd) = (self.data(), w.data());
            xd.iter()
                .enumerate()
                .map(|(i, &v)| v * wd[i / plane.max(1)])
                .collect()
        };
        Ok(Tensor::from_op(
            data,
            xs.to_vec(),
            "scale_channels",
            vec![self.clone(), w.clone()],
            move |a| {
                let xd = a.inputs[0].data();
                let wd = a.inputs[1].data();
                let gx = a
                    .grad
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g * wd[i / plane.max(1)])
                    .collect();
                let gw = a
                    .grad
                    .chunks(plane.max(1))
                    .zip(xd.chunks(plane.max(1)))
                    .map(|(g, x)| g.iter().zip(x).map(|(&g, &x)| g * x).sum())
                    .collect();
                vec![Some(gx), Some(gw)]
            },
        ))
    }

    /// Adds `bias[c]` to every element of channel `c` of an `(N, C, H, W)` tensor.
    pub fn add_channel_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let xs = self.shape();
        if xs.len() != 4 || bias.shape() != [xs[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: xs.to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let (c, plane) = (xs[1], xs[2] * xs[3]);
        let data: Vec<T> = {
            let (xd, bd) = (self.data(), bias.data());
            xd.iter()
                .enumerate()
                .map(|(i, &v)| v + bd[(i / plane.max(1)) % c])
                .collect()
        };
        Ok(Tensor::from_op(
            data,
            xs.to_vec(),
            "add_channel_bias",
            vec![self.clone(), bias.clone()],
            move |a| {
                let mut gb = vec![T::zero(); c];
                for (i, chunk) in a.grad.chunks(plane.max(1)).enumerate() {
                    gb[i % c] += chunk.iter().copied().sum::<T>();
                }
                vec![Some(a.grad.to_vec()), Some(gb)]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_sigmoid_values() {
        let x = Tensor::<f64>::from_vec(vec![-1.0, 0.0, 2.0], &[3]).unwrap();
        assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 2.0]);
        assert_eq!(Tensor::<f64>::scalar(0.0).sigmoid().item(), 0.5);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let x = Tensor::<f64>::parameter(vec![-1.0, 0.0, 2.0], &[3]).unwrap();
        x.relu().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn suffix_broadcast_add_reduces_gradient() {
        let a = Tensor::<f64>::parameter(vec![1.0; 6], &[2, 3]).unwrap();
        let b = Tensor::<f64>::parameter(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let y = a.add(&b).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 3.0, 4.0, 2.0, 3.0, 4.0]);
        y.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        // commutative form puts the broadcast operand on the right
        assert_eq!(b.add(&a).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn non_suffix_shapes_are_rejected() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2]);
        assert!(matches!(a.add(&b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn sum_backward_gives_ones_and_reuse_accumulates() {
        let x = Tensor::<f64>::parameter(vec![0.5, -2.0, 3.0], &[3]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
        x.zero_grad();
        x.add(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
    }
}
