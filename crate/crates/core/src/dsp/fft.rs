use num_complex::Complex64;

use super::{DspError, Result};

/// Precomputed in-place iterative radix-2 FFT of a fixed power-of-two size.
#[derive(Debug, Clone)]
pub struct Radix2Fft {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(DspError::NotPowerOfTwo(n));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        // e^{-2 pi i k / n}, evaluated directly per k to avoid recurrence drift.
        let twiddles = (0..n / 2)
            .map(|k| {
                let theta = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex64::new(theta.cos(), theta.sin())
            })
            .collect();
        Ok(Self { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform in place: `X[k] = sum_j x[j] e^{-2 pi i jk / n}`.
    pub fn process(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "buffer length must equal FFT size");
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let stride = self.n / len;
            for start in (0..self.n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// Transforms `x` zero-padded (or truncated) to `n` points.
pub fn fft(x: &[Complex64], n: usize) -> Result<Vec<Complex64>> {
    let plan = Radix2Fft::new(n)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, v) in buf.iter_mut().zip(x) {
        *b = *v;
    }
    plan.process(&mut buf);
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn impulse_and_dc() {
        let out = fft(&[c(1.0), c(0.0), c(0.0), c(0.0)], 4).unwrap();
        assert!(out.iter().all(|v| (v - c(1.0)).norm() < 1e-15));
        let out = fft(&[c(1.0); 4], 4).unwrap();
        assert!((out[0] - c(4.0)).norm() < 1e-15);
        assert!(out[1..].iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn non_power_of_two_rejected() {
        assert!(matches!(fft(&[c(1.0)], 12), Err(DspError::NotPowerOfTwo(12))));
        assert!(Radix2Fft::new(0).is_err());
    }

    #[test]
    fn size_one_is_identity() {
        assert_eq!(fft(&[c(3.5)], 1).unwrap(), vec![c(3.5)]);
    }
}
