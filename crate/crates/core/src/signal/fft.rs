//! Iterative radix-2 FFT with a direct-DFT fallback for other lengths.

use num_complex::Complex64;
use std::f64::consts::PI;

/// Precomputed transform for one length.
#[derive(Clone, Debug)]
pub struct Dft {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Dft {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "DFT length must be positive");
        // Twiddles are evaluated directly per index; a recurrence would drift.
        let twiddles = (0..n)
            .map(|k| {
                let ang = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(ang.cos(), ang.sin())
            })
            .collect();
        let bitrev = if n.is_power_of_two() {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
                .collect()
        } else {
            Vec::new()
        };
        Self { n, twiddles, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_radix2(&self) -> bool {
        self.n.is_power_of_two()
    }

    /// Forward transform in place: `X[k] = Σ x[t] e^{-2πi kt/n}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n);
        if self.is_radix2() {
            self.radix2(buf);
        } else {
            let out = self.direct(buf);
            buf.copy_from_slice(&out);
        }
    }

    fn radix2(&self, buf: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for j in 0..half {
                    let w = self.twiddles[j * step];
                    let a = buf[start + j];
                    let b = buf[start + j + half] * w;
                    buf[start + j] = a + b;
                    buf[start + j + half] = a - b;
                }
            }
            len <<= 1;
        }
    }

    fn direct(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| v * self.twiddles[(k * t) % n])
                    .sum()
            })
            .collect()
    }
}

/// Plain O(n²) DFT of a real sequence, one-sided (`n/2 + 1` bins).
pub fn direct_real_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| {
                    let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                    Complex64::new(v * ang.cos(), v * ang.sin())
                })
                .sum()
        })
        .collect()
}
