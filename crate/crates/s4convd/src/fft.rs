//! Iterative radix-2 FFT on split real/imaginary planes.
//!
//! Kept in-repo (rather than pulling in an FFT crate) so the convolution
//! path and its gradient share one small, auditable transform whose
//! operation order is fixed — results are bit-identical run to run.

use crate::{Error, Result};

/// A transform plan for a fixed power-of-two size: precomputed twiddle
/// factors plus scratch-free in-place butterflies.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    /// `e^{-2*pi*i*k/n}` for `k` in `0..n/2`, split into planes.
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
}

impl Fft {
    /// Builds a plan for size `n`, which must be a power of two (1 is fine).
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "FFT size must be a power of two, got {n}"
            )));
        }
        let half = n / 2;
        let mut tw_re = Vec::with_capacity(half);
        let mut tw_im = Vec::with_capacity(half);
        for k in 0..half {
            let angle = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
            tw_re.push(angle.cos());
            tw_im.push(angle.sin());
        }
        Ok(Fft { n, tw_re, tw_im })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place forward DFT: `X_k = sum_j x_j e^{-2 pi i jk / n}`.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) -> Result<()> {
        self.check_planes(re, im)?;
        self.transform(re, im, false);
        Ok(())
    }

    /// In-place inverse DFT, including the `1/n` normalisation, so
    /// `inverse(forward(x)) == x` up to rounding.
    pub fn inverse(&self, re: &mut [f64], im: &mut [f64]) -> Result<()> {
        self.check_planes(re, im)?;
        self.transform(re, im, true);
        let scale = 1.0 / self.n as f64;
        for v in re.iter_mut() {
            *v *= scale;
        }
        for v in im.iter_mut() {
            *v *= scale;
        }
        Ok(())
    }

    fn check_planes(&self, re: &[f64], im: &[f64]) -> Result<()> {
        if re.len() != self.n || im.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "FFT planned for {} points, got planes of {} and {}",
                self.n,
                re.len(),
                im.len()
            )));
        }
        Ok(())
    }

    fn transform(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.n;
        if n == 1 {
            return;
        }

        // Bit-reversal permutation.
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }

        // Butterflies, doubling the span each stage. Inverse runs with
        // conjugated twiddles; normalisation happens in `inverse()`.
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for j in 0..half {
                    let wr = self.tw_re[j * stride];
                    let wi = if inverse {
                        -self.tw_im[j * stride]
                    } else {
                        self.tw_im[j * stride]
                    };
                    let a = start + j;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len *= 2;
        }
    }
}
