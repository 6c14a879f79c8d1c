//! Fundamental numeric types: complex scalars/vectors stored as split
//! real/imaginary planes, the per-channel diagonal state-space parameter set,
//! and the batch/kernel containers passed between modules.

use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub};

use crate::{Error, Result};

/// A complex scalar. Used for per-mode arithmetic; bulk storage lives in
/// [`ComplexVec`] as split planes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Cplx {
    pub re: f64,
    pub im: f64,
}

impl Cplx {
    pub const ZERO: Cplx = Cplx { re: 0.0, im: 0.0 };
    pub const ONE: Cplx = Cplx { re: 1.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Cplx { re, im }
    }

    pub fn conj(self) -> Self {
        Cplx::new(self.re, -self.im)
    }

    pub fn scale(self, s: f64) -> Self {
        Cplx::new(self.re * s, self.im * s)
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Add for Cplx {
    type Output = Cplx;
    fn add(self, rhs: Cplx) -> Cplx {
        Cplx::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl Sub for Cplx {
    type Output = Cplx;
    fn sub(self, rhs: Cplx) -> Cplx {
        Cplx::new(self.re - rhs.re, self.im - rhs.im)
    }
}

impl Mul for Cplx {
    type Output = Cplx;
    fn mul(self, rhs: Cplx) -> Cplx {
        Cplx::new(
            self.re * rhs.re - self.im * rhs.im,
            self.re * rhs.im + self.im * rhs.re,
        )
    }
}

impl Neg for Cplx {
    type Output = Cplx;
    fn neg(self) -> Cplx {
        Cplx::new(-self.re, -self.im)
    }
}

impl AddAssign for Cplx {
    fn add_assign(&mut self, rhs: Cplx) {
        self.re += rhs.re;
        self.im += rhs.im;
    }
}

impl MulAssign for Cplx {
    fn mul_assign(&mut self, rhs: Cplx) {
        *self = *self * rhs;
    }
}

/// Complex exponential `e^z = e^{Re z} (cos Im z + i sin Im z)`.
pub fn complex_exp(z: Cplx) -> Cplx {
    let r = z.re.exp();
    Cplx::new(r * z.im.cos(), r * z.im.sin())
}

/// A complex vector stored as separate real and imaginary planes
/// (structure-of-arrays). The planes always have equal length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexVec {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVec {
    pub fn zeros(n: usize) -> Self {
        ComplexVec {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn from_planes(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::ShapeMismatch(format!(
                "complex planes disagree: re has {} entries, im has {}",
                re.len(),
                im.len()
            )));
        }
        Ok(ComplexVec { re, im })
    }

    pub fn len(&self) -> usize {
        debug_assert_eq!(self.re.len(), self.im.len());
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn at(&self, i: usize) -> Cplx {
        Cplx::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, i: usize, z: Cplx) {
        self.re[i] = z.re;
        self.im[i] = z.im;
    }

    pub fn push(&mut self, z: Cplx) {
        self.re.push(z.re);
        self.im.push(z.im);
    }

    pub fn iter(&self) -> impl Iterator<Item = Cplx> + '_ {
        self.re
            .iter()
            .zip(self.im.iter())
            .map(|(&re, &im)| Cplx::new(re, im))
    }
}

impl FromIterator<Cplx> for ComplexVec {
    fn from_iter<I: IntoIterator<Item = Cplx>>(iter: I) -> Self {
        let mut v = ComplexVec::default();
        for z in iter {
            v.push(z);
        }
        v
    }
}

/// Parameters of one scalar diagonal state-space channel with `N` modes.
///
/// The continuous-time state matrix is diagonal with entries
/// `A_n = -exp(log_a_re[n]) + i * a_im[n]`; storing the real part in log
/// space keeps `Re(A_n) < 0` (a stable system) for every real-valued
/// parameter setting, so gradient steps cannot leave the stable region.
/// The step size is likewise stored as `log_dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalSSMParams {
    /// Log of the decay rate per mode; `Re(A_n) = -exp(log_a_re[n])`.
    pub log_a_re: Vec<f64>,
    /// Oscillation frequency per mode; `Im(A_n) = a_im[n]`.
    pub a_im: Vec<f64>,
    /// Input projection per mode.
    pub b: ComplexVec,
    /// Output projection per mode.
    pub c: ComplexVec,
    /// Direct feedthrough (skip) coefficient.
    pub d: f64,
    /// Log of the discretisation step size.
    pub log_dt: f64,
}

impl DiagonalSSMParams {
    /// A zero-initialised parameter set with `n` modes (`A_n = -1` since
    /// `log_a_re = 0`, everything else zero).
    pub fn zeros(n: usize) -> Self {
        DiagonalSSMParams {
            log_a_re: vec![0.0; n],
            a_im: vec![0.0; n],
            b: ComplexVec::zeros(n),
            c: ComplexVec::zeros(n),
            d: 0.0,
            log_dt: 0.0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.log_a_re.len()
    }

    /// Checks the structural invariant: all per-mode vectors share one length.
    pub fn validate(&self) -> Result<()> {
        let n = self.log_a_re.len();
        if self.a_im.len() != n || self.b.len() != n || self.c.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "state-space parameter vectors disagree: log_a_re {}, a_im {}, b {}, c {}",
                n,
                self.a_im.len(),
                self.b.len(),
                self.c.len()
            )));
        }
        Ok(())
    }
}

/// Materialises the continuous-time diagonal state matrix
/// `A_n = -exp(log_a_re[n]) + i * a_im[n]`. Every entry has `Re(A_n) < 0`.
pub fn materialize_a(params: &DiagonalSSMParams) -> ComplexVec {
    params
        .log_a_re
        .iter()
        .zip(params.a_im.iter())
        .map(|(&lar, &im)| Cplx::new(-lar.exp(), im))
        .collect()
}

/// A batch of real-valued sequences, laid out row-major as
/// `(batch, len, features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub data: Vec<f64>,
    pub batch: usize,
    pub len: usize,
    pub features: usize,
    /// Optional per-step timestamps in epoch hours, one per `(batch, len)`
    /// position. Carried for provenance (prediction output); the model never
    /// reads them.
    pub timestamps: Option<Vec<f64>>,
}

impl SequenceBatch {
    pub fn new(data: Vec<f64>, batch: usize, len: usize, features: usize) -> Result<Self> {
        if len == 0 || features == 0 {
            return Err(Error::InvalidArgument(format!(
                "sequence batch needs len >= 1 and features >= 1, got len {len}, features {features}"
            )));
        }
        if data.len() != batch * len * features {
            return Err(Error::ShapeMismatch(format!(
                "sequence batch data has {} values, expected {} ({batch} x {len} x {features})",
                data.len(),
                batch * len * features
            )));
        }
        Ok(SequenceBatch {
            data,
            batch,
            len,
            features,
            timestamps: None,
        })
    }

    pub fn with_timestamps(mut self, timestamps: Vec<f64>) -> Result<Self> {
        if timestamps.len() != self.batch * self.len {
            return Err(Error::ShapeMismatch(format!(
                "timestamps have {} entries, expected {} ({} x {})",
                timestamps.len(),
                self.batch * self.len,
                self.batch,
                self.len
            )));
        }
        self.timestamps = Some(timestamps);
        Ok(self)
    }

    #[inline]
    pub fn at(&self, b: usize, l: usize, f: usize) -> f64 {
        self.data[(b * self.len + l) * self.features + f]
    }
}

/// Materialised convolution kernels, one row of `len` taps per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub values: Vec<f64>,
    pub channels: usize,
    pub len: usize,
}

impl Kernel {
    pub fn new(values: Vec<f64>, channels: usize, len: usize) -> Result<Self> {
        if values.len() != channels * len {
            return Err(Error::ShapeMismatch(format!(
                "kernel has {} values, expected {} ({channels} x {len})",
                values.len(),
                channels * len
            )));
        }
        Ok(Kernel {
            values,
            channels,
            len,
        })
    }

    #[inline]
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.len..(channel + 1) * self.len]
    }

    #[inline]
    pub fn at(&self, channel: usize, l: usize) -> f64 {
        self.values[channel * self.len + l]
    }
}
