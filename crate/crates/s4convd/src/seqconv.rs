//! Causal convolution of batched sequences with per-channel kernels.
//!
//! The fast path zero-pads both operands to the next power of two at or
//! above twice the sequence length (so linear convolution never wraps),
//! multiplies spectra and inverse-transforms. A direct `O(L^2)` mode computes
//! the same sums term by term and serves as the reference implementation.
//!
//! Gradients flow back through the convolution as cross-correlations, reusing
//! the same transform machinery via conjugated spectra.

use std::fmt;
use std::str::FromStr;

use crate::fft::Fft;
use crate::parallel;
use crate::types::Kernel;
use crate::{Error, Result};

/// How a [`ConvPlan`] evaluates convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvMode {
    /// Spectral evaluation on zero-padded buffers.
    #[default]
    Fft,
    /// Direct summation, `O(L^2)`; the correctness reference.
    Direct,
}

impl FromStr for ConvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fft" => Ok(ConvMode::Fft),
            "direct" => Ok(ConvMode::Direct),
            other => Err(Error::InvalidArgument(format!(
                "unknown convolution mode {other:?} (expected \"fft\" or \"direct\")"
            ))),
        }
    }
}

impl fmt::Display for ConvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvMode::Fft => write!(f, "fft"),
            ConvMode::Direct => write!(f, "direct"),
        }
    }
}

/// Precomputed strategy for convolving length-`seq_len` sequences.
#[derive(Debug, Clone)]
pub struct ConvPlan {
    pub seq_len: usize,
    /// Transform size: the smallest power of two `>= 2 * seq_len`.
    pub fft_length: usize,
    pub mode: ConvMode,
    fft: Option<Fft>,
}

impl ConvPlan {
    pub fn new(seq_len: usize, mode: ConvMode) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::InvalidArgument(
                "convolution plan needs seq_len >= 1".into(),
            ));
        }
        let fft_length = (2 * seq_len).next_power_of_two();
        let fft = match mode {
            ConvMode::Fft => Some(Fft::new(fft_length)?),
            ConvMode::Direct => None,
        };
        Ok(ConvPlan {
            seq_len,
            fft_length,
            mode,
            fft,
        })
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.seq_len {
            return Err(Error::ShapeMismatch(format!(
                "{what} has {len} entries, plan expects {}",
                self.seq_len
            )));
        }
        Ok(())
    }

    /// Forward transform of a real signal zero-padded to `fft_length`.
    fn spectrum(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let fft = self.fft.as_ref().expect("spectrum() requires FFT mode");
        let mut re = vec![0.0; self.fft_length];
        let mut im = vec![0.0; self.fft_length];
        re[..x.len()].copy_from_slice(x);
        fft.forward(&mut re, &mut im).expect("planned size");
        (re, im)
    }

    /// Inverse-transforms `a * b` (or `a * conj(b)`) and returns the first
    /// `seq_len` samples of the real plane.
    fn product_time_domain(
        &self,
        a: &(Vec<f64>, Vec<f64>),
        b: &(Vec<f64>, Vec<f64>),
        conjugate_b: bool,
    ) -> Vec<f64> {
        let fft = self.fft.as_ref().expect("requires FFT mode");
        let n = self.fft_length;
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        let sign = if conjugate_b { -1.0 } else { 1.0 };
        for k in 0..n {
            let (ar, ai) = (a.0[k], a.1[k]);
            let (br, bi) = (b.0[k], sign * b.1[k]);
            re[k] = ar * br - ai * bi;
            im[k] = ar * bi + ai * br;
        }
        fft.inverse(&mut re, &mut im).expect("planned size");
        re.truncate(self.seq_len);
        re
    }
}

/// Causal convolution `y_l = sum_{m<=l} k_m u_{l-m}` of two length-`seq_len`
/// sequences.
pub fn causal_conv(u: &[f64], k: &[f64], plan: &ConvPlan) -> Result<Vec<f64>> {
    plan.check_len("input", u.len())?;
    plan.check_len("kernel", k.len())?;
    match plan.mode {
        ConvMode::Direct => Ok(causal_conv_direct(u, k)),
        ConvMode::Fft => {
            let su = plan.spectrum(u);
            let sk = plan.spectrum(k);
            Ok(plan.product_time_domain(&su, &sk, false))
        }
    }
}

fn causal_conv_direct(u: &[f64], k: &[f64]) -> Vec<f64> {
    let len = u.len();
    let mut y = vec![0.0; len];
    for (l, slot) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for m in 0..=l {
            acc += k[m] * u[l - m];
        }
        *slot = acc;
    }
    y
}

/// Cross-correlation `r_m = sum_j a_{j+m} b_j` at non-negative lags,
/// truncated to `seq_len`. This is the adjoint of causal convolution.
fn correlate_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = a.len();
    let mut r = vec![0.0; len];
    for (m, slot) in r.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..len - m {
            acc += a[j + m] * b[j];
        }
        *slot = acc;
    }
    r
}

/// Gradients of a scalar objective through [`causal_conv`]: given `dy`
/// (objective gradient per output sample), returns `(du, dk)`.
///
/// Both are cross-correlations with `dy` and are evaluated with the same
/// plan mode as the forward pass.
pub fn causal_conv_grads(
    u: &[f64],
    k: &[f64],
    dy: &[f64],
    plan: &ConvPlan,
) -> Result<(Vec<f64>, Vec<f64>)> {
    plan.check_len("input", u.len())?;
    plan.check_len("kernel", k.len())?;
    plan.check_len("output gradient", dy.len())?;
    match plan.mode {
        ConvMode::Direct => Ok((correlate_direct(dy, k), correlate_direct(dy, u))),
        ConvMode::Fft => {
            let sdy = plan.spectrum(dy);
            let sk = plan.spectrum(k);
            let su = plan.spectrum(u);
            let du = plan.product_time_domain(&sdy, &sk, true);
            let dk = plan.product_time_domain(&sdy, &su, true);
            Ok((du, dk))
        }
    }
}

fn check_batch_shape(data_len: usize, batch: usize, kernels: &Kernel, plan: &ConvPlan) -> Result<()> {
    if kernels.len != plan.seq_len {
        return Err(Error::ShapeMismatch(format!(
            "kernels have {} taps, plan expects {}",
            kernels.len, plan.seq_len
        )));
    }
    let expected = batch * kernels.channels * plan.seq_len;
    if data_len != expected {
        return Err(Error::ShapeMismatch(format!(
            "batched convolution input has {data_len} values, expected {expected} \
             ({batch} x {} x {})",
            kernels.channels, plan.seq_len
        )));
    }
    Ok(())
}

/// Convolves every `(batch, channel)` row of `data` — laid out row-major as
/// `(batch, channels, seq_len)` — with that channel's kernel. Kernel spectra
/// are computed once per channel; rows then run independently (in parallel
/// when the `parallel` feature is active) and write disjoint outputs, so the
/// result is bit-identical however the rows are scheduled.
pub fn batched_conv(
    data: &[f64],
    batch: usize,
    kernels: &Kernel,
    plan: &ConvPlan,
) -> Result<Vec<f64>> {
    check_batch_shape(data.len(), batch, kernels, plan)?;
    let channels = kernels.channels;
    let len = plan.seq_len;
    let mut out = vec![0.0; data.len()];

    match plan.mode {
        ConvMode::Direct => {
            parallel::for_each_row(&mut out, len, |row, y| {
                let h = row % channels;
                let u = &data[row * len..(row + 1) * len];
                y.copy_from_slice(&causal_conv_direct(u, kernels.row(h)));
            });
        }
        ConvMode::Fft => {
            let spectra = parallel::map_indexed(channels, |h| plan.spectrum(kernels.row(h)));
            parallel::for_each_row(&mut out, len, |row, y| {
                let h = row % channels;
                let u = &data[row * len..(row + 1) * len];
                let su = plan.spectrum(u);
                y.copy_from_slice(&plan.product_time_domain(&su, &spectra[h], false));
            });
        }
    }
    Ok(out)
}

/// Gradients through [`batched_conv`].
pub struct BatchedConvGrads {
    /// Gradient w.r.t. the input rows, same `(batch, channels, seq_len)` layout.
    pub d_inputs: Vec<f64>,
    /// Gradient w.r.t. the kernels, accumulated over the batch in ascending
    /// batch order per channel.
    pub d_kernels: Kernel,
}

pub fn batched_conv_grads(
    data: &[f64],
    batch: usize,
    kernels: &Kernel,
    d_outputs: &[f64],
    plan: &ConvPlan,
) -> Result<BatchedConvGrads> {
    check_batch_shape(data.len(), batch, kernels, plan)?;
    if d_outputs.len() != data.len() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient has {} values, expected {}",
            d_outputs.len(),
            data.len()
        )));
    }
    let channels = kernels.channels;
    let len = plan.seq_len;

    // One task per channel: walks its batch rows in ascending order so the
    // kernel-gradient accumulation order is fixed, and returns the input
    // gradients for its rows (scattered into layout afterwards).
    let per_channel: Vec<(Vec<f64>, Vec<f64>)> = parallel::map_indexed(channels, |h| {
        let mut dk_row = vec![0.0; len];
        let mut du_rows = vec![0.0; batch * len];
        let spec_k = match plan.mode {
            ConvMode::Fft => Some(plan.spectrum(kernels.row(h))),
            ConvMode::Direct => None,
        };
        for b in 0..batch {
            let row = b * channels + h;
            let u = &data[row * len..(row + 1) * len];
            let dy = &d_outputs[row * len..(row + 1) * len];
            let (du, dk) = match plan.mode {
                ConvMode::Direct => (correlate_direct(dy, kernels.row(h)), correlate_direct(dy, u)),
                ConvMode::Fft => {
                    let sdy = plan.spectrum(dy);
                    let su = plan.spectrum(u);
                    let du = plan.product_time_domain(&sdy, spec_k.as_ref().unwrap(), true);
                    let dk = plan.product_time_domain(&sdy, &su, true);
                    (du, dk)
                }
            };
            du_rows[b * len..(b + 1) * len].copy_from_slice(&du);
            for (acc, g) in dk_row.iter_mut().zip(&dk) {
                *acc += g;
            }
        }
        (dk_row, du_rows)
    });

    let mut d_inputs = vec![0.0; data.len()];
    let mut dk_values = vec![0.0; channels * len];
    for (h, (dk_row, du_rows)) in per_channel.into_iter().enumerate() {
        dk_values[h * len..(h + 1) * len].copy_from_slice(&dk_row);
        for b in 0..batch {
            let row = b * channels + h;
            d_inputs[row * len..(row + 1) * len]
                .copy_from_slice(&du_rows[b * len..(b + 1) * len]);
        }
    }
    Ok(BatchedConvGrads {
        d_inputs,
        d_kernels: Kernel::new(dk_values, channels, len)?,
    })
}
