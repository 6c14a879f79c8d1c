//! Materialisation of convolution kernels from diagonal state-space
//! parameters.
//!
//! Two interchangeable kernels are provided:
//!
//! * [`s4d_kernel`] — the classic Vandermonde form
//!   `K_l = Re(sum_n c_n * a_n^l * b_n)` of an already-discretised diagonal
//!   system (callers apply zero-order-hold `a = exp(dt * A)` themselves, so
//!   this path stays discretisation-agnostic).
//! * [`s4convd_kernel`] — the adaptive variant: the decaying mode responses
//!   `z_{n,l} = exp(l * dt * A_n) * b_n` are squashed through independent
//!   sigmoid gates on the real and imaginary planes before the output
//!   projection, `K_l = Re(sum_n c_n * (sig(Re z) + i sig(Im z)))`.
//!
//! [`ssm_recurrence_impulse`] unrolls the state recurrence step by step and
//! serves as the independent reference for the Vandermonde fast path.
//!
//! Both kernels come with hand-derived reverse-mode gradients
//! ([`s4d_kernel_grad`], [`s4convd_kernel_grad`]); mode contributions are
//! always accumulated in ascending mode order so results do not depend on
//! scheduling.

use std::fmt;
use std::str::FromStr;

use crate::types::{complex_exp, materialize_a, Cplx, ComplexVec, DiagonalSSMParams, Kernel};
use crate::{Error, Result};

/// Which kernel a model channel materialises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelVariant {
    /// Vandermonde kernel of the zero-order-hold discretised system.
    S4d,
    /// Sigmoid-gated adaptive kernel.
    #[default]
    S4convd,
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelVariant::S4d => write!(f, "s4d"),
            KernelVariant::S4convd => write!(f, "s4convd"),
        }
    }
}

impl FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s4d" => Ok(KernelVariant::S4d),
            "s4convd" => Ok(KernelVariant::S4convd),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel variant {other:?} (expected \"s4d\" or \"s4convd\")"
            ))),
        }
    }
}

/// Shape and flavour of a kernel to materialise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSpec {
    pub variant: KernelVariant,
    /// Number of taps (the sequence length it will convolve).
    pub len: usize,
    /// Number of state modes per channel.
    pub state_dim: usize,
}

impl KernelSpec {
    pub fn new(variant: KernelVariant, len: usize, state_dim: usize) -> Result<Self> {
        if len == 0 || state_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel spec needs len >= 1 and state_dim >= 1, got len {len}, state_dim {state_dim}"
            )));
        }
        Ok(KernelSpec {
            variant,
            len,
            state_dim,
        })
    }

    /// Materialises a single-channel kernel from `params` according to the
    /// variant. For the Vandermonde variant the zero-order-hold
    /// discretisation `a = exp(dt * A)` is applied here.
    pub fn materialize(&self, params: &DiagonalSSMParams) -> Result<Kernel> {
        params.validate()?;
        if params.state_dim() != self.state_dim {
            return Err(Error::ShapeMismatch(format!(
                "kernel spec expects {} modes, parameters have {}",
                self.state_dim,
                params.state_dim()
            )));
        }
        match self.variant {
            KernelVariant::S4d => {
                let a_disc = discretize_zoh(params);
                s4d_kernel(&a_disc, &params.b, &params.c, self.len)
            }
            KernelVariant::S4convd => s4convd_kernel(params, self.len),
        }
    }
}

/// Zero-order-hold discretisation of the diagonal state matrix:
/// `a_n = exp(exp(log_dt) * A_n)` with `A` from [`materialize_a`].
pub fn discretize_zoh(params: &DiagonalSSMParams) -> ComplexVec {
    let dt = params.log_dt.exp();
    materialize_a(params)
        .iter()
        .map(|a| complex_exp(a.scale(dt)))
        .collect()
}

/// Numerically stable logistic sigmoid `1 / (1 + e^{-x})`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of [`sigmoid`]: `sig(x) * (1 - sig(x))`.
pub fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

pub(crate) fn check_mode_shapes(
    a: &ComplexVec,
    b: &ComplexVec,
    c: &ComplexVec,
    len: usize,
) -> Result<usize> {
    let n = a.len();
    if b.len() != n || c.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "mode vectors disagree: a {}, b {}, c {}",
            n,
            b.len(),
            c.len()
        )));
    }
    if n == 0 || len == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel needs at least one mode and one tap, got {n} modes, {len} taps"
        )));
    }
    Ok(n)
}

/// Vandermonde kernel of a discrete diagonal system:
/// `K_l = Re(sum_n c_n * a_n^l * b_n)` for `l` in `0..len`, built by explicit
/// materialisation with running powers (`a^0 = 1` even when `a = 0`).
///
/// Modes with `|a_n| > 1` are accepted but logged, since the resulting
/// kernel grows without bound.
pub fn s4d_kernel(a: &ComplexVec, b: &ComplexVec, c: &ComplexVec, len: usize) -> Result<Kernel> {
    let n_modes = check_mode_shapes(a, b, c, len)?;

    let unstable = a.iter().filter(|z| z.abs() > 1.0).count();
    if unstable > 0 {
        log::warn!("{unstable} of {n_modes} modes have |a| > 1; kernel will grow with length");
    }

    let mut values = vec![0.0; len];
    for n in 0..n_modes {
        let an = a.at(n);
        let w = c.at(n) * b.at(n);
        let mut p = Cplx::ONE;
        for v in values.iter_mut() {
            *v += w.re * p.re - w.im * p.im;
            p = p * an;
        }
    }
    Kernel::new(values, 1, len)
}

/// Gradients of a scalar objective through [`s4d_kernel`], given the
/// objective's gradient `dk` with respect to each kernel tap.
///
/// Returned complex planes hold the partial derivatives with respect to the
/// corresponding real/imaginary parameter planes.
pub struct VandermondeGrads {
    pub a: ComplexVec,
    pub b: ComplexVec,
    pub c: ComplexVec,
}

pub fn s4d_kernel_grad(
    a: &ComplexVec,
    b: &ComplexVec,
    c: &ComplexVec,
    dk: &[f64],
) -> Result<VandermondeGrads> {
    let len = dk.len();
    let n_modes = check_mode_shapes(a, b, c, len)?;

    let mut ga = ComplexVec::zeros(n_modes);
    let mut gb = ComplexVec::zeros(n_modes);
    let mut gc = ComplexVec::zeros(n_modes);
    let mut powers = vec![Cplx::ZERO; len];

    for n in 0..n_modes {
        let an = a.at(n);
        let bn = b.at(n);
        let cn = c.at(n);

        let mut p = Cplx::ONE;
        for slot in powers.iter_mut() {
            *slot = p;
            p = p * an;
        }

        // K_l += Re(c * w_l) with w_l = p_l * b.
        let mut gc_n = Cplx::ZERO;
        let mut gb_n = Cplx::ZERO;
        for l in 0..len {
            let w = powers[l] * bn;
            gc_n += w.conj().scale(dk[l]);
            gb_n += (cn.conj() * powers[l].conj()).scale(dk[l]);
        }

        // Reverse sweep through p_l = p_{l-1} * a; p_0 is constant.
        let mut ga_n = Cplx::ZERO;
        let mut carry = Cplx::ZERO;
        for l in (1..len).rev() {
            let g_p = cn.conj().scale(dk[l]) * bn.conj() + carry;
            ga_n += g_p * powers[l - 1].conj();
            carry = g_p * an.conj();
        }

        ga.set(n, ga_n);
        gb.set(n, gb_n);
        gc.set(n, gc_n);
    }
    Ok(VandermondeGrads {
        a: ga,
        b: gb,
        c: gc,
    })
}

/// Sigmoid-gated adaptive kernel.
///
/// With `A` from [`materialize_a`], `dt = exp(log_dt)` and
/// `z_{n,l} = exp(l * dt * A_n) * b_n`:
///
/// `K_l = sum_n ( Re(c_n) * sig(Re z_{n,l}) - Im(c_n) * sig(Im z_{n,l}) )`
///
/// i.e. the real part of `c_n` applied to the gated response. `z_{n,0} = b_n`
/// exactly, so the first tap depends only on `b` and `c`; as `l` grows the
/// responses decay (`Re A < 0`), the gates saturate at `sig(0) = 1/2`, and
/// the taps approach `Re(sum_n c_n * (1/2 + i/2))`.
pub fn s4convd_kernel(params: &DiagonalSSMParams, len: usize) -> Result<Kernel> {
    params.validate()?;
    let n_modes = params.state_dim();
    if n_modes == 0 || len == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel needs at least one mode and one tap, got {n_modes} modes, {len} taps"
        )));
    }

    let a = materialize_a(params);
    let dt = params.log_dt.exp();
    let mut values = vec![0.0; len];

    for n in 0..n_modes {
        // exp(l * dt * A) advances by one step per tap.
        let step = complex_exp(a.at(n).scale(dt));
        let cr = params.c.re[n];
        let ci = params.c.im[n];
        let mut z = params.b.at(n);
        for v in values.iter_mut() {
            *v += cr * sigmoid(z.re) - ci * sigmoid(z.im);
            z = z * step;
        }
    }
    Kernel::new(values, 1, len)
}

/// Gradients of a scalar objective through [`s4convd_kernel`] with respect
/// to every trainable parameter, given the objective's gradient `dk` per tap.
pub struct GatedKernelGrads {
    pub log_a_re: Vec<f64>,
    pub a_im: Vec<f64>,
    pub b: ComplexVec,
    pub c: ComplexVec,
    pub log_dt: f64,
}

pub fn s4convd_kernel_grad(params: &DiagonalSSMParams, dk: &[f64]) -> Result<GatedKernelGrads> {
    params.validate()?;
    let len = dk.len();
    let n_modes = params.state_dim();
    if n_modes == 0 || len == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel gradient needs at least one mode and one tap, got {n_modes} modes, {len} taps"
        )));
    }

    let a = materialize_a(params);
    let dt = params.log_dt.exp();

    let mut g_log_a_re = vec![0.0; n_modes];
    let mut g_a_im = vec![0.0; n_modes];
    let mut gb = ComplexVec::zeros(n_modes);
    let mut gc = ComplexVec::zeros(n_modes);
    let mut g_dt = 0.0;
    let mut zs = vec![Cplx::ZERO; len];

    for n in 0..n_modes {
        let an = a.at(n);
        let step = complex_exp(an.scale(dt));
        let cr = params.c.re[n];
        let ci = params.c.im[n];

        // Forward replay, storing the mode response at every tap.
        let mut z = params.b.at(n);
        for slot in zs.iter_mut() {
            *slot = z;
            z = z * step;
        }

        // Direct gradients: tap l contributes cr*sig(z.re) - ci*sig(z.im).
        let mut gc_n = Cplx::ZERO;
        for l in 0..len {
            gc_n += Cplx::new(sigmoid(zs[l].re), -sigmoid(zs[l].im)).scale(dk[l]);
        }
        let g_z = |l: usize| {
            Cplx::new(
                dk[l] * cr * sigmoid_prime(zs[l].re),
                -dk[l] * ci * sigmoid_prime(zs[l].im),
            )
        };

        // Reverse sweep through z_l = z_{l-1} * step; z_0 = b.
        let mut g_step = Cplx::ZERO;
        let mut carry = Cplx::ZERO;
        for l in (1..len).rev() {
            let g = g_z(l) + carry;
            g_step += g * zs[l - 1].conj();
            carry = g * step.conj();
        }
        let gb_n = g_z(0) + carry;

        // step = exp(dt * A): pull the gradient back through the exponential,
        // then split between dt and the two planes of A.
        let g_dta = g_step * step.conj();
        g_dt += g_dta.re * an.re + g_dta.im * an.im;
        let g_a = g_dta.scale(dt);
        // A.re = -exp(log_a_re) so dA.re/dlog_a_re = A.re itself.
        g_log_a_re[n] = g_a.re * an.re;
        g_a_im[n] = g_a.im;

        gb.set(n, gb_n);
        gc.set(n, gc_n);
    }

    Ok(GatedKernelGrads {
        log_a_re: g_log_a_re,
        a_im: g_a_im,
        b: gb,
        c: gc,
        log_dt: g_dt * dt,
    })
}

/// Impulse response of the discrete diagonal system computed by unrolling the
/// recurrence `x_l = a .* x_{l-1} + b * u_l`, `y_l = Re(c . x_l)` with a unit
/// impulse `u = [1, 0, 0, ...]`. The state carries the impulse at `l = 0`,
/// so the first tap is `Re(c . b)`.
///
/// This is the slow, obviously-correct reference for [`s4d_kernel`].
pub fn ssm_recurrence_impulse(
    a: &ComplexVec,
    b: &ComplexVec,
    c: &ComplexVec,
    len: usize,
) -> Result<Kernel> {
    let n_modes = check_mode_shapes(a, b, c, len)?;

    let mut x = vec![Cplx::ZERO; n_modes];
    let mut values = vec![0.0; len];
    for (l, v) in values.iter_mut().enumerate() {
        let u = if l == 0 { 1.0 } else { 0.0 };
        let mut y = 0.0;
        for n in 0..n_modes {
            x[n] = a.at(n) * x[n] + b.at(n).scale(u);
            let cx = c.at(n) * x[n];
            y += cx.re;
        }
        *v = y;
    }
    Kernel::new(values, 1, len)
}
