//! The sequence model: linear encoder, one scalar diagonal state-space
//! convolution per hidden channel (plus a direct feedthrough), a sigmoid-gated
//! activation, inverted dropout and a linear decoder applied per time step.
//!
//! The forward pass checks every stage for non-finite values and aborts with
//! the first offending stage named, so numeric blow-ups surface where they
//! happen rather than as a NaN loss much later.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernelgen::{discretize_zoh, sigmoid, KernelSpec, KernelVariant};
use crate::parallel;
use crate::seqconv::{batched_conv, ConvMode, ConvPlan};
use crate::types::{Cplx, DiagonalSSMParams, Kernel, SequenceBatch};
use crate::{Error, Result};

/// Architecture and regularisation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Features per input time step.
    pub input_dim: usize,
    /// Hidden measurement channels, each with its own state-space kernel.
    pub measurement_dim: usize,
    /// State modes per channel.
    pub state_dim: usize,
    /// Outputs per time step.
    pub output_dim: usize,
    /// Inverted-dropout rate applied after the activation while training.
    pub dropout: f64,
    /// Fixed window length the model convolves over.
    pub seq_len: usize,
    /// Which kernel each channel materialises.
    pub kernel_variant: KernelVariant,
    /// How convolutions are evaluated (FFT unless diagnosing).
    pub conv_mode: ConvMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 4,
            measurement_dim: 128,
            state_dim: 64,
            output_dim: 1,
            dropout: 0.01,
            seq_len: 168,
            kernel_variant: KernelVariant::S4convd,
            conv_mode: ConvMode::Fft,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.measurement_dim == 0
            || self.state_dim == 0
            || self.output_dim == 0
            || self.seq_len == 0
        {
            return Err(Error::InvalidArgument(
                "model dimensions must all be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel_variant, self.seq_len, self.state_dim)
    }
}

/// All trainable parameters. The canonical flattening order (used by the
/// optimizer state and the checkpoint format) is the field order below, with
/// each channel's state-space parameters serialised as
/// `log_a_re, a_im, b.re, b.im, c.re, c.im, d, log_dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `(measurement_dim, input_dim)` row-major.
    pub encoder_weight: Vec<f64>,
    /// `(measurement_dim,)`
    pub encoder_bias: Vec<f64>,
    /// One parameter set per measurement channel.
    pub ssm: Vec<DiagonalSSMParams>,
    /// `(output_dim, measurement_dim)` row-major.
    pub decoder_weight: Vec<f64>,
    /// `(output_dim,)`
    pub decoder_bias: Vec<f64>,
}

/// Gradient containers mirror the parameter container exactly.
pub type GradientTape = ModelParams;

impl ModelParams {
    /// Zero-valued parameters with the config's shapes.
    pub fn zeros(config: &ModelConfig) -> Self {
        ModelParams {
            encoder_weight: vec![0.0; config.measurement_dim * config.input_dim],
            encoder_bias: vec![0.0; config.measurement_dim],
            ssm: (0..config.measurement_dim)
                .map(|_| DiagonalSSMParams::zeros(config.state_dim))
                .collect(),
            decoder_weight: vec![0.0; config.output_dim * config.measurement_dim],
            decoder_bias: vec![0.0; config.output_dim],
        }
    }

    /// Seeded initialisation.
    ///
    /// * decay rates start at `exp(log_a_re) = 1/2` with mode frequencies
    ///   `a_im[n] = pi * n` (modes sweep slow to fast);
    /// * per-channel step sizes are log-uniform in `[0.001, 0.1]`;
    /// * `b = 1`, `d = 1`; `c` is drawn zero-mean per channel so kernels start
    ///   without a standing offset;
    /// * encoder weights are Xavier-uniform, the decoder starts near zero so
    ///   early updates are driven by the well-conditioned bias path.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::zeros(config);

        let enc_bound = (6.0 / (config.input_dim + config.measurement_dim) as f64).sqrt();
        for w in params.encoder_weight.iter_mut() {
            *w = rng.gen_range(-enc_bound..enc_bound);
        }

        let (dt_lo, dt_hi) = (0.001f64.ln(), 0.1f64.ln());
        let c_scale = 0.5 / (config.state_dim as f64).sqrt();
        for ssm in params.ssm.iter_mut() {
            for (n, v) in ssm.log_a_re.iter_mut().enumerate() {
                *v = 0.5f64.ln();
                ssm.a_im[n] = std::f64::consts::PI * n as f64;
                ssm.b.re[n] = 1.0;
            }
            for v in ssm.c.re.iter_mut() {
                *v = c_scale * rng.gen_range(-1.0..1.0);
            }
            let mean = ssm.c.re.iter().sum::<f64>() / config.state_dim as f64;
            for v in ssm.c.re.iter_mut() {
                *v -= mean;
            }
            ssm.d = 1.0;
            ssm.log_dt = rng.gen_range(dt_lo..dt_hi);
        }

        let dec_bound = 0.05 / (config.measurement_dim as f64).sqrt();
        for w in params.decoder_weight.iter_mut() {
            *w = rng.gen_range(-dec_bound..dec_bound);
        }
        Ok(params)
    }

    pub fn measurement_dim(&self) -> usize {
        self.ssm.len()
    }

    pub fn input_dim(&self) -> usize {
        if self.encoder_bias.is_empty() {
            0
        } else {
            self.encoder_weight.len() / self.encoder_bias.len()
        }
    }

    pub fn state_dim(&self) -> usize {
        self.ssm.first().map_or(0, |s| s.state_dim())
    }

    pub fn output_dim(&self) -> usize {
        self.decoder_bias.len()
    }

    /// Shape consistency against a config.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let ok = self.encoder_weight.len() == config.measurement_dim * config.input_dim
            && self.encoder_bias.len() == config.measurement_dim
            && self.ssm.len() == config.measurement_dim
            && self.ssm.iter().all(|s| {
                s.validate().is_ok() && s.state_dim() == config.state_dim
            })
            && self.decoder_weight.len() == config.output_dim * config.measurement_dim
            && self.decoder_bias.len() == config.output_dim;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "parameters (H {}, input {}, N {}, output {}) do not fit config \
                 (H {}, input {}, N {}, output {})",
                self.measurement_dim(),
                self.input_dim(),
                self.state_dim(),
                self.output_dim(),
                config.measurement_dim,
                config.input_dim,
                config.state_dim,
                config.output_dim
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let per_channel = 6 * self.state_dim() + 2;
        self.encoder_weight.len()
            + self.encoder_bias.len()
            + self.ssm.len() * per_channel
            + self.decoder_weight.len()
            + self.decoder_bias.len()
    }

    /// Serialises every parameter in the canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend_from_slice(&self.encoder_weight);
        flat.extend_from_slice(&self.encoder_bias);
        for ssm in &self.ssm {
            flat.extend_from_slice(&ssm.log_a_re);
            flat.extend_from_slice(&ssm.a_im);
            flat.extend_from_slice(&ssm.b.re);
            flat.extend_from_slice(&ssm.b.im);
            flat.extend_from_slice(&ssm.c.re);
            flat.extend_from_slice(&ssm.c.im);
            flat.push(ssm.d);
            flat.push(ssm.log_dt);
        }
        flat.extend_from_slice(&self.decoder_weight);
        flat.extend_from_slice(&self.decoder_bias);
        flat
    }

    /// Overwrites every parameter from a flat slice in the canonical order.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector has {} values, model holds {}",
                flat.len(),
                self.param_count()
            )));
        }
        fn take(flat: &[f64], pos: &mut usize, dst: &mut [f64]) {
            dst.copy_from_slice(&flat[*pos..*pos + dst.len()]);
            *pos += dst.len();
        }
        let mut pos = 0;
        take(flat, &mut pos, &mut self.encoder_weight);
        take(flat, &mut pos, &mut self.encoder_bias);
        for ssm in self.ssm.iter_mut() {
            take(flat, &mut pos, &mut ssm.log_a_re);
            take(flat, &mut pos, &mut ssm.a_im);
            take(flat, &mut pos, &mut ssm.b.re);
            take(flat, &mut pos, &mut ssm.b.im);
            take(flat, &mut pos, &mut ssm.c.re);
            take(flat, &mut pos, &mut ssm.c.im);
            take(flat, &mut pos, std::slice::from_mut(&mut ssm.d));
            take(flat, &mut pos, std::slice::from_mut(&mut ssm.log_dt));
        }
        take(flat, &mut pos, &mut self.decoder_weight);
        take(flat, &mut pos, &mut self.decoder_bias);
        debug_assert_eq!(pos, flat.len());
        Ok(())
    }

    /// Name of the flat-index parameter, for diagnostics.
    pub fn param_name(&self, index: usize) -> String {
        let mut idx = index;
        let fields: [(&str, usize); 2] = [
            ("encoder_weight", self.encoder_weight.len()),
            ("encoder_bias", self.encoder_bias.len()),
        ];
        for (name, len) in fields {
            if idx < len {
                return format!("{name}[{idx}]");
            }
            idx -= len;
        }
        let n = self.state_dim();
        let per_channel = 6 * n + 2;
        if idx < self.ssm.len() * per_channel {
            let h = idx / per_channel;
            let mut rem = idx % per_channel;
            for (name, len) in [
                ("log_a_re", n),
                ("a_im", n),
                ("b.re", n),
                ("b.im", n),
                ("c.re", n),
                ("c.im", n),
                ("d", 1),
                ("log_dt", 1),
            ] {
                if rem < len {
                    return if len == 1 {
                        format!("ssm[{h}].{name}")
                    } else {
                        format!("ssm[{h}].{name}[{rem}]")
                    };
                }
                rem -= len;
            }
        }
        idx -= self.ssm.len() * per_channel;
        if idx < self.decoder_weight.len() {
            return format!("decoder_weight[{idx}]");
        }
        idx -= self.decoder_weight.len();
        format!("decoder_bias[{idx}]")
    }
}

/// Whether a forward pass applies dropout (and with which mask seed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Eval,
    Train { dropout_seed: u64 },
}

/// Gated activation `x * sig(1.702 x)` — a fast smooth ramp: ~0 for strongly
/// negative inputs, ~x for strongly positive ones.
pub fn gated_activation(x: f64) -> f64 {
    x * sigmoid(1.702 * x)
}

pub fn gated_activation_prime(x: f64) -> f64 {
    let s = sigmoid(1.702 * x);
    s + 1.702 * x * s * (1.0 - s)
}

/// Materialises the per-channel kernel bank `(measurement_dim, seq_len)`.
pub fn materialize_kernels(params: &ModelParams, config: &ModelConfig) -> Result<Kernel> {
    params.validate(config)?;
    let spec = config.kernel_spec()?;
    let rows: Vec<Result<Kernel>> =
        parallel::map_indexed(config.measurement_dim, |h| spec.materialize(&params.ssm[h]));
    let mut values = Vec::with_capacity(config.measurement_dim * config.seq_len);
    for row in rows {
        values.extend_from_slice(&row?.values);
    }
    Kernel::new(values, config.measurement_dim, config.seq_len)
}

/// Intermediate stage values kept for the backward pass.
pub(crate) struct ForwardCache {
    /// Encoder outputs in `(batch, channel, step)` rows.
    pub v_rows: Vec<f64>,
    /// Materialised kernel bank.
    pub kernels: Kernel,
    /// Pre-activation `conv + d*v` in `(batch, step, channel)` layout.
    pub pre_act: Vec<f64>,
    /// Post-activation, post-dropout values in `(batch, step, channel)` layout.
    pub dropped: Vec<f64>,
    /// Dropout scale per `(batch, step, channel)` (absent in eval phase).
    pub drop_scale: Option<Vec<f64>>,
}

fn find_non_finite(values: &[f64]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}

fn ensure_finite(stage: &str, values: &[f64]) -> Result<()> {
    match find_non_finite(values) {
        Some(i) => Err(Error::NonFinite(format!("{stage} (first at flat index {i})"))),
        None => Ok(()),
    }
}

/// Full forward pass returning `(batch, seq_len, output_dim)` log-space
/// outputs along with cached intermediates.
pub(crate) fn forward_cached(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &SequenceBatch,
    phase: Phase,
) -> Result<(Vec<f64>, ForwardCache)> {
    params.validate(config)?;
    if batch.len != config.seq_len || batch.features != config.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch is ({}, {}, {}), model expects (_, {}, {})",
            batch.batch, batch.len, batch.features, config.seq_len, config.input_dim
        )));
    }
    ensure_finite("input batch", &batch.data)?;

    let (bsz, len, h_dim) = (batch.batch, config.seq_len, config.measurement_dim);

    // Encoder: v[b,h,l] = We[h,:] . x[b,l,:] + be[h], written channel-row-major.
    let mut v_rows = vec![0.0; bsz * h_dim * len];
    parallel::for_each_row(&mut v_rows, len, |row, out| {
        let (b, h) = (row / h_dim, row % h_dim);
        let w = &params.encoder_weight[h * config.input_dim..(h + 1) * config.input_dim];
        for (l, slot) in out.iter_mut().enumerate() {
            let x = &batch.data[(b * len + l) * config.input_dim..];
            let mut acc = params.encoder_bias[h];
            for f in 0..config.input_dim {
                acc += w[f] * x[f];
            }
            *slot = acc;
        }
    });
    ensure_finite("encoder output", &v_rows)?;

    let kernels = materialize_kernels(params, config)?;
    ensure_finite("kernel bank", &kernels.values)?;

    let plan = ConvPlan::new(len, config.conv_mode)?;
    let conv_rows = batched_conv(&v_rows, bsz, &kernels, &plan)?;
    ensure_finite("convolution output", &conv_rows)?;

    // Skip path and activation, transposing to (batch, step, channel).
    let mut pre_act = vec![0.0; bsz * len * h_dim];
    for b in 0..bsz {
        for h in 0..h_dim {
            let row = (b * h_dim + h) * len;
            let d = params.ssm[h].d;
            for l in 0..len {
                pre_act[(b * len + l) * h_dim + h] = conv_rows[row + l] + d * v_rows[row + l];
            }
        }
    }

    let mut dropped = vec![0.0; bsz * len * h_dim];
    parallel::for_each_row(&mut dropped, h_dim, |row, out| {
        for (h, slot) in out.iter_mut().enumerate() {
            *slot = gated_activation(pre_act[row * h_dim + h]);
        }
    });
    ensure_finite("activation output", &dropped)?;

    let drop_scale = match phase {
        Phase::Train { dropout_seed } if config.dropout > 0.0 => {
            let p = config.dropout;
            let keep_scale = 1.0 / (1.0 - p);
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let scale: Vec<f64> = (0..dropped.len())
                .map(|_| if rng.gen::<f64>() >= p { keep_scale } else { 0.0 })
                .collect();
            for (v, s) in dropped.iter_mut().zip(&scale) {
                *v *= s;
            }
            Some(scale)
        }
        _ => None,
    };

    // Decoder per time step.
    let mut output = vec![0.0; bsz * len * config.output_dim];
    for bl in 0..bsz * len {
        let src = &dropped[bl * h_dim..(bl + 1) * h_dim];
        for o in 0..config.output_dim {
            let w = &params.decoder_weight[o * h_dim..(o + 1) * h_dim];
            let mut acc = params.decoder_bias[o];
            for h in 0..h_dim {
                acc += w[h] * src[h];
            }
            output[bl * config.output_dim + o] = acc;
        }
    }
    ensure_finite("decoder output", &output)?;

    Ok((
        output,
        ForwardCache {
            v_rows,
            kernels,
            pre_act,
            dropped,
            drop_scale,
        },
    ))
}

/// Forward pass; returns `(batch, seq_len, output_dim)` values in
/// `log1p` space.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &SequenceBatch,
    phase: Phase,
) -> Result<Vec<f64>> {
    forward_cached(params, config, batch, phase).map(|(out, _)| out)
}

/// Inference: maps log-space outputs back to measurement units with
/// `expm1`, clamped to be non-negative.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &SequenceBatch,
) -> Result<Vec<f64>> {
    let out = forward(params, config, batch, Phase::Eval)?;
    Ok(out.into_iter().map(|v| v.exp_m1().max(0.0)).collect())
}

/// Step-by-step recurrent evaluation of the Vandermonde-kernel model
/// (verification mode; no dropout). Walking the state recurrence must agree
/// with the convolutional forward pass.
pub fn forward_recurrent(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &SequenceBatch,
) -> Result<Vec<f64>> {
    if config.kernel_variant != KernelVariant::S4d {
        return Err(Error::InvalidArgument(
            "recurrent evaluation is defined for the s4d kernel variant".into(),
        ));
    }
    params.validate(config)?;
    if batch.len != config.seq_len || batch.features != config.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch is ({}, {}, {}), model expects (_, {}, {})",
            batch.batch, batch.len, batch.features, config.seq_len, config.input_dim
        )));
    }

    let (bsz, len, h_dim) = (batch.batch, config.seq_len, config.measurement_dim);
    let a_disc: Vec<_> = params.ssm.iter().map(discretize_zoh).collect();

    let mut output = vec![0.0; bsz * len * config.output_dim];
    for b in 0..bsz {
        let mut states = vec![Cplx::ZERO; h_dim * config.state_dim];
        for l in 0..len {
            let mut hidden = vec![0.0; h_dim];
            for (h, slot) in hidden.iter_mut().enumerate() {
                let ssm = &params.ssm[h];
                let w = &params.encoder_weight[h * config.input_dim..(h + 1) * config.input_dim];
                let mut v = params.encoder_bias[h];
                for f in 0..config.input_dim {
                    v += w[f] * batch.at(b, l, f);
                }
                let mut y = 0.0;
                for n in 0..config.state_dim {
                    let s = &mut states[h * config.state_dim + n];
                    *s = a_disc[h].at(n) * *s + ssm.b.at(n).scale(v);
                    y += (ssm.c.at(n) * *s).re;
                }
                *slot = gated_activation(y + ssm.d * v);
            }
            for o in 0..config.output_dim {
                let w = &params.decoder_weight[o * h_dim..(o + 1) * h_dim];
                let mut acc = params.decoder_bias[o];
                for h in 0..h_dim {
                    acc += w[h] * hidden[h];
                }
                output[(b * len + l) * config.output_dim + o] = acc;
            }
        }
    }
    Ok(output)
}

/// Magic bytes opening every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"S4CD1";

/// Writes `magic, input_dim, measurement_dim, state_dim, output_dim` (u32
/// little-endian) followed by every parameter as little-endian f64 in the
/// canonical order. The round trip is bit-exact.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    for dim in [
        params.input_dim(),
        params.measurement_dim(),
        params.state_dim(),
        params.output_dim(),
    ] {
        let v = u32::try_from(dim).map_err(|_| {
            Error::Checkpoint(format!("dimension {dim} does not fit the u32 header"))
        })?;
        w.write_all(&v.to_le_bytes())?;
    }
    for v in params.flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("file too short for dimension header".into()))?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let [input_dim, measurement_dim, state_dim, output_dim] = dims;
    if input_dim == 0 || measurement_dim == 0 || state_dim == 0 || output_dim == 0 {
        return Err(Error::Checkpoint(format!(
            "header declares a zero dimension: {dims:?}"
        )));
    }

    let config = ModelConfig {
        input_dim,
        measurement_dim,
        state_dim,
        output_dim,
        ..ModelConfig::default()
    };
    let mut params = ModelParams::zeros(&config);
    let count = params.param_count();
    let mut flat = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for i in 0..count {
        r.read_exact(&mut buf).map_err(|_| {
            Error::Checkpoint(format!("payload truncated at parameter {i} of {count}"))
        })?;
        flat.push(f64::from_le_bytes(buf));
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint(format!(
            "trailing bytes after {count} parameters"
        )));
    }
    params.assign_from_flat(&flat)?;
    Ok(params)
}
