//! Learnable deep kernel `k_φ(x, y) = k(f_φ(x), f_φ(y))`.
//!
//! `f_φ` is a recurrent encoder from `R^d` to `R^p` run over each stream's
//! concatenated prompt+response token sequence; token `t`'s embedding is the
//! hidden state after consuming it. The prompt/response point sets are split back
//! at the original boundary before the divergence is estimated. A recurrent
//! decoder `F_ψ` maps the latent sequence back to `R^d` for the reconstruction
//! penalty. One encoder/decoder pair is shared across all selected streams.

mod checkpoint;
mod gru;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use gru::{GruCell, GruShape, GruTrace};
pub use train::{
    adamw_step, clip_gradient, train_kernel, AdamState, ModelSelection, TrainConfig, TrainHistory,
};

use crate::bundle::SampleBundle;
use crate::distance::{mmd2_unbiased_grad, DistanceError, KernelSpec, PointSet};
use crate::selection::StreamKey;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeepKernelError {
    #[error("latent dimension {latent} must be positive and smaller than input dimension {input}")]
    BadDimensions { input: usize, latent: usize },

    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },

    #[error("non-finite parameter at index {0}")]
    NonFiniteParam(usize),

    #[error("sequence dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("sample {sample} is missing stream {stream}")]
    MissingStream { sample: String, stream: StreamKey },

    #[error("sample {sample}, stream {stream}: needs at least 2 prompt and 2 response tokens (got {prompt} and {response})")]
    Undersized {
        sample: String,
        stream: StreamKey,
        prompt: usize,
        response: usize,
    },

    #[error("no streams selected")]
    NoStreams,

    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),

    #[error(transparent)]
    Distance(#[from] DistanceError),

    #[error("invalid training config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite loss")]
    Diverged { epoch: usize, batch: usize },

    #[error(transparent)]
    Selection(#[from] Box<crate::selection::SelectionError>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DeepKernelError>;

/// Encoder and decoder parameters plus the base kernel they feed.
///
/// `params` holds the encoder GRU (d → p) followed by the decoder GRU (p → d),
/// each in the layout documented on [`GruCell`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeepKernelModel {
    input_dim: usize,
    latent_dim: usize,
    base: KernelSpec,
    params: Vec<f64>,
}

impl DeepKernelModel {
    fn shapes(input_dim: usize, latent_dim: usize) -> (GruShape, GruShape) {
        (
            GruShape {
                input: input_dim,
                hidden: latent_dim,
            },
            GruShape {
                input: latent_dim,
                hidden: input_dim,
            },
        )
    }

    pub fn n_params_for(input_dim: usize, latent_dim: usize) -> usize {
        let (e, d) = Self::shapes(input_dim, latent_dim);
        e.n_params() + d.n_params()
    }

    fn check_dims(input_dim: usize, latent_dim: usize) -> Result<()> {
        if latent_dim == 0 || latent_dim >= input_dim {
            return Err(DeepKernelError::BadDimensions {
                input: input_dim,
                latent: latent_dim,
            });
        }
        Ok(())
    }

    pub fn from_params(
        input_dim: usize,
        latent_dim: usize,
        base: KernelSpec,
        params: Vec<f64>,
    ) -> Result<Self> {
        Self::check_dims(input_dim, latent_dim)?;
        let base = base.validate()?;
        let expected = Self::n_params_for(input_dim, latent_dim);
        if params.len() != expected {
            return Err(DeepKernelError::ParamCount {
                expected,
                got: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(DeepKernelError::NonFiniteParam(i));
        }
        Ok(Self {
            input_dim,
            latent_dim,
            base,
            params,
        })
    }

    /// Uniform `±1/√fan_in` initialization; biases use the hidden size as fan-in.
    pub fn init(input_dim: usize, latent_dim: usize, base: KernelSpec, seed: u64) -> Result<Self> {
        Self::check_dims(input_dim, latent_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::n_params_for(input_dim, latent_dim));
        let (enc, dec) = Self::shapes(input_dim, latent_dim);
        for shape in [enc, dec] {
            let g = 3 * shape.hidden;
            let blocks = [
                (g * shape.input, shape.input),
                (g * shape.hidden, shape.hidden),
                (g, shape.hidden),
                (g, shape.hidden),
            ];
            for (count, fan_in) in blocks {
                let bound = 1.0 / (fan_in as f64).sqrt();
                params.extend((0..count).map(|_| rng.random_range(-bound..bound)));
            }
        }
        Self::from_params(input_dim, latent_dim, base, params)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn base(&self) -> KernelSpec {
        self.base
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn split(&self) -> (GruCell<'_>, GruCell<'_>) {
        let (e, d) = Self::shapes(self.input_dim, self.latent_dim);
        let (ep, dp) = self.params.split_at(e.n_params());
        (GruCell::new(e, ep), GruCell::new(d, dp))
    }

    pub fn encoder(&self) -> GruCell<'_> {
        self.split().0
    }

    pub fn decoder(&self) -> GruCell<'_> {
        self.split().1
    }

    fn check_seq(seq: &[f64], dim: usize) -> Result<()> {
        if seq.is_empty() {
            return Err(DeepKernelError::EmptySequence);
        }
        if seq.len() % dim != 0 {
            return Err(DeepKernelError::DimensionMismatch {
                expected: dim,
                got: seq.len() % dim,
            });
        }
        Ok(())
    }

    /// Encode a `T × d` row-major sequence into `T × p` hidden states.
    pub fn encode_sequence(&self, seq: &[f64]) -> Result<Vec<f64>> {
        Self::check_seq(seq, self.input_dim)?;
        Ok(self.encoder().forward(seq).hidden)
    }

    /// Decode a `T × p` latent sequence into `T × d` outputs.
    pub fn decode_sequence(&self, latent: &[f64]) -> Result<Vec<f64>> {
        Self::check_seq(latent, self.latent_dim)?;
        Ok(self.decoder().forward(latent).hidden)
    }

    /// Latent prompt/response point sets of one stream.
    pub fn embed_segments(&self, prompt: &[f64], response: &[f64]) -> Result<(PointSet, PointSet)> {
        let mut seq = Vec::with_capacity(prompt.len() + response.len());
        seq.extend_from_slice(prompt);
        seq.extend_from_slice(response);
        let latent = self.encode_sequence(&seq)?;
        let split = prompt.len() / self.input_dim * self.latent_dim;
        let (lp, lr) = latent.split_at(split);
        Ok((
            PointSet::from_flat(lp.to_vec(), self.latent_dim)?,
            PointSet::from_flat(lr.to_vec(), self.latent_dim)?,
        ))
    }
}

/// Loss terms of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub hallucination_score: f64,
    pub reconstruction: f64,
    pub loss: f64,
}

/// `y·HS − α(1−y)·HS − β·recon`, the quantity training maximizes.
pub fn combine_loss(label: u8, hs: f64, recon: f64, alpha: f64, beta: f64) -> f64 {
    let y = label as f64;
    y * hs - alpha * (1.0 - y) * hs - beta * recon
}

fn truncate(rows: Vec<f64>, dim: usize, cap: Option<usize>) -> Vec<f64> {
    match cap {
        Some(c) if rows.len() > c * dim => rows[..c * dim].to_vec(),
        _ => rows,
    }
}

pub(crate) fn stream_rows(
    sample: &SampleBundle,
    key: &StreamKey,
    max_tokens: Option<usize>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (p, r) = sample
        .segments(key)
        .ok_or_else(|| DeepKernelError::MissingStream {
            sample: sample.sample_id.clone(),
            stream: *key,
        })?;
    Ok((
        truncate(p, sample.dim, max_tokens),
        truncate(r, sample.dim, max_tokens),
    ))
}

/// Loss and (optionally) its exact gradient with respect to all model parameters.
pub fn loss_and_gradient(
    sample: &SampleBundle,
    model: &DeepKernelModel,
    cfg: &TrainConfig,
    heads: &[StreamKey],
    with_gradient: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    if heads.is_empty() {
        return Err(DeepKernelError::NoStreams);
    }
    if sample.label > 1 {
        return Err(DeepKernelError::BadLabel(sample.label));
    }
    if sample.dim != model.input_dim {
        return Err(DeepKernelError::DimensionMismatch {
            expected: model.input_dim,
            got: sample.dim,
        });
    }
    let (d, p) = (model.input_dim, model.latent_dim);
    let (encoder, decoder) = model.split();
    let n_enc = encoder.shape().n_params();

    struct Pass {
        seq: Vec<f64>,
        prompt_tokens: usize,
        enc: GruTrace,
        dec: GruTrace,
        mmd_grads: (Vec<f64>, Vec<f64>),
    }

    let mut passes = Vec::with_capacity(heads.len());
    let mut mmd_sum = 0.0;
    let mut recon_sum = 0.0;
    let mut total_tokens = 0usize;
    for key in heads {
        let (prompt, response) = stream_rows(sample, key, cfg.max_tokens)?;
        let (np, nr) = (prompt.len() / d, response.len() / d);
        if np < 2 || nr < 2 {
            return Err(DeepKernelError::Undersized {
                sample: sample.sample_id.clone(),
                stream: *key,
                prompt: np,
                response: nr,
            });
        }
        let mut seq = prompt;
        seq.extend_from_slice(&response);
        let enc = encoder.forward(&seq);
        let (lp, lr) = enc.hidden.split_at(np * p);
        let xs = PointSet::from_flat(lp.to_vec(), p)?;
        let ys = PointSet::from_flat(lr.to_vec(), p)?;
        let (mmd, gx, gy) = mmd2_unbiased_grad(&xs, &ys, &model.base)?;
        mmd_sum += mmd;

        let dec = decoder.forward(&enc.hidden);
        recon_sum += seq
            .iter()
            .zip(&dec.hidden)
            .map(|(z, out)| (z - out) * (z - out))
            .sum::<f64>();
        total_tokens += np + nr;
        passes.push(Pass {
            seq,
            prompt_tokens: np,
            enc,
            dec,
            mmd_grads: (gx, gy),
        });
    }

    let n_streams = heads.len() as f64;
    let hs = -mmd_sum / n_streams;
    let recon = recon_sum / total_tokens as f64;
    let loss = combine_loss(sample.label, hs, recon, cfg.alpha, cfg.beta);
    let breakdown = LossBreakdown {
        hallucination_score: hs,
        reconstruction: recon,
        loss,
    };
    if !with_gradient {
        return Ok((breakdown, None));
    }

    let y = sample.label as f64;
    let d_hs = y - cfg.alpha * (1.0 - y);
    let d_mmd = -d_hs / n_streams;
    let d_recon_out = -cfg.beta * 2.0 / total_tokens as f64;

    let mut grad = vec![0.0; model.params.len()];
    let (g_enc, g_dec) = grad.split_at_mut(n_enc);
    for pass in &passes {
        // ∂L/∂decoder outputs
        let d_out: Vec<f64> = pass
            .dec
            .hidden
            .iter()
            .zip(&pass.seq)
            .map(|(out, z)| d_recon_out * (out - z))
            .collect();
        let mut d_latent = decoder.backward(&pass.enc.hidden, &pass.dec, &d_out, g_dec);

        let (gx, gy) = &pass.mmd_grads;
        let split = pass.prompt_tokens * p;
        for (dl, g) in d_latent[..split].iter_mut().zip(gx) {
            *dl += d_mmd * g;
        }
        for (dl, g) in d_latent[split..].iter_mut().zip(gy) {
            *dl += d_mmd * g;
        }
        encoder.backward(&pass.seq, &pass.enc, &d_latent, g_enc);
    }
    Ok((breakdown, Some(grad)))
}

/// Scalar loss `L` of one sample (to be maximized).
pub fn loss(
    sample: &SampleBundle,
    model: &DeepKernelModel,
    cfg: &TrainConfig,
    heads: &[StreamKey],
) -> Result<LossBreakdown> {
    loss_and_gradient(sample, model, cfg, heads, false).map(|(b, _)| b)
}

/// Exact gradient of [`loss`] with respect to encoder and decoder parameters.
pub fn loss_gradient(
    sample: &SampleBundle,
    model: &DeepKernelModel,
    cfg: &TrainConfig,
    heads: &[StreamKey],
) -> Result<Vec<f64>> {
    loss_and_gradient(sample, model, cfg, heads, true).map(|(_, g)| g.expect("gradient requested"))
}
