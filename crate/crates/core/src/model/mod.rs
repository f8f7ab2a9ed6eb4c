//! The neural core: pair encoder with segment embeddings, context encoder,
//! Gaussian latent heads, NSP head, and a latent-conditioned autoregressive
//! decoder. All towers are small transformers trained from scratch.

mod checkpoint;
mod net;
mod vocab;

pub use vocab::{Vocab, BOS, CLS, SEP, UNK};

use crate::error::{CmnError, Result};
use crate::tensor::{ParamStore, Tape};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Clamp range applied to every log-variance head output.
pub const LOGVAR_CLAMP: (f64, f64) = (-8.0, 8.0);

fn default_latent_dim() -> usize {
    32
}

fn default_num_heads() -> usize {
    4
}

/// Architecture hyper-parameters; `seed` fixes weight initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    pub hidden_dim: usize,
    #[serde(default = "default_num_heads")]
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_sequence_length: usize,
    #[serde(default)]
    pub share_encoders: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CmnError::InvalidConfig(msg));
        if self.latent_dim < 1 {
            return fail("latent_dim must be at least 1".into());
        }
        if self.hidden_dim < 1 || self.num_heads < 1 {
            return fail("hidden_dim and num_heads must be at least 1".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.encoder_layers < 1 || self.decoder_layers < 1 {
            return fail("encoder_layers and decoder_layers must be at least 1".into());
        }
        if self.max_sequence_length < 4 {
            return fail("max_sequence_length must be at least 4".into());
        }
        if self.vocab_size <= 4 {
            return fail("vocab_size must exceed the 4 reserved special tokens".into());
        }
        Ok(())
    }
}

/// Pooled pair representation plus the raw NSP logit.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub h_q: Vec<f64>,
    pub nsp_logit: f64,
}

/// Pooled context-only representation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedContext {
    pub h_p: Vec<f64>,
}

/// Diagonal-Gaussian parameters for a posterior or prior over z.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl LatentGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Which distribution a latent draw came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    PosteriorPair,
    PosteriorCandidate,
    PosteriorNegative,
    Prior,
}

/// One reparameterized latent draw.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub source: LatentSource,
}

/// Reparameterized draws z = mean + exp(0.5·log_variance) ⊙ ε.
pub fn sample_latent<R: Rng + ?Sized>(
    g: &LatentGaussian,
    source: LatentSource,
    rng: &mut R,
    n_samples: usize,
) -> Vec<LatentSample> {
    (0..n_samples)
        .map(|_| {
            let z = g
                .mean
                .iter()
                .zip(&g.log_variance)
                .map(|(&m, &lv)| {
                    let eps: f64 = StandardNormal.sample(rng);
                    m + (0.5 * lv).exp() * eps
                })
                .collect();
            LatentSample { z, source }
        })
        .collect()
}

/// Closed-form KL divergence between diagonal Gaussians, summed over
/// dimensions; non-negative up to rounding.
pub fn kl_gaussian(q: &LatentGaussian, p: &LatentGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(CmnError::DimensionMismatch {
            left: q.dim(),
            right: p.dim(),
        });
    }
    let mut total = 0.0;
    for i in 0..q.dim() {
        let (qm, qlv) = (q.mean[i], q.log_variance[i]);
        let (pm, plv) = (p.mean[i], p.log_variance[i]);
        total += (qlv - plv).exp() + (qm - pm).powi(2) * (-plv).exp() - 1.0 + plv - qlv;
    }
    let kl = 0.5 * total;
    if !kl.is_finite() {
        return Err(CmnError::NonFinite("kl divergence".into()));
    }
    Ok(kl)
}

/// The full model: two encoder towers (or one shared), latent heads, NSP
/// head, and the conditional decoder. Weights live in a [`ParamStore`].
pub struct CmnModel {
    config: ModelConfig,
    vocab: Vocab,
    store: ParamStore,
}

impl CmnModel {
    /// Initialize with seeded random weights.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(CmnError::InvalidConfig(format!(
                "vocab has {} entries but config.vocab_size is {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let store = net::init_params(&config);
        Ok(Self { config, vocab, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub(crate) fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Set every weight to zero: the decoder becomes uniform, posterior and
    /// prior collapse to the unit Gaussian, and the NSP probability is 0.5.
    /// Useful for closed-form diagnostics.
    pub fn zero_all_parameters(&mut self) {
        for id in self.store.ids().collect::<Vec<_>>() {
            self.store.value_mut(id).fill(0.0);
        }
    }

    /// Encode a (context, response) pair into the pooled representation and
    /// NSP logit.
    pub fn encode_pair(&self, context: &[String], response: &[String]) -> Result<EncodedPair> {
        let mut tape = Tape::new();
        let (h, logit) = self.pair_tower_nodes(&mut tape, context, response)?;
        let h_q = row_to_vec(tape.value(h));
        let nsp_logit = tape.scalar(logit);
        ensure_finite(&h_q, "encode_pair h_q")?;
        if !nsp_logit.is_finite() {
            return Err(CmnError::NonFinite("encode_pair nsp_logit".into()));
        }
        Ok(EncodedPair { h_q, nsp_logit })
    }

    /// Encode a context alone (context tower, or the pair tower when
    /// encoders are shared).
    pub fn encode_context(&self, context: &[String]) -> Result<EncodedContext> {
        let mut tape = Tape::new();
        let h = self.context_tower_nodes(&mut tape, context)?;
        let h_p = row_to_vec(tape.value(h));
        ensure_finite(&h_p, "encode_context h_p")?;
        Ok(EncodedContext { h_p })
    }

    /// Posterior q(z|·) parameters from a pair encoding.
    pub fn posterior_params(&self, h: &EncodedPair) -> Result<LatentGaussian> {
        self.check_hidden(h.h_q.len())?;
        let mut tape = Tape::new();
        let hn = tape.constant(vec_to_row(&h.h_q));
        let (mu, lv) = self.posterior_nodes(&mut tape, hn);
        gaussian_from_nodes(&tape, mu, lv)
    }

    /// Prior p(z|c) parameters from a context encoding.
    pub fn prior_params(&self, h: &EncodedContext) -> Result<LatentGaussian> {
        self.check_hidden(h.h_p.len())?;
        let mut tape = Tape::new();
        let hn = tape.constant(vec_to_row(&h.h_p));
        let (mu, lv) = self.prior_nodes(&mut tape, hn);
        gaussian_from_nodes(&tape, mu, lv)
    }

    /// Teacher-forced log p(target | context, z): the sum of per-token
    /// log-probabilities (≤ 0). Inputs longer than the position budget are
    /// truncated (context tail kept first, then the target shortened).
    pub fn decode_logprob(&self, context: &[String], z: &LatentSample, target: &[String]) -> Result<f64> {
        let mut tape = Tape::new();
        let node = self.decode_logprob_node(&mut tape, context, z, target)?;
        let value = tape.scalar(node);
        if !value.is_finite() {
            return Err(CmnError::NonFinite("decode_logprob".into()));
        }
        Ok(value)
    }

    /// Per-position decoder logits over the vocabulary for each target slot;
    /// row t scores target token t. Exposed for step-by-step verification.
    pub fn decode_logits(&self, context: &[String], z: &LatentSample, target: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let (logits, _) = self.decoder_logit_nodes(&mut tape, context, z, target)?;
        let m = tape.value(logits);
        Ok(m.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    fn check_hidden(&self, got: usize) -> Result<()> {
        if got != self.config.hidden_dim {
            return Err(CmnError::DimensionMismatch {
                left: got,
                right: self.config.hidden_dim,
            });
        }
        Ok(())
    }
}

fn row_to_vec(m: &Array2<f64>) -> Vec<f64> {
    m.row(0).to_vec()
}

fn vec_to_row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CmnError::NonFinite(what.into()));
    }
    Ok(())
}

fn gaussian_from_nodes(tape: &Tape, mu: crate::tensor::NodeId, lv: crate::tensor::NodeId) -> Result<LatentGaussian> {
    let g = LatentGaussian {
        mean: row_to_vec(tape.value(mu)),
        log_variance: row_to_vec(tape.value(lv)),
    };
    ensure_finite(&g.mean, "latent mean")?;
    ensure_finite(&g.log_variance, "latent log_variance")?;
    Ok(g)
}
