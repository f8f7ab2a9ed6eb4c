//! Two-regime training for the dialogue model.
//!
//! Items labeled as true continuations are trained as a conditional VAE:
//! reconstruction from the posterior latent, a KL penalty toward the prior,
//! and a next-sentence objective pushing the pair logit up. Items whose
//! response was swapped in from another conversation reconstruct the
//! *original* reference from the prior latent and push the pair logit down;
//! their KL is reported for monitoring but carries no gradient.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_nsp_batch, DialoguePair, NspBatchItem};
use crate::model::{CmnModel, ModelConfig, Vocab};
use crate::tensor::{Adam, NodeId, Tape};
use crate::{CmnError, Result};


/// Weight applied to the KL term as a function of the 1-based optimizer step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlSchedule {
    /// Full KL weight from the first step.
    #[serde(rename = "constant_1")]
    #[default]
    Constant1,
    /// Weight grows linearly and reaches 1 at `warmup_steps`, staying there.
    LinearAnneal { warmup_steps: usize },
}

impl KlSchedule {
    pub fn weight(&self, step: usize) -> f64 {
        match self {
            KlSchedule::Constant1 => 1.0,
            KlSchedule::LinearAnneal { warmup_steps } => {
                if *warmup_steps == 0 {
                    1.0
                } else {
                    (step as f64 / *warmup_steps as f64).min(1.0)
                }
            }
        }
    }
}

fn default_neg_prob() -> f64 {
    0.5
}

fn default_schedule() -> KlSchedule {
    KlSchedule::Constant1
}

fn default_mc_samples_train() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// Optimization settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability that an item's response is swapped across conversations.
    #[serde(default = "default_neg_prob")]
    pub neg_prob: f64,
    #[serde(default = "default_schedule")]
    pub kl_weight_schedule: KlSchedule,
    /// Latent draws per item when estimating the reconstruction term.
    #[serde(default = "default_mc_samples_train")]
    pub mc_samples_train: usize,
    /// Global-norm clip applied to the averaged batch gradient.
    #[serde(default)]
    pub gradient_clip_norm: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Save an intermediate checkpoint every this many steps (0 = final only).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// When false the pair-logit term is reported but not optimized.
    #[serde(default = "default_true")]
    pub include_nsp_loss: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CmnError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CmnError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(CmnError::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.neg_prob) {
            return Err(CmnError::InvalidConfig(format!(
                "neg_prob must lie in [0, 1], got {}",
                self.neg_prob
            )));
        }
        if self.mc_samples_train == 0 {
            return Err(CmnError::InvalidConfig(
                "mc_samples_train must be at least 1".into(),
            ));
        }
        if let Some(clip) = self.gradient_clip_norm {
            if !(clip.is_finite() && clip > 0.0) {
                return Err(CmnError::InvalidConfig(format!(
                    "gradient_clip_norm must be positive and finite, got {clip}"
                )));
            }
        }
        Ok(())
    }
}

/// Which loss regime an item was trained under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Positive,
    Negative,
}

/// Per-item loss terms. For positive items `total` is
/// `reconstruction + kl_weight·kl + nsp`; for negative items the KL is purely
/// diagnostic and `total` is `reconstruction + nsp`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub nsp: f64,
    pub total: f64,
    pub regime: Regime,
}

/// Knobs shared by the loss entry points.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOptions {
    pub mc_samples: usize,
    pub kl_weight: f64,
    pub include_nsp: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            mc_samples: 1,
            kl_weight: 1.0,
            include_nsp: true,
        }
    }
}

impl LossOptions {
    fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(CmnError::InvalidConfig(
                "mc_samples must be at least 1".into(),
            ));
        }
        if !self.kl_weight.is_finite() || self.kl_weight < 0.0 {
            return Err(CmnError::InvalidConfig(format!(
                "kl_weight must be non-negative and finite, got {}",
                self.kl_weight
            )));
        }
        Ok(())
    }
}

struct LossNodes {
    reconstruction: NodeId,
    kl: NodeId,
    nsp: NodeId,
    total: NodeId,
}

/// Standard-normal noise rows, one per latent draw.
fn draw_noise<R: Rng + ?Sized>(rng: &mut R, mc_samples: usize, dim: usize) -> Vec<Array2<f64>> {
    (0..mc_samples)
        .map(|_| {
            let row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            Array2::from_shape_vec((1, dim), row).expect("noise row shape")
        })
        .collect()
}

fn build_loss(
    tape: &mut Tape,
    model: &CmnModel,
    item: &NspBatchItem,
    opts: &LossOptions,
    noise: &[Array2<f64>],
) -> Result<LossNodes> {
    let (h_pair, logit) = model.pair_tower_nodes(tape, &item.context, &item.response)?;
    let (qmu, qlv) = model.posterior_nodes(tape, h_pair);
    let h_ctx = model.context_tower_nodes(tape, &item.context)?;
    let (pmu, plv) = model.prior_nodes(tape, h_ctx);
    // For negative items this node is never connected to `total`, so the
    // posterior heads receive no gradient from them.
    let kl = model.kl_node(tape, qmu, qlv, pmu, plv);

    let (src_mu, src_lv) = if item.is_positive() {
        (qmu, qlv)
    } else {
        (pmu, plv)
    };
    let mut acc: Option<NodeId> = None;
    for eps in noise {
        let z = model.sample_node(tape, src_mu, src_lv, eps);
        let lp = model.decode_logprob_node_from_znode(tape, &item.context, z, &item.decoder_target)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, lp),
            None => lp,
        });
    }
    let summed = acc.expect("at least one latent draw");
    let reconstruction = tape.scale(summed, -1.0 / noise.len() as f64);

    let nsp = if item.is_positive() {
        let neg_logit = tape.scale(logit, -1.0);
        tape.softplus(neg_logit)
    } else {
        tape.softplus(logit)
    };

    let base = if item.is_positive() {
        let weighted_kl = tape.scale(kl, opts.kl_weight);
        tape.add(reconstruction, weighted_kl)
    } else {
        reconstruction
    };
    let total = if opts.include_nsp {
        tape.add(base, nsp)
    } else {
        base
    };

    Ok(LossNodes {
        reconstruction,
        kl,
        nsp,
        total,
    })
}

fn read_breakdown(tape: &Tape, nodes: &LossNodes, item: &NspBatchItem) -> Result<LossBreakdown> {
    let breakdown = LossBreakdown {
        reconstruction: tape.scalar(nodes.reconstruction),
        kl: tape.scalar(nodes.kl),
        nsp: tape.scalar(nodes.nsp),
        total: tape.scalar(nodes.total),
        regime: if item.is_positive() {
            Regime::Positive
        } else {
            Regime::Negative
        },
    };
    if !(breakdown.reconstruction.is_finite()
        && breakdown.kl.is_finite()
        && breakdown.nsp.is_finite()
        && breakdown.total.is_finite())
    {
        return Err(CmnError::NonFinite(format!(
            "loss for pair {}",
            item.pair_id
        )));
    }
    Ok(breakdown)
}

/// Loss for an item whose response really follows its context.
pub fn loss_positive<R: Rng + ?Sized>(
    item: &NspBatchItem,
    model: &CmnModel,
    opts: &LossOptions,
    rng: &mut R,
) -> Result<LossBreakdown> {
    if !item.is_positive() {
        return Err(CmnError::RegimeMismatch {
            expected: 1,
            got: item.nsp_label,
        });
    }
    item_loss(item, model, opts, rng)
}

/// Loss for an item whose response was swapped in from another conversation.
pub fn loss_negative<R: Rng + ?Sized>(
    item: &NspBatchItem,
    model: &CmnModel,
    opts: &LossOptions,
    rng: &mut R,
) -> Result<LossBreakdown> {
    if item.is_positive() {
        return Err(CmnError::RegimeMismatch {
            expected: 0,
            got: item.nsp_label,
        });
    }
    item_loss(item, model, opts, rng)
}

/// Loss for an item, dispatching on its label.
pub fn item_loss<R: Rng + ?Sized>(
    item: &NspBatchItem,
    model: &CmnModel,
    opts: &LossOptions,
    rng: &mut R,
) -> Result<LossBreakdown> {
    opts.validate()?;
    let noise = draw_noise(rng, opts.mc_samples, model.config().latent_dim);
    loss_with_noise(model, item, opts, &noise)
}

/// Loss under explicitly supplied latent noise (one row per draw).
pub fn loss_with_noise(
    model: &CmnModel,
    item: &NspBatchItem,
    opts: &LossOptions,
    noise: &[Array2<f64>],
) -> Result<LossBreakdown> {
    opts.validate()?;
    let mut tape = Tape::new();
    let nodes = build_loss(&mut tape, model, item, opts, noise)?;
    read_breakdown(&tape, &nodes, item)
}

/// Computes the item loss, backpropagates it, and adds parameter gradients to
/// whatever is already accumulated in the model's store.
pub fn accumulate_loss_gradients(
    model: &mut CmnModel,
    item: &NspBatchItem,
    opts: &LossOptions,
    noise: &[Array2<f64>],
) -> Result<LossBreakdown> {
    opts.validate()?;
    let mut tape = Tape::new();
    let nodes = build_loss(&mut tape, model, item, opts, noise)?;
    let breakdown = read_breakdown(&tape, &nodes, item)?;
    tape.backward(nodes.total, model.store_mut());
    Ok(breakdown)
}

/// Worst relative disagreement between the analytic gradient of the item loss
/// and a central finite difference, across every parameter scalar. Noise is
/// frozen from `noise_seed` so both sides see the same stochastic objective.
pub fn gradient_check(
    model: &mut CmnModel,
    item: &NspBatchItem,
    opts: &LossOptions,
    noise_seed: u64,
    step: f64,
) -> Result<f64> {
    let noise = {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        draw_noise(&mut rng, opts.mc_samples, model.config().latent_dim)
    };
    model.store_mut().zero_grads();
    accumulate_loss_gradients(model, item, opts, &noise)?;

    let ids: Vec<_> = model.store().ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = model.store().grad(id).clone();
        let (rows, cols) = analytic.dim();
        for i in 0..rows {
            for j in 0..cols {
                let original = model.store().value(id)[(i, j)];
                model.store_mut().value_mut(id)[(i, j)] = original + step;
                let plus = loss_with_noise(model, item, opts, &noise)?.total;
                model.store_mut().value_mut(id)[(i, j)] = original - step;
                let minus = loss_with_noise(model, item, opts, &noise)?.total;
                model.store_mut().value_mut(id)[(i, j)] = original;
                let numeric = (plus - minus) / (2.0 * step);
                let a = analytic[(i, j)];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

/// How many items of each regime contributed to a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeCounts {
    pub positive: usize,
    pub negative: usize,
}

/// One line of the training log: batch-averaged loss terms for a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub regime_counts: RegimeCounts,
    pub reconstruction: f64,
    pub kl: f64,
    pub nsp: f64,
    pub total: f64,
    pub lr: f64,
}

/// Artifacts produced by [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub steps: usize,
    /// Batch-averaged total loss of the final step.
    pub final_total: f64,
}

/// Trains a model on `corpus` and writes `model.ckpt` plus a JSONL step log
/// under `output_dir`.
///
/// `model_config.vocab_size` acts as a cap: the vocabulary is built from the
/// corpus and the effective model size is the number of entries actually
/// kept, never more than the cap.
pub fn train(
    corpus: &[DialoguePair],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    output_dir: &Path,
) -> Result<(CmnModel, TrainOutcome)> {
    train_config.validate()?;
    let conversations: BTreeSet<&str> = corpus
        .iter()
        .map(|p| p.conversation_id.as_str())
        .collect();
    if conversations.len() < 2 {
        return Err(CmnError::SingleConversation(conversations.len()));
    }

    let vocab = Vocab::from_pairs(corpus, Some(model_config.vocab_size))?;
    let mut config = model_config.clone();
    config.vocab_size = vocab.len();
    let mut model = CmnModel::new(config, vocab)?;

    std::fs::create_dir_all(output_dir)?;
    let log_path = output_dir.join("training_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);

    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut optimizer = Adam::new(model.store(), train_config.learning_rate);
    let mut step = 0usize;
    let mut final_total = f64::NAN;

    for _epoch in 0..train_config.epochs {
        let mut shuffled = corpus.to_vec();
        shuffled.shuffle(&mut rng);
        let items = make_nsp_batch(&shuffled, train_config.neg_prob, &mut rng)?;

        for chunk in items.chunks(train_config.batch_size) {
            step += 1;
            let opts = LossOptions {
                mc_samples: train_config.mc_samples_train,
                kl_weight: train_config.kl_weight_schedule.weight(step),
                include_nsp: train_config.include_nsp_loss,
            };

            model.store_mut().zero_grads();
            let mut counts = RegimeCounts::default();
            let mut sums = [0.0f64; 4];
            for item in chunk {
                let noise = draw_noise(&mut rng, opts.mc_samples, model.config().latent_dim);
                let breakdown = accumulate_loss_gradients(&mut model, item, &opts, &noise)
                    .map_err(|e| match e {
                        CmnError::NonFinite(details) => CmnError::NonFiniteLoss { step, details },
                        other => other,
                    })?;
                match breakdown.regime {
                    Regime::Positive => counts.positive += 1,
                    Regime::Negative => counts.negative += 1,
                }
                sums[0] += breakdown.reconstruction;
                sums[1] += breakdown.kl;
                sums[2] += breakdown.nsp;
                sums[3] += breakdown.total;
            }

            let inv = 1.0 / chunk.len() as f64;
            model.store_mut().scale_grads(inv);
            if let Some(max_norm) = train_config.gradient_clip_norm {
                model.store_mut().clip_grad_norm(max_norm);
            }
            optimizer.step(model.store_mut());
            if model.store().any_non_finite() {
                return Err(CmnError::NonFiniteLoss {
                    step,
                    details: "parameters or gradients diverged".into(),
                });
            }

            let record = StepRecord {
                step,
                regime_counts: counts,
                reconstruction: sums[0] * inv,
                kl: sums[1] * inv,
                nsp: sums[2] * inv,
                total: sums[3] * inv,
                lr: train_config.learning_rate,
            };
            serde_json::to_writer(&mut log, &record)?;
            log.write_all(b"\n")?;
            final_total = record.total;

            if train_config.checkpoint_every > 0 && step % train_config.checkpoint_every == 0 {
                model.save(output_dir.join(format!("model-step{step:06}.ckpt")))?;
            }
        }
    }
    log.flush()?;

    let checkpoint_path = output_dir.join("model.ckpt");
    model.save(&checkpoint_path)?;
    let outcome = TrainOutcome {
        checkpoint_path,
        log_path,
        steps: step,
        final_total,
    };
    Ok((model, outcome))
}

/// Fraction of items whose pair logit lands on the correct side of zero.
pub fn nsp_accuracy(model: &CmnModel, items: &[NspBatchItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(CmnError::TooFewObservations {
            needed: 1,
            found: 0,
        });
    }
    let mut correct = 0usize;
    for item in items {
        let encoded = model.encode_pair(&item.context, &item.response)?;
        if (encoded.nsp_logit >= 0.0) == item.is_positive() {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}
