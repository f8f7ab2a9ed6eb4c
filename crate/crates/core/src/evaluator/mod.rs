//! Scoring pipeline: contrastive mutual-information estimates between the
//! context, candidate, and reference, combined with the model's
//! next-sentence probability into a single quality score per pair.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DialoguePair;
use crate::model::{sample_latent, CmnModel, LatentGaussian, LatentSource};
use crate::tensor::sigmoid;
use crate::{CmnError, Result};


/// A reference drawn from another conversation, used as contrastive material.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeExample {
    pub pair_id: String,
    pub conversation_id: String,
    pub context: Vec<String>,
    pub response: Vec<String>,
}

/// Contrastive pool for one scored pair. Always holds at least two examples,
/// none of which share the scored pair's conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSet {
    items: Vec<NegativeExample>,
}

impl NegativeSet {
    pub fn new(items: Vec<NegativeExample>) -> Result<Self> {
        if items.len() < 2 {
            return Err(CmnError::NegativeSetTooSmall(items.len()));
        }
        Ok(Self { items })
    }

    /// Uniformly draws `n` pairs from `pool`, skipping the excluded
    /// conversation, without replacement.
    pub fn draw<R: Rng + ?Sized>(
        pool: &[DialoguePair],
        exclude_conversation: &str,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n < 2 {
            return Err(CmnError::NegativeSetTooSmall(n));
        }
        let eligible: Vec<&DialoguePair> = pool
            .iter()
            .filter(|p| p.conversation_id != exclude_conversation)
            .collect();
        if eligible.len() < n {
            return Err(CmnError::NegativeSetTooSmall(eligible.len()));
        }
        let picks = rand::seq::index::sample(rng, eligible.len(), n);
        let items = picks
            .iter()
            .map(|i| {
                let p = eligible[i];
                NegativeExample {
                    pair_id: p.pair_id.clone(),
                    conversation_id: p.conversation_id.clone(),
                    context: p.context_tokens(),
                    response: p.reference_tokens(),
                }
            })
            .collect();
        Ok(Self { items })
    }

    pub fn items(&self) -> &[NegativeExample] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Similarity between two latent draws: their dot product.
pub fn critic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CmnError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Critic value for the matched pair plus one value per contrastive example.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticScores {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

/// Contrastive lower-bound estimate from one batch of critic scores:
/// `positive + ln(M) − ln(mean(exp(negatives)))` for M negatives.
///
/// A constant critic yields exactly `ln(M)`, and shifting every score by the
/// same amount leaves the value unchanged.
pub fn info_nce(scores: &CriticScores) -> Result<f64> {
    if scores.negatives.is_empty() {
        return Err(CmnError::NegativeSetTooSmall(0));
    }
    if !scores.positive.is_finite() || scores.negatives.iter().any(|v| !v.is_finite()) {
        return Err(CmnError::NonFinite("critic scores".into()));
    }
    let m = scores.negatives.len() as f64;
    let max = scores
        .negatives
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let log_mean_exp =
        max + (scores.negatives.iter().map(|v| (v - max).exp()).sum::<f64>() / m).ln();
    let value = scores.positive + m.ln() - log_mean_exp;
    if !value.is_finite() {
        return Err(CmnError::NonFinite("contrastive bound".into()));
    }
    Ok(value)
}

/// Which pair of variables the mutual-information estimate covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiKind {
    /// Agreement between the dialogue context and the candidate.
    ContextCandidate,
    /// Agreement between the candidate and the reference response.
    CandidateReference,
}

/// Monte-Carlo contrastive estimate of the chosen mutual information.
///
/// The candidate is always represented by a posterior draw given the scored
/// context. Its matched partner comes from the reference posterior
/// (`CandidateReference`) or the context prior (`ContextCandidate`);
/// contrastive partners substitute each negative's response (respectively
/// context) into the same role.
pub fn estimate_mi<R: Rng + ?Sized>(
    kind: MiKind,
    pair: &DialoguePair,
    negatives: &NegativeSet,
    model: &CmnModel,
    rng: &mut R,
    mc_samples: usize,
) -> Result<f64> {
    if mc_samples == 0 {
        return Err(CmnError::InvalidConfig(
            "mc_samples must be at least 1".into(),
        ));
    }
    let context = pair.context_tokens();
    let candidate = pair.candidate_tokens()?;
    let q_candidate = model.posterior_params(&model.encode_pair(&context, &candidate)?)?;

    let (partner, partner_source, contrast, contrast_source) = match kind {
        MiKind::CandidateReference => {
            let reference = pair.reference_tokens();
            let q_reference = model.posterior_params(&model.encode_pair(&context, &reference)?)?;
            let q_negatives: Vec<LatentGaussian> = negatives
                .items()
                .iter()
                .map(|n| model.posterior_params(&model.encode_pair(&context, &n.response)?))
                .collect::<Result<_>>()?;
            (
                q_reference,
                LatentSource::PosteriorPair,
                q_negatives,
                LatentSource::PosteriorNegative,
            )
        }
        MiKind::ContextCandidate => {
            let p_context = model.prior_params(&model.encode_context(&context)?)?;
            let p_negatives: Vec<LatentGaussian> = negatives
                .items()
                .iter()
                .map(|n| model.prior_params(&model.encode_context(&n.context)?))
                .collect::<Result<_>>()?;
            (
                p_context,
                LatentSource::Prior,
                p_negatives,
                LatentSource::Prior,
            )
        }
    };

    let mut total = 0.0;
    for _ in 0..mc_samples {
        let z_candidate = sample_latent(&q_candidate, LatentSource::PosteriorCandidate, rng, 1)
            .pop()
            .expect("one draw");
        let z_partner = sample_latent(&partner, partner_source, rng, 1)
            .pop()
            .expect("one draw");
        let negative_scores = contrast
            .iter()
            .map(|g| {
                let z = sample_latent(g, contrast_source, rng, 1).pop().expect("one draw");
                critic(&z.z, &z_candidate.z)
            })
            .collect::<Result<Vec<f64>>>()?;
        let scores = CriticScores {
            positive: critic(&z_partner.z, &z_candidate.z)?,
            negatives: negative_scores,
        };
        total += info_nce(&scores)?;
    }
    Ok(total / mc_samples as f64)
}

/// Probability that the candidate is a true continuation of the context.
pub fn nsp_probability(pair: &DialoguePair, model: &CmnModel) -> Result<f64> {
    let context = pair.context_tokens();
    let candidate = pair.candidate_tokens()?;
    let encoded = model.encode_pair(&context, &candidate)?;
    Ok(sigmoid(encoded.nsp_logit))
}

/// All per-pair outputs of the metric, including the ablated variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub pair_id: String,
    /// Next-sentence probability of the candidate given the context.
    pub g: f64,
    /// Contrastive estimate between context and candidate.
    pub mi_context: f64,
    /// Contrastive estimate between candidate and reference.
    pub mi_reference: f64,
    /// `g · mi_context + mi_reference`.
    pub score: f64,
    /// Variant without the probability gate: `mi_context + mi_reference`.
    pub score_wo_nsp: f64,
    /// Variant without the contrastive terms: `g` alone.
    pub score_wo_mi: f64,
    pub n_negatives: usize,
    pub mc_samples: usize,
}

/// Scores one pair against an already drawn contrastive set.
pub fn score<R: Rng + ?Sized>(
    pair: &DialoguePair,
    model: &CmnModel,
    negatives: &NegativeSet,
    rng: &mut R,
    mc_samples: usize,
) -> Result<ScoreRecord> {
    let g = nsp_probability(pair, model)?;
    let mi_context = estimate_mi(
        MiKind::ContextCandidate,
        pair,
        negatives,
        model,
        rng,
        mc_samples,
    )?;
    let mi_reference = estimate_mi(
        MiKind::CandidateReference,
        pair,
        negatives,
        model,
        rng,
        mc_samples,
    )?;
    Ok(ScoreRecord {
        pair_id: pair.pair_id.clone(),
        g,
        mi_context,
        mi_reference,
        score: g * mi_context + mi_reference,
        score_wo_nsp: mi_context + mi_reference,
        score_wo_mi: g,
        n_negatives: negatives.len(),
        mc_samples,
    })
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Per-pair generator derived from the run seed and the pair id, so results
/// do not depend on how pairs are distributed across worker threads.
pub fn pair_rng(seed: u64, pair_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ fnv1a64(pair_id.as_bytes()))
}

/// Settings for a scoring run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub n_negatives: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

/// Scores every pair in parallel, drawing each pair's contrastive set from
/// `pool` (excluding the pair's own conversation). Output order matches the
/// input order and is independent of thread count.
pub fn score_all(
    pairs: &[DialoguePair],
    pool: &[DialoguePair],
    model: &CmnModel,
    options: &ScoreOptions,
) -> Result<Vec<ScoreRecord>> {
    pairs
        .par_iter()
        .map(|pair| {
            let mut rng = pair_rng(options.seed, &pair.pair_id);
            let negatives =
                NegativeSet::draw(pool, &pair.conversation_id, options.n_negatives, &mut rng)?;
            score(pair, model, &negatives, &mut rng, options.mc_samples)
        })
        .collect()
}

/// Affine rescaling of `values` onto `[lo, hi]` by min and max.
pub fn normalize_scores(values: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CmnError::InvalidConfig(format!(
            "normalization range [{lo}, {hi}] is not an interval"
        )));
    }
    if values.is_empty() {
        return Err(CmnError::TooFewObservations {
            needed: 1,
            found: 0,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CmnError::NonFinite("scores to normalize".into()));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(CmnError::AllValuesEqual);
    }
    Ok(values
        .iter()
        .map(|v| lo + (v - min) / (max - min) * (hi - lo))
        .collect())
}

/// Provenance line written at the top of a score report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub checkpoint: String,
    pub n_negatives: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

/// Writes a score report: one header line, then one record per line.
pub fn write_score_report(
    path: impl AsRef<Path>,
    header: &RunHeader,
    records: &[ScoreRecord],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads back a report produced by [`write_score_report`].
pub fn read_score_report(path: impl AsRef<Path>) -> Result<(RunHeader, Vec<ScoreRecord>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or_else(|| {
        CmnError::MalformedLine {
            line: 1,
            message: "empty score report".into(),
        }
    })??;
    let header: RunHeader = serde_json::from_str(&header_line)?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok((header, records))
}

/// Writes the records as CSV with one row per pair.
pub fn write_score_csv(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(CmnError::from)?;
    for record in records {
        writer.serialize(record).map_err(CmnError::from)?;
    }
    writer.flush()?;
    Ok(())
}
