//! Dialogue corpus ingestion, NSP batch construction with negative sampling,
//! BLEU-1 based evaluation-set building, and human-annotation aggregation.

use crate::error::{CmnError, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

/// Lowercase and split into alphanumeric runs; every punctuation character
/// becomes its own token. Deterministic, so BLEU thresholds are stable.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// One (context, reference) example with conversation identity; carries a
/// candidate response when used for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub pair_id: String,
    pub conversation_id: String,
    pub turn_index: u32,
    pub context: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
}

impl DialoguePair {
    pub fn context_tokens(&self) -> Vec<String> {
        tokenize(&self.context)
    }

    pub fn reference_tokens(&self) -> Vec<String> {
        tokenize(&self.reference)
    }

    /// Candidate tokens, or an error naming the pair when absent.
    pub fn candidate_tokens(&self) -> Result<Vec<String>> {
        self.candidate
            .as_deref()
            .map(tokenize)
            .ok_or_else(|| CmnError::MissingCandidate(self.pair_id.clone()))
    }

    fn validate(&self) -> Result<()> {
        if tokenize(&self.context).is_empty() {
            return Err(CmnError::InvalidPair {
                pair_id: self.pair_id.clone(),
                message: "context is empty after tokenization".into(),
            });
        }
        if tokenize(&self.reference).is_empty() {
            return Err(CmnError::InvalidPair {
                pair_id: self.pair_id.clone(),
                message: "reference is empty after tokenization".into(),
            });
        }
        Ok(())
    }
}

/// On-disk corpus encodings accepted by [`load_dialogues`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
}

#[derive(Deserialize)]
struct RawPair {
    pair_id: Option<String>,
    conversation_id: String,
    turn_index: u32,
    context: String,
    reference: String,
    #[serde(default)]
    candidate: Option<String>,
}

/// Load dialogue pairs in file order. Missing `pair_id` fields are assigned
/// deterministically from the conversation id and turn index.
pub fn load_dialogues(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<DialoguePair>> {
    match format {
        CorpusFormat::Jsonl => load_jsonl(path.as_ref()),
    }
}

fn load_jsonl(path: &Path) -> Result<Vec<DialoguePair>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPair =
            serde_json::from_str(&line).map_err(|e| CmnError::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        let pair = DialoguePair {
            pair_id: raw
                .pair_id
                .unwrap_or_else(|| format!("{}-{}", raw.conversation_id, raw.turn_index)),
            conversation_id: raw.conversation_id,
            turn_index: raw.turn_index,
            context: raw.context,
            reference: raw.reference,
            candidate: raw.candidate,
        };
        pair.validate()?;
        if !seen.insert(pair.pair_id.clone()) {
            return Err(CmnError::DuplicatePairId(pair.pair_id));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// One NSP training item: the pair's context with either its own reference
/// (positive) or a response lifted from another conversation (negative).
/// The decoder target stays the original reference in both regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct NspBatchItem {
    pub pair_id: String,
    pub conversation_id: String,
    pub context: Vec<String>,
    pub response: Vec<String>,
    /// 0 for context positions, 1 for response positions.
    pub segment_ids: Vec<u8>,
    /// 1 = positive (true continuation), 0 = negative (sampled response).
    pub nsp_label: u8,
    pub decoder_target: Vec<String>,
    /// Conversation the response was taken from (== `conversation_id` for
    /// positives, always different for negatives).
    pub response_source_conversation: String,
}

impl NspBatchItem {
    pub fn is_positive(&self) -> bool {
        self.nsp_label == 1
    }
}

/// Build one NSP item per pair, in order. Each item is independently flagged
/// negative with probability `neg_prob`; a negative item's response is drawn
/// uniformly from the pairs of other conversations.
pub fn make_nsp_batch<R: Rng>(
    pairs: &[DialoguePair],
    neg_prob: f64,
    rng: &mut R,
) -> Result<Vec<NspBatchItem>> {
    if !(0.0..=1.0).contains(&neg_prob) {
        return Err(CmnError::InvalidConfig(format!(
            "neg_prob must lie in [0,1], got {neg_prob}"
        )));
    }

    // Conversations in first-appearance order, each with its pair indices.
    let mut conv_order: Vec<(&str, Vec<usize>)> = Vec::new();
    let mut conv_pos: HashMap<&str, usize> = HashMap::new();
    for (i, p) in pairs.iter().enumerate() {
        match conv_pos.get(p.conversation_id.as_str()) {
            Some(&pos) => conv_order[pos].1.push(i),
            None => {
                conv_pos.insert(&p.conversation_id, conv_order.len());
                conv_order.push((&p.conversation_id, vec![i]));
            }
        }
    }
    if neg_prob > 0.0 && conv_order.len() < 2 {
        return Err(CmnError::SingleConversation(conv_order.len()));
    }

    let mut items = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let negative = neg_prob > 0.0 && rng.random_bool(neg_prob);
        let (response_pair, label) = if negative {
            let own = conv_pos[pair.conversation_id.as_str()];
            let n_others = pairs.len() - conv_order[own].1.len();
            let mut k = rng.random_range(0..n_others);
            let mut chosen = None;
            for (pos, (_, indices)) in conv_order.iter().enumerate() {
                if pos == own {
                    continue;
                }
                if k < indices.len() {
                    chosen = Some(&pairs[indices[k]]);
                    break;
                }
                k -= indices.len();
            }
            (chosen.expect("index within other-conversation total"), 0)
        } else {
            (pair, 1)
        };

        let context = pair.context_tokens();
        let response = response_pair.reference_tokens();
        let mut segment_ids = vec![0u8; context.len()];
        segment_ids.extend(std::iter::repeat(1u8).take(response.len()));
        items.push(NspBatchItem {
            pair_id: pair.pair_id.clone(),
            conversation_id: pair.conversation_id.clone(),
            context,
            response,
            segment_ids,
            nsp_label: label,
            decoder_target: pair.reference_tokens(),
            response_source_conversation: response_pair.conversation_id.clone(),
        });
    }
    Ok(items)
}

/// Sentence-level BLEU-1: brevity penalty times clipped unigram precision,
/// no smoothing. An empty candidate scores 0.
pub fn bleu1(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *ref_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for t in candidate {
        *cand_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let matched: usize = cand_counts
        .iter()
        .map(|(t, &c)| c.min(ref_counts.get(t).copied().unwrap_or(0)))
        .sum();
    let precision = matched as f64 / candidate.len() as f64;
    let brevity = if candidate.len() >= reference.len() {
        1.0
    } else {
        (1.0 - reference.len() as f64 / candidate.len() as f64).exp()
    };
    brevity * precision
}

/// Evaluation-set partition: `standard` holds the candidates closest to
/// their references by BLEU-1, `diverse` a sample of those far from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSetSplit {
    pub standard: Vec<String>,
    pub diverse: Vec<String>,
    pub threshold: f64,
    pub seed: u64,
}

impl EvalSetSplit {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Rank pairs by BLEU-1(candidate, reference). The top `k_standard` become
/// the standard set (ties broken by pair id); `k_diverse` of the remaining
/// pairs under `diverse_threshold` are sampled without replacement. When
/// fewer qualify, all of them are returned with a warning.
pub fn build_eval_sets(
    pairs: &[DialoguePair],
    k_standard: usize,
    diverse_threshold: f64,
    k_diverse: usize,
    seed: u64,
) -> Result<EvalSetSplit> {
    if pairs.len() < k_standard {
        return Err(CmnError::InsufficientPairs {
            needed: k_standard,
            found: pairs.len(),
        });
    }
    let mut scored: Vec<(f64, &str)> = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let candidate = pair.candidate_tokens()?;
        let score = bleu1(&candidate, &pair.reference_tokens());
        scored.push((score, &pair.pair_id));
    }
    scored.sort_by(|(sa, ida), (sb, idb)| {
        sb.partial_cmp(sa)
            .expect("BLEU scores are finite")
            .then_with(|| ida.cmp(idb))
    });

    let standard: Vec<String> = scored[..k_standard]
        .iter()
        .map(|(_, id)| id.to_string())
        .collect();
    let taken: HashSet<&str> = scored[..k_standard].iter().map(|(_, id)| *id).collect();

    let qualifying: Vec<&str> = scored
        .iter()
        .filter(|(s, id)| *s < diverse_threshold && !taken.contains(id))
        .map(|(_, id)| *id)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diverse: Vec<String> = if qualifying.len() <= k_diverse {
        if qualifying.len() < k_diverse {
            log::warn!(
                "only {} of {} requested diverse pairs fall under BLEU-1 {}",
                qualifying.len(),
                k_diverse,
                diverse_threshold
            );
        }
        qualifying.iter().map(|id| id.to_string()).collect()
    } else {
        rand::seq::index::sample(&mut rng, qualifying.len(), k_diverse)
            .iter()
            .map(|i| qualifying[i].to_string())
            .collect()
    };

    Ok(EvalSetSplit {
        standard,
        diverse,
        threshold: diverse_threshold,
        seed,
    })
}

/// One annotator's 1-5 ratings of one pair on both aspects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub pair_id: String,
    pub annotator_id: String,
    pub appropriateness: i64,
    pub coherence: i64,
}

#[derive(Deserialize)]
struct RawAnnotation {
    pair_id: String,
    annotator_id: String,
    appropriateness: Option<i64>,
    coherence: Option<i64>,
}

fn check_rating(record: &AnnotationRecord, aspect: &str, value: i64) -> Result<()> {
    if !(1..=5).contains(&value) {
        return Err(CmnError::InvalidAnnotation {
            pair_id: record.pair_id.clone(),
            annotator_id: record.annotator_id.clone(),
            message: format!("{aspect} rating {value} outside 1-5"),
        });
    }
    Ok(())
}

/// Read annotation rows from a `pair_id,annotator_id,appropriateness,coherence`
/// CSV, rejecting missing or out-of-range ratings.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut records = Vec::new();
    for row in reader.deserialize::<RawAnnotation>() {
        let raw = row?;
        let missing = |aspect: &str| CmnError::InvalidAnnotation {
            pair_id: raw.pair_id.clone(),
            annotator_id: raw.annotator_id.clone(),
            message: format!("missing {aspect} rating"),
        };
        let record = AnnotationRecord {
            appropriateness: raw.appropriateness.ok_or_else(|| missing("appropriateness"))?,
            coherence: raw.coherence.ok_or_else(|| missing("coherence"))?,
            pair_id: raw.pair_id,
            annotator_id: raw.annotator_id,
        };
        check_rating(&record, "appropriateness", record.appropriateness)?;
        check_rating(&record, "coherence", record.coherence)?;
        records.push(record);
    }
    Ok(records)
}

/// Positive/negative band of a pair's averaged human score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

/// Averaged human judgment of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatedAnnotation {
    pub human_score: f64,
    pub label: Label,
}

/// Average every (annotator, aspect) rating per pair; scores of at least 4
/// are labeled positive.
pub fn aggregate_annotations(
    records: &[AnnotationRecord],
) -> Result<BTreeMap<String, AggregatedAnnotation>> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for record in records {
        check_rating(record, "appropriateness", record.appropriateness)?;
        check_rating(record, "coherence", record.coherence)?;
        let entry = sums.entry(&record.pair_id).or_insert((0.0, 0));
        entry.0 += (record.appropriateness + record.coherence) as f64;
        entry.1 += 2;
    }
    Ok(sums
        .into_iter()
        .map(|(pair_id, (sum, count))| {
            let human_score = sum / count as f64;
            let label = if human_score >= 4.0 {
                Label::Positive
            } else {
                Label::Negative
            };
            (pair_id.to_string(), AggregatedAnnotation { human_score, label })
        })
        .collect())
}

/// Write pairs as one JSON object per line, the format [`load_dialogues`]
/// reads back.
pub fn save_dialogues(path: impl AsRef<Path>, pairs: &[DialoguePair]) -> Result<()> {
    let mut text = String::new();
    for pair in pairs {
        text.push_str(&serde_json::to_string(pair)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Write annotation rows as the `pair_id,annotator_id,appropriateness,coherence`
/// CSV that [`load_annotations`] reads back.
pub fn save_annotations(path: impl AsRef<Path>, records: &[AnnotationRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub mod synthetic;

#[cfg(test)]
mod tests;
