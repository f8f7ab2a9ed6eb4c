//! Regenerates the toy dataset shipped under `data/`: a training corpus, a
//! scored-pairs file with candidate responses, and three synthetic
//! annotators' ratings of those candidates.
//!
//! Usage: `cargo run -p cmn-core --example make_toy_data [-- OUT_DIR]`
//! (default OUT_DIR: `data`). Output is deterministic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cmn_core::corpus::synthetic::{attach_candidates, topic_corpus, with_speaker_tags};
use cmn_core::corpus::{save_annotations, save_dialogues, AnnotationRecord};

fn clamp_rating(value: i64) -> i64 {
    value.clamp(1, 5)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data".to_string());
    std::fs::create_dir_all(&out_dir)?;

    // Training corpus: 25 template conversations of 20 turns each, with a
    // per-conversation speaker name bracketing every utterance so that
    // cross-conversation shuffles stay detectable.
    let corpus = with_speaker_tags(&topic_corpus(25, 20, 4242));
    let corpus_path = format!("{out_dir}/toy_corpus.jsonl");
    save_dialogues(&corpus_path, &corpus)?;

    // Scored pairs: every fifth pair held out of the corpus, each given a
    // candidate — its own reference, or (half the time) a response lifted
    // from another conversation.
    let held_out: Vec<_> = corpus.iter().step_by(5).cloned().collect();
    let (scored, is_true_continuation) = attach_candidates(&held_out, 0.5, 4243)?;
    let pairs_path = format!("{out_dir}/toy_pairs.jsonl");
    save_dialogues(&pairs_path, &scored)?;

    // Ratings: three annotators who like true continuations and dislike
    // swapped-in ones, each with independent ±1 noise so agreement is
    // high but imperfect.
    let mut rng = ChaCha8Rng::seed_from_u64(4244);
    let mut annotations = Vec::new();
    for (pair, &positive) in scored.iter().zip(&is_true_continuation) {
        let (base_appropriateness, base_coherence) = if positive { (5, 4) } else { (1, 2) };
        for annotator in ["a1", "a2", "a3"] {
            annotations.push(AnnotationRecord {
                pair_id: pair.pair_id.clone(),
                annotator_id: annotator.to_string(),
                appropriateness: clamp_rating(base_appropriateness + rng.random_range(-1..=1)),
                coherence: clamp_rating(base_coherence + rng.random_range(-1..=1)),
            });
        }
    }
    let annotations_path = format!("{out_dir}/toy_annotations.csv");
    save_annotations(&annotations_path, &annotations)?;

    println!("{}: {} pairs", corpus_path, corpus.len());
    println!(
        "{}: {} pairs ({} true continuations)",
        pairs_path,
        scored.len(),
        is_true_continuation.iter().filter(|&&p| p).count()
    );
    println!("{}: {} ratings", annotations_path, annotations.len());
    Ok(())
}
