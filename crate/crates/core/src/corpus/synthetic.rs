//! Deterministic synthetic dialogue corpora with controllable topical
//! structure.
//!
//! Every generated conversation commits to one topic. Each topic owns a
//! small pool of content words split into context words and two disjoint
//! response "aspects", and the sentence templates used with the two aspects
//! share no function words either. A response phrased with the second
//! aspect therefore has zero unigram overlap with one phrased using the
//! first, while still being unmistakably on topic. That structure supports
//! three kinds of experiments: coherence training (on-topic versus
//! off-topic discrimination), ranking of lexically diverse but valid
//! responses, and evaluation-set construction over a controlled spread of
//! candidate-reference overlap.

use super::{AnnotationRecord, DialoguePair};
use crate::error::{CmnError, Result};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Topic {
    context_words: [&'static str; 4],
    first_aspect: [&'static str; 4],
    second_aspect: [&'static str; 4],
}

const TOPICS: [Topic; 8] = [
    Topic {
        context_words: ["weather", "sky", "forecast", "climate"],
        first_aspect: ["rain", "cloud", "storm", "wind"],
        second_aspect: ["sunshine", "frost", "haze", "thunder"],
    },
    Topic {
        context_words: ["food", "dinner", "kitchen", "meal"],
        first_aspect: ["soup", "bread", "cheese", "salad"],
        second_aspect: ["pasta", "cake", "honey", "butter"],
    },
    Topic {
        context_words: ["travel", "trip", "journey", "tour"],
        first_aspect: ["train", "ticket", "luggage", "hotel"],
        second_aspect: ["airport", "harbor", "taxi", "passport"],
    },
    Topic {
        context_words: ["music", "concert", "band", "song"],
        first_aspect: ["guitar", "melody", "drum", "chorus"],
        second_aspect: ["violin", "rhythm", "trumpet", "lyric"],
    },
    Topic {
        context_words: ["garden", "yard", "lawn", "plot"],
        first_aspect: ["flower", "seed", "soil", "rose"],
        second_aspect: ["hedge", "tulip", "shovel", "bloom"],
    },
    Topic {
        context_words: ["book", "library", "story", "page"],
        first_aspect: ["novel", "author", "chapter", "poem"],
        second_aspect: ["essay", "shelf", "preface", "index"],
    },
    Topic {
        context_words: ["sport", "match", "team", "game"],
        first_aspect: ["goal", "coach", "field", "race"],
        second_aspect: ["medal", "stadium", "whistle", "jersey"],
    },
    Topic {
        context_words: ["computer", "screen", "program", "network"],
        first_aspect: ["keyboard", "code", "server", "file"],
        second_aspect: ["monitor", "cable", "router", "laptop"],
    },
];

/// Participant names for [`with_speaker_tags`], all distinct from every
/// topic and template word. With 32 names and 8 topics, corpora of up to
/// 32 conversations get a unique (name, topic) combination per
/// conversation.
const SPEAKER_NAMES: [&str; 32] = [
    "mira", "joss", "theo", "nadia", "ravi", "lena", "otto", "priya", "sven", "carla", "dmitri",
    "yuki", "amara", "felix", "greta", "hassan", "ines", "jonas", "kavya", "liam", "marta", "niko",
    "oren", "paula", "quinn", "rosa", "samir", "tilda", "umar", "vera", "wren", "zoya",
];

const CONTEXT_TEMPLATES: [&str; 5] = [
    "tell me about the {a}",
    "what about the {a} and the {b}",
    "any news on the {a}",
    "we visited the {a} yesterday",
    "is the {a} close to the {b}",
];

/// Templates used with a topic's first aspect. Their function words are
/// disjoint from [`SECOND_ASPECT_TEMPLATES`], so responses from different
/// aspects share no unigrams at all.
const FIRST_ASPECT_TEMPLATES: [&str; 3] = [
    "the {a} was near the {b}",
    "the {a} and the {b} were great",
    "that {a} had a lovely {b}",
];

const SECOND_ASPECT_TEMPLATES: [&str; 3] = [
    "i want more {a} with my {b}",
    "give me some {a} for my {b}",
    "you should get your {a} plus my {b}",
];

fn fill(template: &str, a: &str, b: &str) -> String {
    template.replace("{a}", a).replace("{b}", b)
}

/// Two distinct words from a four-word pool.
fn pick_two<'a, R: Rng + ?Sized>(words: &[&'a str; 4], rng: &mut R) -> (&'a str, &'a str) {
    let a = rng.random_range(0..words.len());
    let mut b = rng.random_range(0..words.len() - 1);
    if b >= a {
        b += 1;
    }
    (words[a], words[b])
}

fn sample_context<R: Rng + ?Sized>(topic: &Topic, rng: &mut R) -> String {
    let template = CONTEXT_TEMPLATES
        .choose(rng)
        .expect("template list is non-empty");
    let (a, b) = pick_two(&topic.context_words, rng);
    fill(template, a, b)
}

fn sample_response<R: Rng + ?Sized>(topic: &Topic, first_aspect: bool, rng: &mut R) -> String {
    let (templates, words) = if first_aspect {
        (&FIRST_ASPECT_TEMPLATES, &topic.first_aspect)
    } else {
        (&SECOND_ASPECT_TEMPLATES, &topic.second_aspect)
    };
    let template = templates.choose(rng).expect("template list is non-empty");
    let (a, b) = pick_two(words, rng);
    fill(template, a, b)
}

/// Template dialogues over cycling topics: conversation `i` uses topic
/// `i % 8`, and its references alternate between the two aspect phrasings
/// so that both are in-distribution continuations of every topic context.
/// The full vocabulary stays under 200 words regardless of size.
pub fn topic_corpus(
    conversations: usize,
    turns_per_conversation: usize,
    seed: u64,
) -> Vec<DialoguePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(conversations * turns_per_conversation);
    for conv in 0..conversations {
        let topic = &TOPICS[conv % TOPICS.len()];
        let conversation_id = format!("conv{conv:03}");
        for turn in 0..turns_per_conversation {
            pairs.push(DialoguePair {
                pair_id: format!("{conversation_id}-t{turn:02}"),
                conversation_id: conversation_id.clone(),
                turn_index: turn as u32,
                context: sample_context(topic, &mut rng),
                reference: sample_response(topic, turn % 2 == 0, &mut rng),
                candidate: None,
            });
        }
    }
    pairs
}

/// Prefix every context and reference with a participant name unique to
/// its conversation (names cycle after 32 conversations). Tagged corpora
/// make conversations identifiable from their utterances alone, so
/// cross-conversation shuffles are detectable even when two conversations
/// share a topic. Apply before attaching candidates: candidates are left
/// untouched, and ones cloned from tagged references keep the name of the
/// conversation they came from.
pub fn with_speaker_tags(pairs: &[DialoguePair]) -> Vec<DialoguePair> {
    let mut seen = std::collections::HashMap::new();
    pairs
        .iter()
        .map(|pair| {
            let next = seen.len();
            let ordinal = *seen.entry(pair.conversation_id.clone()).or_insert(next);
            let name = SPEAKER_NAMES[ordinal % SPEAKER_NAMES.len()];
            let mut tagged = pair.clone();
            tagged.context = format!("{name} {} {name}", pair.context);
            tagged.reference = format!("{name} {} {name}", pair.reference);
            tagged
        })
        .collect()
}

/// Give every pair a candidate: its own reference (a true continuation),
/// or with probability `negative_fraction` the reference of a random pair
/// from a different conversation. Returns the scored pairs together with
/// per-pair flags marking true continuations.
pub fn attach_candidates(
    pairs: &[DialoguePair],
    negative_fraction: f64,
    seed: u64,
) -> Result<(Vec<DialoguePair>, Vec<bool>)> {
    let distinct = pairs
        .iter()
        .map(|p| p.conversation_id.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if distinct < 2 {
        return Err(CmnError::SingleConversation(distinct));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scored = Vec::with_capacity(pairs.len());
    let mut is_true = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let positive = !rng.random_bool(negative_fraction);
        let candidate = if positive {
            pair.reference.clone()
        } else {
            loop {
                let j = rng.random_range(0..pairs.len());
                if pairs[j].conversation_id != pair.conversation_id {
                    break pairs[j].reference.clone();
                }
            }
        };
        let mut with_candidate = pair.clone();
        with_candidate.candidate = Some(candidate);
        scored.push(with_candidate);
        is_true.push(positive);
    }
    Ok((scored, is_true))
}

/// A one-to-many benchmark: training dialogues plus a scored set whose
/// contexts each carry three candidates of graded quality, rated by two
/// synthetic annotators.
pub struct OneToManyCorpus {
    pub train: Vec<DialoguePair>,
    pub scored: Vec<DialoguePair>,
    pub annotations: Vec<AnnotationRecord>,
}

/// Build a corpus where every context admits two valid phrasings with zero
/// unigram overlap. The training half comes from [`topic_corpus`]. The
/// scored half holds, per fresh context, a close paraphrase of the
/// reference (one word changed), an on-topic response from the other
/// aspect (no shared unigrams with the reference), and an off-topic
/// response using another topic's words. Synthetic annotators rate topical
/// fit regardless of phrasing: both valid candidates score 4-5, the
/// off-topic one 1-2. Use at least 8 conversations so every aspect pool is
/// seen in training.
pub fn one_to_many_corpus(
    conversations: usize,
    turns_per_conversation: usize,
    scored_per_conversation: usize,
    seed: u64,
) -> Result<OneToManyCorpus> {
    if conversations < 2 {
        return Err(CmnError::SingleConversation(conversations));
    }
    let train = topic_corpus(conversations, turns_per_conversation, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f6e_6532_6d61_6e79);
    let mut scored = Vec::new();
    let mut annotations = Vec::new();
    let mut rate = |pair_id: &str, first: (i64, i64), second: (i64, i64)| {
        for (annotator, (appropriateness, coherence)) in
            [("a1", first), ("a2", second)]
        {
            annotations.push(AnnotationRecord {
                pair_id: pair_id.to_string(),
                annotator_id: annotator.to_string(),
                appropriateness,
                coherence,
            });
        }
    };
    for conv in 0..conversations {
        let topic_index = conv % TOPICS.len();
        let topic = &TOPICS[topic_index];
        let conversation_id = format!("conv{conv:03}");
        for slot in 0..scored_per_conversation {
            let context = sample_context(topic, &mut rng);
            let template = FIRST_ASPECT_TEMPLATES
                .choose(&mut rng)
                .expect("template list is non-empty");
            let (a, b) = pick_two(&topic.first_aspect, &mut rng);
            let reference = fill(template, a, b);
            let close = {
                let mut swapped = rng.random_range(0..topic.first_aspect.len() - 1);
                if topic.first_aspect[swapped] == b {
                    swapped += 1;
                }
                fill(template, a, topic.first_aspect[swapped])
            };
            let diverse = sample_response(topic, false, &mut rng);
            let off_topic_index =
                (topic_index + 1 + rng.random_range(0..TOPICS.len() - 1)) % TOPICS.len();
            let off_topic = sample_response(&TOPICS[off_topic_index], false, &mut rng);

            let turn_index = (turns_per_conversation + slot) as u32;
            let mut push = |kind: &str, candidate: String| {
                let pair_id = format!("{conversation_id}-q{slot:02}-{kind}");
                scored.push(DialoguePair {
                    pair_id: pair_id.clone(),
                    conversation_id: conversation_id.clone(),
                    turn_index,
                    context: context.clone(),
                    reference: reference.clone(),
                    candidate: Some(candidate),
                });
                pair_id
            };
            let id = push("close", close);
            rate(&id, (5, 5), (5, rng.random_range(4..=5)));
            let id = push("div", diverse);
            rate(&id, (4, rng.random_range(4..=5)), (4, 4));
            let id = push("off", off_topic);
            rate(&id, (1, rng.random_range(1..=2)), (2, 1));
        }
    }
    Ok(OneToManyCorpus {
        train,
        scored,
        annotations,
    })
}

/// Scored corpus with a controlled spread of candidate-reference unigram
/// overlap — exact copies, graded partial rewrites, and fully disjoint
/// responses, with plenty of exact ties — for exercising evaluation-set
/// construction. Filler tokens are unique per position so rewritten words
/// never collide with the reference.
pub fn graded_candidate_corpus(pairs: usize, seed: u64) -> Vec<DialoguePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs);
    for index in 0..pairs {
        let conversation = index / 20;
        let topic = &TOPICS[conversation % TOPICS.len()];
        let reference = sample_response(topic, index % 2 == 0, &mut rng);
        let tokens: Vec<&str> = reference.split(' ').collect();
        let keep = match index % 5 {
            0 => tokens.len(),
            1 => tokens.len() - 1,
            2 => tokens.len() / 2,
            3 => 1,
            _ => 0,
        };
        let candidate: Vec<String> = tokens
            .iter()
            .enumerate()
            .map(|(position, token)| {
                if position < keep {
                    (*token).to_string()
                } else {
                    format!("filler{position}")
                }
            })
            .collect();
        out.push(DialoguePair {
            pair_id: format!("g{index:04}"),
            conversation_id: format!("gconv{conversation:03}"),
            turn_index: (index % 20) as u32,
            context: sample_context(topic, &mut rng),
            reference,
            candidate: Some(candidate.join(" ")),
        });
    }
    out
}
