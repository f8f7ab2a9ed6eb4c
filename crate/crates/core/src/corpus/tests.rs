use super::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

fn toks(text: &str) -> Vec<String> {
    tokenize(text)
}

fn pair(id: &str, conv: &str, turn: u32, context: &str, reference: &str) -> DialoguePair {
    DialoguePair {
        pair_id: id.to_string(),
        conversation_id: conv.to_string(),
        turn_index: turn,
        context: context.to_string(),
        reference: reference.to_string(),
        candidate: None,
    }
}

fn with_candidate(mut p: DialoguePair, candidate: &str) -> DialoguePair {
    p.candidate = Some(candidate.to_string());
    p
}

#[test]
fn tokenize_lowercases_and_splits_punctuation() {
    assert_eq!(toks("Hello, World!"), vec!["hello", ",", "world", "!"]);
    assert_eq!(toks("don't stop"), vec!["don", "'", "t", "stop"]);
    assert_eq!(toks("  spaced   out  "), vec!["spaced", "out"]);
    assert_eq!(toks("route 66 ok"), vec!["route", "66", "ok"]);
    assert!(toks("  \t\n ").is_empty());
    assert_eq!(toks("a--b"), vec!["a", "-", "-", "b"]);
}

#[test]
fn load_dialogues_in_file_order() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        file,
        r#"{{"pair_id":"p1","conversation_id":"c1","turn_index":0,"context":"hi there","reference":"hello"}}"#
    )
    .unwrap();
    writeln!(
        file,
        r#"{{"conversation_id":"c1","turn_index":1,"context":"hello","reference":"how are you","candidate":"fine"}}"#
    )
    .unwrap();
    writeln!(file).unwrap();
    writeln!(
        file,
        r#"{{"pair_id":"p3","conversation_id":"c2","turn_index":0,"context":"yo","reference":"hey"}}"#
    )
    .unwrap();
    let pairs = load_dialogues(file.path(), CorpusFormat::Jsonl).unwrap();
    assert_eq!(pairs.len(), 3);
    assert_eq!(pairs[0].pair_id, "p1");
    // missing pair_id is derived from conversation and turn
    assert_eq!(pairs[1].pair_id, "c1-1");
    assert_eq!(pairs[1].candidate.as_deref(), Some("fine"));
    assert_eq!(pairs[2].pair_id, "p3");
}

#[test]
fn load_dialogues_empty_file() {
    let file = tempfile::NamedTempFile::new().unwrap();
    let pairs = load_dialogues(file.path(), CorpusFormat::Jsonl).unwrap();
    assert!(pairs.is_empty());
}

#[test]
fn load_dialogues_reports_line_of_malformed_input() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        file,
        r#"{{"pair_id":"p1","conversation_id":"c1","turn_index":0,"context":"a","reference":"b"}}"#
    )
    .unwrap();
    writeln!(file, "{{not json").unwrap();
    let err = load_dialogues(file.path(), CorpusFormat::Jsonl).unwrap_err();
    match err {
        CmnError::MalformedLine { line, .. } => assert_eq!(line, 2),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn load_dialogues_rejects_duplicate_ids() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    for _ in 0..2 {
        writeln!(
            file,
            r#"{{"pair_id":"dup","conversation_id":"c1","turn_index":0,"context":"a","reference":"b"}}"#
        )
        .unwrap();
    }
    let err = load_dialogues(file.path(), CorpusFormat::Jsonl).unwrap_err();
    assert!(matches!(err, CmnError::DuplicatePairId(id) if id == "dup"));
}

#[test]
fn load_dialogues_rejects_empty_context() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        file,
        r#"{{"pair_id":"p","conversation_id":"c","turn_index":0,"context":"  !?","reference":"b"}}"#
    )
    .unwrap();
    // context is punctuation-only, which still tokenizes; use whitespace-only
    let err = load_dialogues(file.path(), CorpusFormat::Jsonl);
    assert!(err.is_ok());
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        file,
        r#"{{"pair_id":"p","conversation_id":"c","turn_index":0,"context":"   ","reference":"b"}}"#
    )
    .unwrap();
    let err = load_dialogues(file.path(), CorpusFormat::Jsonl).unwrap_err();
    assert!(matches!(err, CmnError::InvalidPair { pair_id, .. } if pair_id == "p"));
}

fn two_conversation_corpus() -> Vec<DialoguePair> {
    vec![
        pair("a0", "conv-a", 0, "how are you", "i am fine"),
        pair("a1", "conv-a", 1, "i am fine", "glad to hear"),
        pair("b0", "conv-b", 0, "what time is it", "almost noon"),
        pair("b1", "conv-b", 1, "almost noon", "time for lunch"),
    ]
}

#[test]
fn nsp_batch_all_positive_at_zero_prob() {
    let pairs = two_conversation_corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let items = make_nsp_batch(&pairs, 0.0, &mut rng).unwrap();
    assert_eq!(items.len(), pairs.len());
    for (item, p) in items.iter().zip(&pairs) {
        assert_eq!(item.nsp_label, 1);
        assert!(item.is_positive());
        assert_eq!(item.response, p.reference_tokens());
        assert_eq!(item.response_source_conversation, p.conversation_id);
        assert_eq!(item.decoder_target, p.reference_tokens());
    }
}

#[test]
fn nsp_batch_all_negative_at_full_prob() {
    let pairs = two_conversation_corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let items = make_nsp_batch(&pairs, 1.0, &mut rng).unwrap();
    for (item, p) in items.iter().zip(&pairs) {
        assert_eq!(item.nsp_label, 0);
        assert_ne!(item.response_source_conversation, item.conversation_id);
        // decoder target still the pair's own reference
        assert_eq!(item.decoder_target, p.reference_tokens());
    }
}

#[test]
fn nsp_batch_segment_ids_split_sides() {
    let pairs = two_conversation_corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let items = make_nsp_batch(&pairs, 0.5, &mut rng).unwrap();
    for item in items {
        assert_eq!(item.segment_ids.len(), item.context.len() + item.response.len());
        assert!(item.segment_ids[..item.context.len()].iter().all(|&s| s == 0));
        assert!(item.segment_ids[item.context.len()..].iter().all(|&s| s == 1));
    }
}

#[test]
fn nsp_batch_single_conversation_rules() {
    let pairs = vec![
        pair("a0", "conv-a", 0, "hi", "hello"),
        pair("a1", "conv-a", 1, "hello", "bye"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!(matches!(
        make_nsp_batch(&pairs, 0.5, &mut rng),
        Err(CmnError::SingleConversation(1))
    ));
    // but zero negative probability is fine
    assert!(make_nsp_batch(&pairs, 0.0, &mut rng).is_ok());
}

#[test]
fn nsp_batch_negative_fraction_near_half() {
    // 10_000 Bernoulli(0.5) draws stay within [0.48, 0.52] except with
    // probability < 2*exp(-2*10000*0.02^2) ≈ 6.7e-4; the seed is fixed.
    let mut pairs = Vec::new();
    for conv in 0..100 {
        for turn in 0..100 {
            pairs.push(pair(
                &format!("p{conv}-{turn}"),
                &format!("conv{conv}"),
                turn,
                "context words here",
                "reference words here",
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let items = make_nsp_batch(&pairs, 0.5, &mut rng).unwrap();
    let negatives = items.iter().filter(|i| i.nsp_label == 0).count();
    let fraction = negatives as f64 / items.len() as f64;
    assert!((0.48..=0.52).contains(&fraction), "fraction {fraction}");
}

#[test]
fn bleu1_matches_hand_counts() {
    let cat = toks("the cat sat");
    let dog = toks("the dog sat");
    assert!((bleu1(&cat, &dog) - 2.0 / 3.0).abs() < 1e-12);
    // identity
    assert!((bleu1(&cat, &cat) - 1.0).abs() < 1e-15);
    // disjoint vocabulary
    assert_eq!(bleu1(&toks("alpha beta"), &toks("gamma delta")), 0.0);
    // empty candidate is defined as zero
    assert_eq!(bleu1(&[], &cat), 0.0);
    // short candidate takes a brevity penalty: exp(1 - 3/1) * 1
    let short = toks("the");
    let expected = (1.0f64 - 3.0).exp();
    assert!((bleu1(&short, &dog) - expected).abs() < 1e-12);
    // clipping: repeated candidate token counts only up to its reference count
    let repeated = toks("the the the");
    assert!((bleu1(&repeated, &dog) - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn eval_sets_split_by_bleu() {
    // candidates engineered to BLEU-1 1.0, 0.9, 0.1, 0.05, 0.0
    let reference = "t0 t1 t2 t3 t4 t5 t6 t7 t8 t9";
    let ref20 = "t0 t1 t2 t3 t4 t5 t6 t7 t8 t9 t10 t11 t12 t13 t14 t15 t16 t17 t18 t19";
    let pairs = vec![
        with_candidate(pair("p0", "c0", 0, "ctx", reference), reference),
        with_candidate(
            pair("p1", "c1", 0, "ctx", reference),
            "t0 t1 t2 t3 t4 t5 t6 t7 t8 x0",
        ),
        with_candidate(
            pair("p2", "c2", 0, "ctx", reference),
            "t0 x0 x1 x2 x3 x4 x5 x6 x7 x8",
        ),
        with_candidate(
            pair("p3", "c3", 0, "ctx", ref20),
            "t0 x0 x1 x2 x3 x4 x5 x6 x7 x8 x9 x10 x11 x12 x13 x14 x15 x16 x17 x18",
        ),
        with_candidate(pair("p4", "c4", 0, "ctx", reference), "y0 y1 y2 y3 y4"),
    ];
    let split = build_eval_sets(&pairs, 2, 0.2, 3, 7).unwrap();
    assert_eq!(split.standard, vec!["p0", "p1"]);
    let mut diverse = split.diverse.clone();
    diverse.sort();
    assert_eq!(diverse, vec!["p2", "p3", "p4"]);
    assert_eq!(split.threshold, 0.2);
    assert_eq!(split.seed, 7);
}

#[test]
fn eval_sets_standard_ties_break_by_pair_id() {
    let reference = "same tokens everywhere";
    let pairs: Vec<DialoguePair> = ["z", "a", "m"]
        .iter()
        .map(|id| with_candidate(pair(id, *id, 0, "ctx", reference), reference))
        .collect();
    let split = build_eval_sets(&pairs, 2, 0.2, 0, 0).unwrap();
    assert_eq!(split.standard, vec!["a", "m"]);
}

#[test]
fn eval_sets_empty_diverse_when_all_match() {
    let reference = "exact copy";
    let pairs: Vec<DialoguePair> = (0..5)
        .map(|i| {
            with_candidate(
                pair(&format!("p{i}"), &format!("c{i}"), 0, "ctx", reference),
                reference,
            )
        })
        .collect();
    let split = build_eval_sets(&pairs, 2, 0.2, 3, 0).unwrap();
    assert!(split.diverse.is_empty());
}

#[test]
fn eval_sets_insufficient_pairs() {
    let pairs = vec![with_candidate(pair("p", "c", 0, "a", "b"), "b")];
    assert!(matches!(
        build_eval_sets(&pairs, 2, 0.2, 1, 0),
        Err(CmnError::InsufficientPairs { needed: 2, found: 1 })
    ));
}

#[test]
fn eval_sets_missing_candidate() {
    let pairs = vec![pair("p", "c", 0, "a", "b")];
    assert!(matches!(
        build_eval_sets(&pairs, 1, 0.2, 0, 0),
        Err(CmnError::MissingCandidate(id)) if id == "p"
    ));
}

#[test]
fn eval_set_split_roundtrips_through_json() {
    let split = EvalSetSplit {
        standard: vec!["a".into(), "b".into()],
        diverse: vec!["c".into()],
        threshold: 0.2,
        seed: 99,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.json");
    split.save(&path).unwrap();
    let loaded = EvalSetSplit::load(&path).unwrap();
    assert_eq!(loaded, split);
    let text = std::fs::read_to_string(&path).unwrap();
    for key in ["standard", "diverse", "threshold", "seed"] {
        assert!(text.contains(key), "missing key {key}");
    }
}

#[test]
fn aggregate_single_annotator() {
    let records = vec![AnnotationRecord {
        pair_id: "p".into(),
        annotator_id: "ann1".into(),
        appropriateness: 4,
        coherence: 5,
    }];
    let agg = aggregate_annotations(&records).unwrap();
    let a = &agg["p"];
    assert!((a.human_score - 4.5).abs() < 1e-15);
    assert_eq!(a.label, Label::Positive);
}

#[test]
fn aggregate_three_annotators() {
    let ratings = [(5, 5), (4, 4), (3, 4)];
    let records: Vec<AnnotationRecord> = ratings
        .iter()
        .enumerate()
        .map(|(i, &(a, c))| AnnotationRecord {
            pair_id: "p".into(),
            annotator_id: format!("ann{i}"),
            appropriateness: a,
            coherence: c,
        })
        .collect();
    let agg = aggregate_annotations(&records).unwrap();
    assert!((agg["p"].human_score - 25.0 / 6.0).abs() < 1e-12);
    assert_eq!(agg["p"].label, Label::Positive);
}

#[test]
fn aggregate_low_scores_negative() {
    let records = vec![AnnotationRecord {
        pair_id: "p".into(),
        annotator_id: "ann1".into(),
        appropriateness: 2,
        coherence: 2,
    }];
    let agg = aggregate_annotations(&records).unwrap();
    assert!((agg["p"].human_score - 2.0).abs() < 1e-15);
    assert_eq!(agg["p"].label, Label::Negative);
}

#[test]
fn aggregate_boundary_exactly_four_is_positive() {
    let records = vec![AnnotationRecord {
        pair_id: "p".into(),
        annotator_id: "ann1".into(),
        appropriateness: 4,
        coherence: 4,
    }];
    let agg = aggregate_annotations(&records).unwrap();
    assert_eq!(agg["p"].label, Label::Positive);
}

#[test]
fn annotations_csv_roundtrip_and_missing_aspect() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.csv");
    std::fs::write(
        &path,
        "pair_id,annotator_id,appropriateness,coherence\np1,a1,4,5\np1,a2,3,4\n",
    )
    .unwrap();
    let records = load_annotations(&path).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].appropriateness, 4);

    std::fs::write(
        &path,
        "pair_id,annotator_id,appropriateness,coherence\np1,a1,4,\n",
    )
    .unwrap();
    let err = load_annotations(&path).unwrap_err();
    match err {
        CmnError::InvalidAnnotation {
            pair_id,
            annotator_id,
            message,
        } => {
            assert_eq!(pair_id, "p1");
            assert_eq!(annotator_id, "a1");
            assert!(message.contains("coherence"));
        }
        other => panic!("unexpected error {other:?}"),
    }

    std::fs::write(
        &path,
        "pair_id,annotator_id,appropriateness,coherence\np1,a1,7,3\n",
    )
    .unwrap();
    let err = load_annotations(&path).unwrap_err();
    assert!(matches!(err, CmnError::InvalidAnnotation { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bleu1_self_is_one(words in proptest::collection::vec("[a-z]{1,6}", 1..20)) {
        let tokens: Vec<String> = words;
        prop_assert!((bleu1(&tokens, &tokens) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu1_stays_in_unit_interval(
        cand in proptest::collection::vec("[a-c]{1,2}", 0..12),
        refr in proptest::collection::vec("[a-c]{1,2}", 1..12),
    ) {
        let b = bleu1(&cand, &refr);
        prop_assert!((0.0..=1.0).contains(&b));
    }

    #[test]
    fn nsp_batch_is_deterministic_and_cross_conversation(
        seed in any::<u64>(),
        neg_prob in 0.0f64..=1.0,
        n_convs in 2usize..6,
        per_conv in 1usize..4,
    ) {
        let mut pairs = Vec::new();
        for c in 0..n_convs {
            for t in 0..per_conv {
                pairs.push(pair(
                    &format!("p{c}-{t}"),
                    &format!("conv{c}"),
                    t as u32,
                    "some shared context",
                    &format!("reply {c} {t}"),
                ));
            }
        }
        let mut rng1 = ChaCha8Rng::seed_from_u64(seed);
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
        let items1 = make_nsp_batch(&pairs, neg_prob, &mut rng1).unwrap();
        let items2 = make_nsp_batch(&pairs, neg_prob, &mut rng2).unwrap();
        prop_assert_eq!(&items1, &items2);
        for item in &items1 {
            if item.nsp_label == 0 {
                prop_assert_ne!(&item.response_source_conversation, &item.conversation_id);
            } else {
                prop_assert_eq!(&item.response_source_conversation, &item.conversation_id);
            }
        }
    }

    #[test]
    fn eval_sets_disjoint_and_thresholded(
        seed in any::<u64>(),
        k_standard in 1usize..5,
        k_diverse in 0usize..6,
        overlaps in proptest::collection::vec(0usize..=10, 6..24),
    ) {
        let reference: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let ref_text = reference.join(" ");
        let pairs: Vec<DialoguePair> = overlaps
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mut cand: Vec<String> = reference[..k].to_vec();
                cand.extend((k..10).map(|j| format!("x{i}-{j}")));
                with_candidate(
                    pair(&format!("p{i:02}"), &format!("c{i}"), 0, "ctx", &ref_text),
                    &cand.join(" "),
                )
            })
            .collect();
        let split = build_eval_sets(&pairs, k_standard, 0.2, k_diverse, seed).unwrap();
        prop_assert_eq!(split.standard.len(), k_standard);
        prop_assert!(split.diverse.len() <= k_diverse);
        let standard: HashSet<_> = split.standard.iter().collect();
        for id in &split.diverse {
            prop_assert!(!standard.contains(id));
            let p = pairs.iter().find(|p| &p.pair_id == id).unwrap();
            let b = bleu1(&p.candidate_tokens().unwrap(), &p.reference_tokens());
            prop_assert!(b < 0.2);
        }
    }

    #[test]
    fn aggregate_scores_within_band(
        ratings in proptest::collection::vec((1i64..=5, 1i64..=5), 1..8),
    ) {
        let records: Vec<AnnotationRecord> = ratings
            .iter()
            .enumerate()
            .map(|(i, &(a, c))| AnnotationRecord {
                pair_id: "p".into(),
                annotator_id: format!("ann{i}"),
                appropriateness: a,
                coherence: c,
            })
            .collect();
        let agg = aggregate_annotations(&records).unwrap();
        let score = agg["p"].human_score;
        prop_assert!((1.0..=5.0).contains(&score));
        prop_assert_eq!(agg["p"].label == Label::Positive, score >= 4.0);
    }
}

#[test]
fn synthetic_topic_corpus_has_advertised_shape() {
    let pairs = synthetic::topic_corpus(25, 20, 7);
    assert_eq!(pairs.len(), 500);
    let conversations: HashSet<&str> = pairs.iter().map(|p| p.conversation_id.as_str()).collect();
    assert_eq!(conversations.len(), 25);
    let mut vocab: HashSet<String> = HashSet::new();
    for pair in &pairs {
        vocab.extend(pair.context_tokens());
        vocab.extend(pair.reference_tokens());
    }
    assert!(vocab.len() <= 200, "vocabulary {} exceeds 200", vocab.len());
    assert_eq!(pairs, synthetic::topic_corpus(25, 20, 7));
    assert_ne!(pairs, synthetic::topic_corpus(25, 20, 8));
    for pair in &pairs {
        assert!(!pair.context_tokens().is_empty());
        assert!(!pair.reference_tokens().is_empty());
        assert!(pair.candidate.is_none());
    }
}

#[test]
fn synthetic_one_to_many_candidates_have_designed_overlap() {
    let set = synthetic::one_to_many_corpus(16, 12, 2, 11).unwrap();
    assert_eq!(set.train.len(), 16 * 12);
    assert_eq!(set.scored.len(), 16 * 2 * 3);
    assert_eq!(set.annotations.len(), set.scored.len() * 2);
    let aggregated = aggregate_annotations(&set.annotations).unwrap();
    for pair in &set.scored {
        let reference = pair.reference_tokens();
        let candidate = pair.candidate_tokens().unwrap();
        let overlap = bleu1(&candidate, &reference);
        let human = aggregated[&pair.pair_id].human_score;
        if pair.pair_id.ends_with("close") {
            assert!(overlap >= 0.6, "{}: overlap {overlap}", pair.pair_id);
            assert!(human >= 4.0);
        } else if pair.pair_id.ends_with("div") {
            assert_eq!(overlap, 0.0, "{}: diverse candidate shares unigrams", pair.pair_id);
            assert!(human >= 4.0);
        } else {
            assert_eq!(overlap, 0.0);
            assert!(human <= 2.0);
            // Off-topic words come from a different topic than the context's.
            let context_vocab: HashSet<String> = set
                .train
                .iter()
                .filter(|p| p.conversation_id == pair.conversation_id)
                .flat_map(|p| p.reference_tokens())
                .collect();
            let content: Vec<&String> = candidate
                .iter()
                .filter(|t| !["i", "want", "more", "with", "my", "give", "me", "some", "for", "you", "should", "get", "your", "plus"].contains(&t.as_str()))
                .collect();
            assert!(!content.is_empty());
            for word in content {
                assert!(
                    !context_vocab.contains(word),
                    "{}: off-topic word {word} appears in conversation vocabulary",
                    pair.pair_id
                );
            }
        }
    }
}

#[test]
fn synthetic_attach_candidates_marks_true_continuations() {
    let pairs = synthetic::topic_corpus(10, 40, 3);
    let (scored, truth) = synthetic::attach_candidates(&pairs, 0.5, 9).unwrap();
    assert_eq!(scored.len(), pairs.len());
    assert_eq!(truth.len(), pairs.len());
    let positives = truth.iter().filter(|&&t| t).count();
    assert!((150..=250).contains(&positives), "positives {positives}");
    let references: HashMap<&str, HashSet<&str>> = {
        let mut by_conv: HashMap<&str, HashSet<&str>> = HashMap::new();
        for p in &pairs {
            by_conv
                .entry(p.conversation_id.as_str())
                .or_default()
                .insert(p.reference.as_str());
        }
        by_conv
    };
    for (pair, &is_true) in scored.iter().zip(&truth) {
        let candidate = pair.candidate.as_deref().unwrap();
        if is_true {
            assert_eq!(candidate, pair.reference);
        } else {
            let foreign = references
                .iter()
                .any(|(conv, refs)| *conv != pair.conversation_id && refs.contains(candidate));
            assert!(foreign, "{}: candidate not drawn from another conversation", pair.pair_id);
        }
    }

    let single = synthetic::topic_corpus(1, 4, 0);
    assert!(matches!(
        synthetic::attach_candidates(&single, 0.5, 0),
        Err(CmnError::SingleConversation(1))
    ));
}

#[test]
fn synthetic_graded_candidates_hit_exact_overlap_fractions() {
    let pairs = synthetic::graded_candidate_corpus(100, 5);
    assert_eq!(pairs.len(), 100);
    for (index, pair) in pairs.iter().enumerate() {
        let reference = pair.reference_tokens();
        let candidate = pair.candidate_tokens().unwrap();
        assert_eq!(candidate.len(), reference.len());
        let length = reference.len();
        let keep = match index % 5 {
            0 => length,
            1 => length - 1,
            2 => length / 2,
            3 => 1,
            _ => 0,
        };
        let expected = keep as f64 / length as f64;
        let got = bleu1(&candidate, &reference);
        assert!(
            (got - expected).abs() < 1e-12,
            "{}: bleu {got} expected {expected}",
            pair.pair_id
        );
    }
}

#[test]
fn synthetic_speaker_tags_identify_conversations() {
    let pairs = synthetic::topic_corpus(25, 20, 7);
    let tagged = synthetic::with_speaker_tags(&pairs);
    assert_eq!(tagged.len(), pairs.len());

    let mut name_by_conversation: HashMap<String, String> = HashMap::new();
    for (plain, tag) in pairs.iter().zip(&tagged) {
        // Same name bracketing both sides of every utterance.
        let ctx = tag.context_tokens();
        let reply = tag.reference_tokens();
        let name = ctx.first().unwrap().clone();
        assert_eq!(ctx.last().unwrap(), &name);
        assert_eq!(reply.first().unwrap(), &name);
        assert_eq!(reply.last().unwrap(), &name);
        assert_eq!(&tag.context[name.len() + 1..tag.context.len() - name.len() - 1], plain.context);
        assert_eq!(
            &tag.reference[name.len() + 1..tag.reference.len() - name.len() - 1],
            plain.reference
        );
        assert_eq!(tag.pair_id, plain.pair_id);
        assert_eq!(tag.candidate, None);

        let conv = tag.conversation_id.clone();
        let entry = name_by_conversation.entry(conv).or_insert_with(|| name.clone());
        assert_eq!(
            *entry, name,
            "{}: name changed within a conversation",
            tag.conversation_id
        );
    }
    // Distinct conversations get distinct names (25 conversations, 32 names).
    let distinct: HashSet<&String> = name_by_conversation.values().collect();
    assert_eq!(distinct.len(), 25);
    // Names are new words: none collides with the untagged vocabulary.
    let plain_vocab: HashSet<String> = pairs
        .iter()
        .flat_map(|p| p.context_tokens().into_iter().chain(p.reference_tokens()))
        .collect();
    for name in distinct {
        assert!(!plain_vocab.contains(name), "{name} already used by a template");
    }
    // The tagged corpus still fits the bounded-vocabulary guarantee.
    let tagged_vocab: HashSet<String> = tagged
        .iter()
        .flat_map(|p| p.context_tokens().into_iter().chain(p.reference_tokens()))
        .collect();
    assert!(tagged_vocab.len() <= 200, "vocabulary {}", tagged_vocab.len());
}

#[test]
fn dialogue_and_annotation_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let set = synthetic::one_to_many_corpus(4, 4, 1, 2).unwrap();

    let corpus_path = dir.path().join("pairs.jsonl");
    let mut pairs = set.train.clone();
    pairs.extend(set.scored.iter().cloned());
    save_dialogues(&corpus_path, &pairs).unwrap();
    let loaded = load_dialogues(&corpus_path, CorpusFormat::Jsonl).unwrap();
    assert_eq!(loaded, pairs);

    let annotation_path = dir.path().join("ratings.csv");
    save_annotations(&annotation_path, &set.annotations).unwrap();
    let loaded = load_annotations(&annotation_path).unwrap();
    assert_eq!(loaded, set.annotations);
}
