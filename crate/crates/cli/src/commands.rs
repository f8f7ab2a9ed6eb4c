//! The six pipeline commands. Every artifact written here embeds the
//! effective-config hash and the run seeds so outputs are traceable to the
//! exact configuration that produced them.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use cmn_core::analysis::{
    cohen_kappa, correlate_run, project_embeddings, CorrelationRow, EmbeddedPoint,
    ProjectionMethod, ReportTable,
};
use cmn_core::corpus::{
    aggregate_annotations, build_eval_sets, load_annotations, load_dialogues, AnnotationRecord,
    CorpusFormat, DialoguePair, EvalSetSplit,
};
use cmn_core::evaluator::{read_score_report, score_all, RunHeader, ScoreOptions, ScoreRecord};
use cmn_core::model::CmnModel;
use cmn_core::training::train;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunContext, Seeds};

/// Which score column is the headline of a report. All three columns are
/// always computed and written; the mode only selects the one summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Gated combination: g · I(context, candidate) + I(candidate, reference).
    Full,
    /// Without the coherence gate: I(context, candidate) + I(candidate, reference).
    #[value(name = "wo_nsp")]
    WoNsp,
    /// Without the contrastive terms: the coherence probability g alone.
    #[value(name = "wo_mi")]
    WoMi,
}

impl Mode {
    fn variant(self) -> &'static str {
        match self {
            Mode::Full => "score",
            Mode::WoNsp => "score_wo_nsp",
            Mode::WoMi => "score_wo_mi",
        }
    }

    fn headline(self, record: &ScoreRecord) -> f64 {
        match self {
            Mode::Full => record.score,
            Mode::WoNsp => record.score_wo_nsp,
            Mode::WoMi => record.score_wo_mi,
        }
    }
}

/// Two-dimensional projection algorithm for `project`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Principal components (deterministic, orientation-normalized).
    Pca,
    /// Exact t-SNE (deterministic for a given seed).
    Tsne,
}

impl Method {
    fn core(self) -> ProjectionMethod {
        match self {
            Method::Pca => ProjectionMethod::Pca,
            Method::Tsne => ProjectionMethod::Tsne,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Tsne => "tsne",
        }
    }
}

fn load_pairs(label: &str, path: &Path) -> Result<Vec<DialoguePair>> {
    load_dialogues(path, CorpusFormat::Jsonl)
        .with_context(|| format!("{label}: reading dialogue pairs from `{}`", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating `{}`", path.display()))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Inserts the provenance stamp (and any extras) into a JSON object.
fn stamp_json(value: Value, ctx: &RunContext, extra: &[(&str, Value)]) -> Result<Value> {
    let Value::Object(mut map) = value else {
        bail!("internal: artifact did not serialize to a JSON object");
    };
    map.insert("config_hash".into(), json!(ctx.hash));
    map.insert("seeds".into(), serde_json::to_value(ctx.seeds())?);
    for (key, value) in extra {
        map.insert((*key).into(), value.clone());
    }
    Ok(Value::Object(map))
}

fn write_pretty_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing `{}`", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct TrainManifest {
    command: &'static str,
    config_hash: String,
    seeds: Seeds,
    corpus: String,
    n_pairs: usize,
    steps: usize,
    final_total: f64,
    checkpoint: String,
    published_checkpoint: String,
    training_log: String,
    effective_config: String,
}

/// Trains on `paths.corpus`, writing the checkpoint, the step log, a frozen
/// copy of the effective config, and a manifest tying them together. The
/// final checkpoint is also published at `paths.checkpoint` so that later
/// commands driven by the same config find it.
pub fn cmd_train(ctx: &RunContext) -> Result<()> {
    ctx.require_file("paths.corpus", &ctx.paths.corpus)?;
    let pairs = load_pairs("paths.corpus", &ctx.paths.corpus)?;
    ctx.ensure_output_dir()?;
    let out = &ctx.paths.output_dir;

    // The frozen config reproduces the run; the hash comment ties artifacts
    // back to it without affecting the hashed content.
    let frozen_path = out.join("effective_config.toml");
    let frozen = format!(
        "# Effective run configuration with every override applied.\n# config_hash: {}\n{}",
        ctx.hash,
        toml::to_string_pretty(&ctx.config).context("serializing effective config")?
    );
    std::fs::write(&frozen_path, frozen)
        .with_context(|| format!("writing `{}`", frozen_path.display()))?;

    let (_model, outcome) = train(&pairs, &ctx.config.model, &ctx.config.train, out)?;

    let publish = &ctx.paths.checkpoint;
    if *publish != outcome.checkpoint_path {
        let already_same = publish.exists()
            && std::fs::canonicalize(publish).ok()
                == std::fs::canonicalize(&outcome.checkpoint_path).ok();
        if !already_same {
            if let Some(parent) = publish.parent() {
                std::fs::create_dir_all(parent).with_context(|| {
                    format!("paths.checkpoint: cannot create `{}`", parent.display())
                })?;
            }
            std::fs::copy(&outcome.checkpoint_path, publish).with_context(|| {
                format!("paths.checkpoint: cannot publish to `{}`", publish.display())
            })?;
        }
    }

    let manifest = TrainManifest {
        command: "train",
        config_hash: ctx.hash.clone(),
        seeds: ctx.seeds(),
        corpus: ctx.paths.corpus.display().to_string(),
        n_pairs: pairs.len(),
        steps: outcome.steps,
        final_total: outcome.final_total,
        checkpoint: outcome.checkpoint_path.display().to_string(),
        published_checkpoint: publish.display().to_string(),
        training_log: outcome.log_path.display().to_string(),
        effective_config: frozen_path.display().to_string(),
    };
    write_pretty_json(&out.join("train_manifest.json"), &serde_json::to_value(&manifest)?)?;

    println!(
        "trained {} steps on {} pairs; final loss {:.6}",
        outcome.steps,
        pairs.len(),
        outcome.final_total
    );
    println!("checkpoint: {}", publish.display());
    println!("training log: {}", outcome.log_path.display());
    Ok(())
}

/// Loads a checkpoint and errors when it cannot be the product of the
/// configured architecture: the latent width must match exactly, and the
/// checkpoint's vocabulary must fit under the configured cap (training
/// shrinks the cap to the words actually seen, so equality is not required).
fn check_model_matches(ctx: &RunContext, model: &CmnModel) -> Result<()> {
    let ckpt = model.config();
    let cfg = &ctx.config.model;
    if ckpt.latent_dim != cfg.latent_dim {
        bail!(
            "checkpoint/config mismatch: latent_dim is {} in the checkpoint but {} in the config",
            ckpt.latent_dim,
            cfg.latent_dim
        );
    }
    if ckpt.vocab_size > cfg.vocab_size {
        bail!(
            "checkpoint/config mismatch: checkpoint vocabulary has {} entries, above the configured cap {}",
            ckpt.vocab_size,
            cfg.vocab_size
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ScoreCsvRow<'a> {
    pair_id: &'a str,
    g: f64,
    mi_context: f64,
    mi_reference: f64,
    score: f64,
    score_wo_nsp: f64,
    score_wo_mi: f64,
    n_negatives: usize,
    mc_samples: usize,
    headline_variant: &'a str,
    headline: f64,
    config_hash: &'a str,
    seed_model: u64,
    seed_train: u64,
    seed_eval: u64,
}

/// Scores every pair in the input file (default: `paths.corpus`) with the
/// configured checkpoint. Contrastive negatives for each pair are drawn
/// from the other conversations in the same file.
pub fn cmd_score(ctx: &RunContext, pairs_override: Option<&Path>, mode: Mode) -> Result<()> {
    let (pairs_label, pairs_path) = match pairs_override {
        Some(path) => ("--pairs", path.to_path_buf()),
        None => ("paths.corpus", ctx.paths.corpus.clone()),
    };
    ctx.require_file("paths.checkpoint", &ctx.paths.checkpoint)?;
    ctx.require_file(pairs_label, &pairs_path)?;

    let model = CmnModel::load(&ctx.paths.checkpoint)
        .with_context(|| format!("loading checkpoint `{}`", ctx.paths.checkpoint.display()))?;
    check_model_matches(ctx, &model)?;

    let pairs = load_pairs(pairs_label, &pairs_path)?;
    let missing: Vec<&str> = pairs
        .iter()
        .filter(|p| p.candidate.is_none())
        .map(|p| p.pair_id.as_str())
        .collect();
    if !missing.is_empty() {
        bail!(
            "{pairs_label}: {} of {} pairs have no candidate response to score: {:?}",
            missing.len(),
            pairs.len(),
            missing
        );
    }

    let options = ScoreOptions {
        n_negatives: ctx.config.eval.n_negatives,
        mc_samples: ctx.config.eval.mc_samples,
        seed: ctx.config.eval.seed,
    };
    let records = score_all(&pairs, &pairs, &model, &options)?;

    ctx.ensure_output_dir()?;
    let out = &ctx.paths.output_dir;
    let jsonl_path = out.join("scores.jsonl");
    let csv_path = out.join("scores.csv");

    let header = RunHeader {
        checkpoint: ctx.paths.checkpoint.display().to_string(),
        n_negatives: options.n_negatives,
        mc_samples: options.mc_samples,
        seed: options.seed,
    };
    let header = stamp_json(
        serde_json::to_value(&header)?,
        ctx,
        &[("headline_variant", json!(mode.variant()))],
    )?;
    let mut text = serde_json::to_string(&header)?;
    text.push('\n');
    for record in &records {
        text.push_str(&serde_json::to_string(record)?);
        text.push('\n');
    }
    std::fs::write(&jsonl_path, text)
        .with_context(|| format!("writing `{}`", jsonl_path.display()))?;

    let seeds = ctx.seeds();
    let csv_rows: Vec<ScoreCsvRow> = records
        .iter()
        .map(|r| ScoreCsvRow {
            pair_id: &r.pair_id,
            g: r.g,
            mi_context: r.mi_context,
            mi_reference: r.mi_reference,
            score: r.score,
            score_wo_nsp: r.score_wo_nsp,
            score_wo_mi: r.score_wo_mi,
            n_negatives: r.n_negatives,
            mc_samples: r.mc_samples,
            headline_variant: mode.variant(),
            headline: mode.headline(r),
            config_hash: &ctx.hash,
            seed_model: seeds.model,
            seed_train: seeds.train,
            seed_eval: seeds.eval,
        })
        .collect();
    write_csv(&csv_path, &csv_rows)?;

    let mean = records.iter().map(|r| mode.headline(r)).sum::<f64>() / records.len() as f64;
    println!(
        "scored {} pairs; headline `{}` mean {:.4}",
        records.len(),
        mode.variant(),
        mean
    );
    println!("reports: {} and {}", jsonl_path.display(), csv_path.display());
    Ok(())
}

/// Splits a candidate-bearing corpus into the two evaluation sets and saves
/// them with their construction parameters.
pub fn cmd_build_eval_set(
    ctx: &RunContext,
    pairs_override: Option<&Path>,
    k_standard: usize,
    threshold: f64,
    k_diverse: usize,
) -> Result<()> {
    let (pairs_label, pairs_path) = match pairs_override {
        Some(path) => ("--pairs", path.to_path_buf()),
        None => ("paths.corpus", ctx.paths.corpus.clone()),
    };
    ctx.require_file(pairs_label, &pairs_path)?;
    let pairs = load_pairs(pairs_label, &pairs_path)?;

    let split = build_eval_sets(&pairs, k_standard, threshold, k_diverse, ctx.config.eval.seed)?;

    ctx.ensure_output_dir()?;
    let path = ctx.paths.output_dir.join("eval_sets.json");
    let value = stamp_json(
        serde_json::to_value(&split)?,
        ctx,
        &[
            ("k_standard", json!(k_standard)),
            ("k_diverse", json!(k_diverse)),
        ],
    )?;
    write_pretty_json(&path, &value)?;

    println!(
        "standard set: {} pairs (highest candidate-reference overlap)",
        split.standard.len()
    );
    println!(
        "diverse set: {} pairs (overlap below {})",
        split.diverse.len(),
        split.threshold
    );
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct CorrelationCsvRow<'a> {
    split: &'a str,
    metric_variant: &'a str,
    pearson: f64,
    pearson_p: f64,
    spearman: f64,
    spearman_p: f64,
    n: usize,
    config_hash: &'a str,
    seed_model: u64,
    seed_train: u64,
    seed_eval: u64,
}

/// Correlates a score report against aggregated human judgments, per score
/// variant and per split. With `--eval-sets` the report is restricted to
/// each saved split; otherwise all records form one split.
pub fn cmd_correlate(
    ctx: &RunContext,
    scores_override: Option<&Path>,
    eval_sets: Option<&Path>,
    split: Option<&str>,
) -> Result<()> {
    let scores_path = scores_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.paths.output_dir.join("scores.jsonl"));
    ctx.require_file("--scores", &scores_path)?;
    ctx.require_file("paths.annotations", &ctx.paths.annotations)?;

    let (_, records) = read_score_report(&scores_path)
        .with_context(|| format!("reading score report `{}`", scores_path.display()))?;
    let annotations = load_annotations(&ctx.paths.annotations).with_context(|| {
        format!(
            "paths.annotations: reading `{}`",
            ctx.paths.annotations.display()
        )
    })?;
    let humans: BTreeMap<String, f64> = aggregate_annotations(&annotations)?
        .into_iter()
        .map(|(pair_id, agg)| (pair_id, agg.human_score))
        .collect();

    let groups: Vec<(String, Vec<ScoreRecord>)> = match eval_sets {
        Some(path) => {
            ctx.require_file("--eval-sets", path)?;
            let sets = EvalSetSplit::load(path)
                .with_context(|| format!("reading eval sets `{}`", path.display()))?;
            let mut groups = Vec::new();
            for (name, ids) in [("standard", &sets.standard), ("diverse", &sets.diverse)] {
                if split.is_some_and(|wanted| wanted != name) {
                    continue;
                }
                let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
                let subset: Vec<ScoreRecord> = records
                    .iter()
                    .filter(|r| wanted.contains(r.pair_id.as_str()))
                    .cloned()
                    .collect();
                if subset.len() < ids.len() {
                    log::warn!(
                        "split `{name}`: only {} of {} pairs appear in the score report",
                        subset.len(),
                        ids.len()
                    );
                }
                groups.push((name.to_string(), subset));
            }
            if groups.is_empty() {
                bail!(
                    "--split `{}` does not name a saved split (expected `standard` or `diverse`)",
                    split.unwrap_or_default()
                );
            }
            groups
        }
        None => vec![(split.unwrap_or("all").to_string(), records)],
    };

    let mut rows: Vec<CorrelationRow> = Vec::new();
    for (name, subset) in &groups {
        let group_rows = correlate_run(subset, &humans, name)
            .with_context(|| format!("correlating split `{name}` ({} pairs)", subset.len()))?;
        rows.extend(group_rows);
    }

    let table = ReportTable::new(rows);
    print!("{}", table.render_text());

    ctx.ensure_output_dir()?;
    let path = ctx.paths.output_dir.join("correlations.csv");
    let seeds = ctx.seeds();
    let csv_rows: Vec<CorrelationCsvRow> = table
        .rows()
        .iter()
        .map(|r| CorrelationCsvRow {
            split: &r.split,
            metric_variant: &r.metric_variant,
            pearson: r.pearson,
            pearson_p: r.pearson_p,
            spearman: r.spearman,
            spearman_p: r.spearman_p,
            n: r.n,
            config_hash: &ctx.hash,
            seed_model: seeds.model,
            seed_train: seeds.train,
            seed_eval: seeds.eval,
        })
        .collect();
    write_csv(&path, &csv_rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Each annotator's per-pair category: the mean of the two aspect ratings,
/// rounded to the nearest integer (1–5).
fn annotator_categories(
    records: &[AnnotationRecord],
) -> BTreeMap<String, BTreeMap<String, usize>> {
    let mut by_annotator: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for record in records {
        let category =
            ((record.appropriateness + record.coherence) as f64 / 2.0).round() as usize;
        by_annotator
            .entry(record.annotator_id.clone())
            .or_default()
            .insert(record.pair_id.clone(), category);
    }
    by_annotator
}

fn render_kappa_matrix(annotators: &[&str], cells: &BTreeMap<(usize, usize), f64>) -> String {
    let width = annotators
        .iter()
        .map(|a| a.len())
        .max()
        .unwrap_or(0)
        .max(7)
        + 2;
    let mut text = String::new();
    text.push_str(&" ".repeat(width));
    for name in annotators {
        text.push_str(&format!("{name:>width$}"));
    }
    text.push('\n');
    for (i, name) in annotators.iter().enumerate() {
        text.push_str(&format!("{name:<width$}"));
        for j in 0..annotators.len() {
            let value = if i == j {
                1.0
            } else {
                let key = (i.min(j), i.max(j));
                cells[&key]
            };
            text.push_str(&format!("{value:>width$.4}"));
        }
        text.push('\n');
    }
    text
}

#[derive(Serialize)]
struct KappaCsvRow<'a> {
    annotator_a: &'a str,
    annotator_b: &'a str,
    kappa: f64,
    observed_agreement: f64,
    expected_agreement: f64,
    n_pairs: usize,
    config_hash: &'a str,
    seed_model: u64,
    seed_train: u64,
    seed_eval: u64,
}

/// Pairwise inter-annotator agreement over `paths.annotations`, printed as a
/// symmetric matrix and saved both as that table and as per-pair CSV rows.
pub fn cmd_kappa(ctx: &RunContext) -> Result<()> {
    ctx.require_file("paths.annotations", &ctx.paths.annotations)?;
    let records = load_annotations(&ctx.paths.annotations).with_context(|| {
        format!(
            "paths.annotations: reading `{}`",
            ctx.paths.annotations.display()
        )
    })?;
    let by_annotator = annotator_categories(&records);
    let annotators: Vec<&str> = by_annotator.keys().map(String::as_str).collect();
    if annotators.len() < 2 {
        bail!(
            "paths.annotations: agreement needs at least 2 annotators, found {}",
            annotators.len()
        );
    }

    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut csv_rows_owned: Vec<(String, String, f64, f64, f64, usize)> = Vec::new();
    for i in 0..annotators.len() {
        for j in (i + 1)..annotators.len() {
            let left = &by_annotator[annotators[i]];
            let right = &by_annotator[annotators[j]];
            let common: Vec<&String> = left.keys().filter(|id| right.contains_key(*id)).collect();
            if common.is_empty() {
                bail!(
                    "annotators `{}` and `{}` share no rated pairs",
                    annotators[i],
                    annotators[j]
                );
            }
            let a: Vec<usize> = common.iter().map(|id| left[*id]).collect();
            let b: Vec<usize> = common.iter().map(|id| right[*id]).collect();
            let result = cohen_kappa(&a, &b).with_context(|| {
                format!(
                    "agreement between `{}` and `{}`",
                    annotators[i], annotators[j]
                )
            })?;
            cells.insert((i, j), result.kappa);
            csv_rows_owned.push((
                annotators[i].to_string(),
                annotators[j].to_string(),
                result.kappa,
                result.observed_agreement,
                result.expected_agreement,
                common.len(),
            ));
        }
    }

    let matrix = render_kappa_matrix(&annotators, &cells);
    print!("{matrix}");

    ctx.ensure_output_dir()?;
    let seeds = ctx.seeds();
    let table_path = ctx.paths.output_dir.join("kappa_table.txt");
    let table_text = format!(
        "# pairwise inter-annotator agreement (Cohen's kappa on rounded mean ratings)\n\
         # config_hash: {}\n# seeds: model={} train={} eval={}\n{}",
        ctx.hash, seeds.model, seeds.train, seeds.eval, matrix
    );
    std::fs::write(&table_path, table_text)
        .with_context(|| format!("writing `{}`", table_path.display()))?;

    let csv_path = ctx.paths.output_dir.join("kappa.csv");
    let csv_rows: Vec<KappaCsvRow> = csv_rows_owned
        .iter()
        .map(|(a, b, kappa, observed, expected, n)| KappaCsvRow {
            annotator_a: a,
            annotator_b: b,
            kappa: *kappa,
            observed_agreement: *observed,
            expected_agreement: *expected,
            n_pairs: *n,
            config_hash: &ctx.hash,
            seed_model: seeds.model,
            seed_train: seeds.train,
            seed_eval: seeds.eval,
        })
        .collect();
    write_csv(&csv_path, &csv_rows)?;
    println!("wrote {} and {}", table_path.display(), csv_path.display());
    Ok(())
}

#[derive(Serialize)]
struct ProjectionCsvRow<'a> {
    pair_id: &'a str,
    kind: &'a str,
    x: f64,
    y: f64,
    method: &'a str,
    config_hash: &'a str,
    seed_model: u64,
    seed_train: u64,
    seed_eval: u64,
}

/// Projects posterior latent means to 2-D: one `reference` point per pair,
/// plus one `response` point for every pair carrying a candidate.
pub fn cmd_project(ctx: &RunContext, pairs_override: Option<&Path>, method: Method) -> Result<()> {
    let (pairs_label, pairs_path) = match pairs_override {
        Some(path) => ("--pairs", path.to_path_buf()),
        None => ("paths.corpus", ctx.paths.corpus.clone()),
    };
    ctx.require_file("paths.checkpoint", &ctx.paths.checkpoint)?;
    ctx.require_file(pairs_label, &pairs_path)?;

    let model = CmnModel::load(&ctx.paths.checkpoint)
        .with_context(|| format!("loading checkpoint `{}`", ctx.paths.checkpoint.display()))?;
    let pairs = load_pairs(pairs_label, &pairs_path)?;

    let points: Vec<EmbeddedPoint> = pairs
        .par_iter()
        .map(|pair| {
            let context = pair.context_tokens();
            let embed = |kind: &str, response: &[String]| -> Result<EmbeddedPoint> {
                let encoded = model.encode_pair(&context, response)?;
                let posterior = model.posterior_params(&encoded)?;
                Ok(EmbeddedPoint {
                    pair_id: pair.pair_id.clone(),
                    kind: kind.to_string(),
                    vector: posterior.mean,
                })
            };
            let mut pair_points = vec![embed("reference", &pair.reference_tokens())?];
            if pair.candidate.is_some() {
                pair_points.push(embed("response", &pair.candidate_tokens()?)?);
            }
            Ok(pair_points)
        })
        .collect::<Result<Vec<Vec<EmbeddedPoint>>>>()
        .with_context(|| "embedding pairs for projection")?
        .into_iter()
        .flatten()
        .collect();

    let projected = project_embeddings(&points, method.core(), ctx.config.eval.seed)?;

    ctx.ensure_output_dir()?;
    let path = ctx.paths.output_dir.join("projection.csv");
    let seeds = ctx.seeds();
    let rows: Vec<ProjectionCsvRow> = projected
        .iter()
        .map(|p| ProjectionCsvRow {
            pair_id: &p.pair_id,
            kind: &p.kind,
            x: p.x,
            y: p.y,
            method: method.label(),
            config_hash: &ctx.hash,
            seed_model: seeds.model,
            seed_train: seeds.train,
            seed_eval: seeds.eval,
        })
        .collect();
    write_csv(&path, &rows)?;

    println!(
        "projected {} vectors from {} pairs via {}",
        projected.len(),
        pairs.len(),
        method.label()
    );
    println!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_round_the_mean_rating() {
        let records = vec![
            AnnotationRecord {
                pair_id: "p1".into(),
                annotator_id: "a".into(),
                appropriateness: 4,
                coherence: 5,
            },
            AnnotationRecord {
                pair_id: "p2".into(),
                annotator_id: "a".into(),
                appropriateness: 1,
                coherence: 2,
            },
        ];
        let by_annotator = annotator_categories(&records);
        assert_eq!(by_annotator["a"]["p1"], 5, "4.5 rounds away from zero");
        assert_eq!(by_annotator["a"]["p2"], 2, "1.5 rounds away from zero");
    }

    #[test]
    fn kappa_matrix_is_symmetric_with_unit_diagonal() {
        let annotators = ["alpha", "b2"];
        let mut cells = BTreeMap::new();
        cells.insert((0usize, 1usize), 0.25);
        let text = render_kappa_matrix(&annotators, &cells);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("1.0000") && lines[1].contains("0.2500"));
        assert!(lines[2].contains("0.2500") && lines[2].contains("1.0000"));
    }
}
