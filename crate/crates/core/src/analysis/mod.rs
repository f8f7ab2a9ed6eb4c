//! Statistics for comparing automatic scores with human judgments:
//! correlation coefficients with significance, inter-annotator agreement,
//! and 2-D projections of latent representations.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::evaluator::ScoreRecord;
use crate::{CmnError, Result};

mod projection;

pub use projection::{project_embeddings, EmbeddedPoint, ProjectionMethod, ProjectionPoint};

/// Which correlation statistic a result reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

/// A correlation coefficient with its two-sided significance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub coefficient: f64,
    pub p_value: f64,
    pub n: usize,
    pub kind: CorrelationKind,
}

fn check_paired_inputs(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(CmnError::DimensionMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(CmnError::TooFewObservations {
            needed: 3,
            found: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(CmnError::NonFinite("correlation inputs".into()));
    }
    Ok(())
}

/// Two-sided p-value for a correlation of `r` over `n` observations, from the
/// exact null distribution of `r·sqrt((n−2)/(1−r²))`.
fn correlation_p_value(r: f64, n: usize) -> f64 {
    if (1.0 - r * r) <= 0.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r.abs() * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom");
    (2.0 * dist.cdf(-t)).min(1.0)
}

/// Linear correlation between two equally long samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    check_paired_inputs(xs, ys)?;
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(CmnError::ZeroVariance("first sample"));
    }
    if var_y == 0.0 {
        return Err(CmnError::ZeroVariance("second sample"));
    }
    let coefficient = (cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0);
    Ok(CorrelationResult {
        coefficient,
        p_value: correlation_p_value(coefficient, xs.len()),
        n: xs.len(),
        kind: CorrelationKind::Pearson,
    })
}

/// Positions in sorted order, 1-based; tied values share the average of
/// their positions.
pub fn average_ranks(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CmnError::NonFinite("rank inputs".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    Ok(ranks)
}

/// Rank correlation: the linear correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    check_paired_inputs(xs, ys)?;
    let rank_x = average_ranks(xs)?;
    let rank_y = average_ranks(ys)?;
    let base = pearson(&rank_x, &rank_y)?;
    Ok(CorrelationResult {
        kind: CorrelationKind::Spearman,
        ..base
    })
}

/// Area under the ROC curve of `values` against boolean `labels`, via the
/// rank-sum formulation; tied values contribute half. Requires at least one
/// label of each class.
pub fn auc(labels: &[bool], values: &[f64]) -> Result<f64> {
    if labels.len() != values.len() {
        return Err(CmnError::DimensionMismatch {
            left: labels.len(),
            right: values.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CmnError::TooFewObservations {
            needed: 1,
            found: 0,
        });
    }
    let ranks = average_ranks(values)?;
    let positive_rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter_map(|(&label, &rank)| label.then_some(rank))
        .sum();
    let n_pos = positives as f64;
    Ok((positive_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * negatives as f64))
}

/// Chance-corrected agreement between two annotators over the same items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    /// Sorted union of the categories either annotator used.
    pub categories: Vec<usize>,
}

pub fn cohen_kappa(a: &[usize], b: &[usize]) -> Result<KappaResult> {
    if a.len() != b.len() {
        return Err(CmnError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(CmnError::TooFewObservations {
            needed: 1,
            found: 0,
        });
    }
    let mut categories: Vec<usize> = a.iter().chain(b).copied().collect();
    categories.sort_unstable();
    categories.dedup();

    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let expected = categories
        .iter()
        .map(|k| {
            let pa = a.iter().filter(|&&v| v == *k).count() as f64 / n;
            let pb = b.iter().filter(|&&v| v == *k).count() as f64 / n;
            pa * pb
        })
        .sum::<f64>();

    let kappa = if expected == 1.0 {
        if observed == 1.0 {
            // both annotators constant and identical: perfect agreement
            1.0
        } else {
            return Err(CmnError::DegenerateMarginals);
        }
    } else {
        (observed - expected) / (1.0 - expected)
    };
    Ok(KappaResult {
        kappa,
        observed_agreement: observed,
        expected_agreement: expected,
        categories,
    })
}

/// One table row: both correlations of one score variant against human
/// judgments on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub split: String,
    pub metric_variant: String,
    pub pearson: f64,
    pub pearson_p: f64,
    pub spearman: f64,
    pub spearman_p: f64,
    pub n: usize,
}

/// The score variants a [`ScoreRecord`] carries, in reporting order.
pub const SCORE_VARIANTS: [&str; 3] = ["score", "score_wo_nsp", "score_wo_mi"];

fn variant_value(record: &ScoreRecord, variant: &str) -> f64 {
    match variant {
        "score" => record.score,
        "score_wo_nsp" => record.score_wo_nsp,
        "score_wo_mi" => record.score_wo_mi,
        other => unreachable!("unknown score variant {other}"),
    }
}

/// Correlates every score variant with human judgments for one split.
///
/// Every scored pair must have a human judgment; leftover judgments for
/// unscored pairs are ignored.
pub fn correlate_run(
    scores: &[ScoreRecord],
    humans: &BTreeMap<String, f64>,
    split: &str,
) -> Result<Vec<CorrelationRow>> {
    let mut missing: Vec<String> = scores
        .iter()
        .filter(|r| !humans.contains_key(&r.pair_id))
        .map(|r| r.pair_id.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(CmnError::MissingPairs {
            origin: "annotations",
            ids: missing,
        });
    }
    let human_values: Vec<f64> = scores.iter().map(|r| humans[&r.pair_id]).collect();

    SCORE_VARIANTS
        .iter()
        .map(|variant| {
            let values: Vec<f64> = scores.iter().map(|r| variant_value(r, variant)).collect();
            let linear = pearson(&values, &human_values)?;
            let ranked = spearman(&values, &human_values)?;
            Ok(CorrelationRow {
                split: split.to_string(),
                metric_variant: variant.to_string(),
                pearson: linear.coefficient,
                pearson_p: linear.p_value,
                spearman: ranked.coefficient,
                spearman_p: ranked.p_value,
                n: scores.len(),
            })
        })
        .collect()
}

/// Accumulates correlation rows and renders them as text or CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    rows: Vec<CorrelationRow>,
}

impl ReportTable {
    pub fn new(rows: Vec<CorrelationRow>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[CorrelationRow] {
        &self.rows
    }

    pub fn extend(&mut self, rows: Vec<CorrelationRow>) {
        self.rows.extend(rows);
    }

    /// Plain-text table with aligned columns.
    pub fn render_text(&self) -> String {
        const HEADERS: [&str; 7] = [
            "split",
            "metric_variant",
            "pearson",
            "pearson_p",
            "spearman",
            "spearman_p",
            "n",
        ];
        let formatted: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.split.clone(),
                    r.metric_variant.clone(),
                    format!("{:+.4}", r.pearson),
                    format!("{:.3e}", r.pearson_p),
                    format!("{:+.4}", r.spearman),
                    format!("{:.3e}", r.spearman_p),
                    r.n.to_string(),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..HEADERS.len())
            .map(|c| {
                formatted
                    .iter()
                    .map(|row| row[c].len())
                    .chain(std::iter::once(HEADERS[c].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let render_row = |cells: &[String]| -> String {
            cells
                .iter()
                .enumerate()
                .map(|(c, cell)| format!("{:width$}", cell, width = widths[c]))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let header_cells: Vec<String> = HEADERS.iter().map(|h| h.to_string()).collect();
        out.push_str(&render_row(&header_cells));
        out.push('\n');
        for row in &formatted {
            out.push_str(&render_row(row));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(CmnError::from)?;
        for row in &self.rows {
            writer.serialize(row).map_err(CmnError::from)?;
        }
        writer.flush()?;
        Ok(())
    }
}
