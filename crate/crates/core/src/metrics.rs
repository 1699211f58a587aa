//! Threshold-free evaluation of ID-vs-OOD scores. Scores are oriented so
//! that higher means more OOD; OOD is the positive class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{OODDecision, ScoreRow};

fn check(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 1,
            got: 0,
            hint: format!("{} ID and {} OOD scores", id.len(), ood.len()),
        });
    }
    if id.iter().chain(ood).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("evaluation scores".into()));
    }
    Ok(())
}

/// `P(ood > id) + P(ood == id) / 2` via average ranks (Mann-Whitney U).
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check(id, ood)?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&v| (v, false))
        .chain(ood.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    Ok((rank_sum - n_ood * (n_ood + 1.0) / 2.0) / (n_id * n_ood))
}

/// Average precision with OOD as positive: `sum_k (R_k - R_{k-1}) P_k` over
/// every distinct score threshold, highest first.
pub fn aupr(id: &[f64], ood: &[f64]) -> Result<f64> {
    check(id, ood)?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&v| (v, false))
        .chain(ood.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = ood.len() as f64;
    let (mut tp, mut fp, mut prev_recall, mut area) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        let recall = tp / n_pos;
        area += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// Fraction of equal entries.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            lhs: vec![predictions.len()],
            rhs: vec![labels.len()],
        });
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Equal-width histogram over `[min, max]` of the values: `(lo, hi, count)`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, n)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, n))
        .collect()
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id_dataset: String,
    pub ood_dataset: String,
    pub metric: String,
    /// `distance` or `confidence`.
    pub score_type: String,
    pub auroc: f64,
    pub aupr: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Distance and negated-confidence AUROC/AUPR for one ID/OOD pairing.
pub fn evaluate_pairing(
    id_name: &str,
    ood_name: &str,
    metric: &str,
    id: &[ScoreRow],
    ood: &[ScoreRow],
) -> Result<Vec<EvalRow>> {
    let dist = |rows: &[ScoreRow]| rows.iter().map(|r| r.distance).collect::<Vec<_>>();
    let conf = |rows: &[ScoreRow]| rows.iter().map(|r| -r.confidence).collect::<Vec<_>>();
    let row = |score_type: &str, i: Vec<f64>, o: Vec<f64>| -> Result<EvalRow> {
        Ok(EvalRow {
            id_dataset: id_name.to_string(),
            ood_dataset: ood_name.to_string(),
            metric: metric.to_string(),
            score_type: score_type.to_string(),
            auroc: auroc(&i, &o)?,
            aupr: aupr(&i, &o)?,
            n_id: i.len(),
            n_ood: o.len(),
        })
    };
    Ok(vec![
        row("distance", dist(id), dist(ood))?,
        row("confidence", conf(id), conf(ood))?,
    ])
}

/// Score rows for in-memory decisions, numbered in order.
pub fn score_rows(decisions: &[OODDecision]) -> Vec<ScoreRow> {
    decisions
        .iter()
        .enumerate()
        .map(|(i, d)| ScoreRow {
            sample_id: i,
            distance: d.distance,
            nearest_class: d.nearest_class,
            confidence: d.confidence,
            is_outlier: d.is_outlier,
        })
        .collect()
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<EvalRow>, _>>()?)
}

#[derive(Serialize)]
struct PairSummary<'a> {
    id_dataset: &'a str,
    ood_dataset: &'a str,
    metric: &'a str,
    n_id: usize,
    n_ood: usize,
    distance: Option<Areas>,
    confidence: Option<Areas>,
}

#[derive(Serialize)]
struct Areas {
    auroc: f64,
    aupr: f64,
}

/// JSON summary grouping the distance and confidence rows of each pairing.
pub fn eval_summary_json(rows: &[EvalRow]) -> Result<String> {
    let mut out: Vec<PairSummary> = Vec::new();
    for r in rows {
        let pos = out.iter().position(|p| {
            p.id_dataset == r.id_dataset && p.ood_dataset == r.ood_dataset && p.metric == r.metric
        });
        let idx = match pos {
            Some(i) => i,
            None => {
                out.push(PairSummary {
                    id_dataset: &r.id_dataset,
                    ood_dataset: &r.ood_dataset,
                    metric: &r.metric,
                    n_id: r.n_id,
                    n_ood: r.n_ood,
                    distance: None,
                    confidence: None,
                });
                out.len() - 1
            }
        };
        let areas = Some(Areas {
            auroc: r.auroc,
            aupr: r.aupr,
        });
        match r.score_type.as_str() {
            "distance" => out[idx].distance = areas,
            _ => out[idx].confidence = areas,
        }
    }
    Ok(serde_json::to_string_pretty(&serde_json::json!({ "pairings": out }))?)
}

pub fn write_eval_json(path: &Path, rows: &[EvalRow]) -> Result<()> {
    std::fs::write(path, eval_summary_json(rows)?).map_err(|e| Error::io(path, e))
}
