use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{unit, ClassStats, Metric};
use crate::error::{Error, Result};
use crate::vit::EmbeddingSet;

/// `(x - mu_c) S_c^-1 (x - mu_c)^T` with the stored inverse.
pub fn mahalanobis(x: &[f64], stats: &ClassStats, class: usize) -> f64 {
    let mu = &stats.means[class];
    let inv = stats.inverses[class].data();
    let d = mu.len();
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for i in 0..d {
        let row = &inv[i * d..(i + 1) * d];
        let s: f64 = row.iter().zip(&diff).map(|(a, b)| a * b).sum();
        q += diff[i] * s;
    }
    // the inverse is positive definite; negatives are rounding noise
    q.max(0.0)
}

fn class_distance(x: &[f64], x_unit: Option<&[f64]>, stats: &ClassStats, c: usize, metric: Metric) -> f64 {
    match metric {
        Metric::Mahalanobis => mahalanobis(x, stats, c),
        Metric::Euclidean => x
            .iter()
            .zip(&stats.means[c])
            .map(|(a, b)| (a - b) * (a - b))
            .sum(),
        Metric::Cosine => {
            let mu = &stats.means[c];
            let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 1.0;
            }
            let dot: f64 = x_unit.expect("unit vector").iter().zip(mu).map(|(a, b)| a * b).sum();
            1.0 - dot / norm
        }
    }
}

/// Minimum distance over classes and its class; ties go to the lowest index.
pub fn distance_score(x: &[f64], stats: &ClassStats, metric: Metric) -> Result<(f64, usize)> {
    if x.len() != stats.dim() {
        return Err(Error::ShapeMismatch {
            op: "distance_score",
            lhs: vec![stats.dim()],
            rhs: vec![x.len()],
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding".into()));
    }
    let x_unit = match metric {
        Metric::Cosine => Some(unit(x)?),
        _ => None,
    };
    let mut best = (f64::INFINITY, 0);
    for c in 0..stats.num_classes() {
        let dist = class_distance(x, x_unit.as_deref(), stats, c, metric);
        if dist.is_nan() {
            return Err(Error::NonFinite(format!("distance to class {c}")));
        }
        if dist < best.0 {
            best = (dist, c);
        }
    }
    Ok(best)
}

/// Maximum softmax probability and its class (first on ties).
pub fn confidence_score(logits: &[f64]) -> Result<(f64, usize)> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let mut arg = 0;
    for (j, &v) in logits.iter().enumerate() {
        if v > logits[arg] {
            arg = j;
        }
    }
    let max = logits[arg];
    let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    Ok((1.0 / z, arg))
}

/// Outlier cutoffs: a sample is an outlier when its distance exceeds
/// `t_distance` or its confidence falls below `t_conf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t_distance: f64,
    pub t_conf: f64,
}

impl Thresholds {
    pub fn new(t_distance: f64, t_conf: f64) -> Result<Self> {
        let t = Thresholds { t_distance, t_conf };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t_distance.is_finite() {
            return Err(Error::Config(format!("t_distance {} must be finite", self.t_distance)));
        }
        if !(self.t_conf > 0.0 && self.t_conf <= 1.0) {
            return Err(Error::Config(format!("t_conf {} must lie in (0, 1]", self.t_conf)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OODDecision {
    pub distance: f64,
    pub nearest_class: usize,
    pub confidence: f64,
    pub predicted_class: usize,
    pub is_outlier: bool,
    pub metric: Metric,
}

/// Scores one sample and applies `(distance > t_distance) OR (conf < t_conf)`.
pub fn decide(
    x: &[f64],
    logits: &[f64],
    stats: &ClassStats,
    thresholds: &Thresholds,
    metric: Metric,
) -> Result<OODDecision> {
    let (distance, nearest_class) = distance_score(x, stats, metric)?;
    let (confidence, predicted_class) = confidence_score(logits)?;
    Ok(OODDecision {
        distance,
        nearest_class,
        confidence,
        predicted_class,
        is_outlier: distance > thresholds.t_distance || confidence < thresholds.t_conf,
        metric,
    })
}

/// Linearly interpolated quantile (`q` in `[0, 1]`) of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 1,
            got: 0,
            hint: "quantile of an empty set".into(),
        });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile level {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("quantile input".into()));
    }
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// `t_distance` = distance quantile at `target_tpr`; `t_conf` = confidence
/// quantile at `1 - target_tpr`, both over in-distribution validation scores.
pub fn calibrate_thresholds(distances: &[f64], confidences: &[f64], target_tpr: f64) -> Result<Thresholds> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::Config(format!("target TPR {target_tpr} outside (0, 1]")));
    }
    let t = Thresholds {
        t_distance: quantile(distances, target_tpr)?,
        t_conf: quantile(confidences, 1.0 - target_tpr)?,
    };
    t.validate()?;
    Ok(t)
}

/// [`decide`] for every row of an embedding set; requires its logits.
pub fn score_embeddings(
    emb: &EmbeddingSet,
    stats: &ClassStats,
    thresholds: &Thresholds,
    metric: Metric,
) -> Result<Vec<OODDecision>> {
    let logits = emb.logits.as_ref().ok_or_else(|| {
        Error::Data("embedding set has no classifier logits; confidence cannot be scored".into())
    })?;
    (0..emb.len())
        .map(|i| decide(emb.row(i), logits.row(i), stats, thresholds, metric))
        .collect()
}

/// Calibrates thresholds on embeddings with logits.
pub fn calibrate_on(
    emb: &EmbeddingSet,
    stats: &ClassStats,
    metric: Metric,
    target_tpr: f64,
) -> Result<Thresholds> {
    let loose = Thresholds {
        t_distance: 0.0,
        t_conf: 1.0,
    };
    let d = score_embeddings(emb, stats, &loose, metric)?;
    let dist: Vec<f64> = d.iter().map(|d| d.distance).collect();
    let conf: Vec<f64> = d.iter().map(|d| d.confidence).collect();
    calibrate_thresholds(&dist, &conf, target_tpr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: usize,
    pub distance: f64,
    pub nearest_class: usize,
    pub confidence: f64,
    pub is_outlier: bool,
}

pub fn write_scores_csv(path: &Path, decisions: &[OODDecision]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, d) in decisions.iter().enumerate() {
        w.serialize(ScoreRow {
            sample_id: i,
            distance: d.distance,
            nearest_class: d.nearest_class,
            confidence: d.confidence,
            is_outlier: d.is_outlier,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<ScoreRow>, _>>()?;
    if let Some(bad) = rows.iter().find(|r| !r.distance.is_finite() || !r.confidence.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{}: sample {} has a non-finite score",
            path.display(),
            bad.sample_id
        )));
    }
    Ok(rows)
}
