use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::tensor::linalg::{covariance, inverse_spd};
use crate::tensor::Tensor;
use crate::vit::EmbeddingSet;

/// Distance used to compare an embedding with the class means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `(x - mu) S^-1 (x - mu)^T`
    #[default]
    Mahalanobis,
    /// Squared Euclidean distance to the mean.
    Euclidean,
    /// `1 - cos(x, mu)`
    Cosine,
}

pub const METRICS: [Metric; 3] = [Metric::Mahalanobis, Metric::Euclidean, Metric::Cosine];

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mahalanobis => "mahalanobis",
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        METRICS
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown metric {s:?}; expected mahalanobis, euclidean or cosine"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub metric: Metric,
    /// Pool the within-class scatter into one covariance shared by all classes.
    pub shared_covariance: bool,
    /// Jitter added before inversion, relative to `trace(S) / d`.
    pub relative_jitter: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            metric: Metric::Mahalanobis,
            shared_covariance: false,
            relative_jitter: 1e-6,
        }
    }
}

impl FitOptions {
    pub fn metric(metric: Metric) -> Self {
        FitOptions {
            metric,
            ..Self::default()
        }
    }
}

/// Per-class Gaussian statistics of training embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub metric: Metric,
    pub shared_covariance: bool,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Tensor<f64>>,
    /// `(S_c + jitter_c I)^-1`.
    pub inverses: Vec<Tensor<f64>>,
    pub jitters: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ClassStats {
    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }
}

/// Scales `v` to unit length; the zero vector has no direction.
pub(crate) fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn rows_of(emb: &EmbeddingSet, idx: &[usize], normalize: bool) -> Result<Tensor<f64>> {
    let d = emb.dim();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        if normalize {
            data.extend(unit(emb.row(i))?);
        } else {
            data.extend_from_slice(emb.row(i));
        }
    }
    Tensor::new([idx.len(), d], data)
}

fn invert(cov: &Tensor<f64>, relative_jitter: f64) -> Result<(Tensor<f64>, f64)> {
    let d = cov.shape()[0];
    let trace: f64 = (0..d).map(|i| cov.data()[i * d + i]).sum();
    let inv = inverse_spd(cov, relative_jitter * trace / d as f64)?;
    Ok((inv.inverse, inv.jitter))
}

/// Fits mean, covariance (`n_c - 1` denominator) and regularized inverse for
/// every class `0..=max(label)`. Under the cosine metric the embeddings are
/// scaled to unit length first.
pub fn fit_stats(train: &EmbeddingSet, options: &FitOptions) -> Result<ClassStats> {
    if train.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 1,
            got: 0,
            hint: "no training embeddings".into(),
        });
    }
    if !options.relative_jitter.is_finite() || options.relative_jitter < 0.0 {
        return Err(Error::Config("jitter must be finite and >= 0".into()));
    }
    if !train.features.all_finite() {
        return Err(Error::NonFinite("training embeddings".into()));
    }
    let classes = *train.labels.iter().max().expect("nonempty") as usize + 1;
    let d = train.dim();
    let normalize = options.metric == Metric::Cosine;
    let mut members = vec![Vec::new(); classes];
    for (i, &l) in train.labels.iter().enumerate() {
        members[l as usize].push(i);
    }
    let needs_cov = options.metric == Metric::Mahalanobis && !options.shared_covariance;
    let mut stats = ClassStats {
        metric: options.metric,
        shared_covariance: options.shared_covariance,
        means: Vec::with_capacity(classes),
        covariances: Vec::with_capacity(classes),
        inverses: Vec::with_capacity(classes),
        jitters: Vec::with_capacity(classes),
        counts: Vec::with_capacity(classes),
    };
    let mut pooled = vec![0.0; d * d];
    for (c, idx) in members.iter().enumerate() {
        let n = idx.len();
        if n == 0 || (needs_cov && n < 2) {
            return Err(Error::InsufficientSamples {
                needed: if needs_cov { 2 } else { 1 },
                got: n,
                hint: format!(
                    "class {c} is too small for its own covariance; use shared covariance \
                     or a non-Mahalanobis metric"
                ),
            });
        }
        let rows = rows_of(train, idx, normalize)?;
        let mut mean = vec![0.0; d];
        for r in rows.data().chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let cov = if n >= 2 {
            covariance(&rows)?
        } else {
            Tensor::zeros([d, d])?
        };
        for (p, v) in pooled.iter_mut().zip(cov.data()) {
            *p += v * (n as f64 - 1.0);
        }
        stats.means.push(mean);
        stats.covariances.push(cov);
        stats.counts.push(n);
    }
    if options.shared_covariance {
        let dof = train.len() as isize - classes as isize;
        if dof < 1 {
            return Err(Error::InsufficientSamples {
                needed: classes + 1,
                got: train.len(),
                hint: "shared covariance needs more samples than classes".into(),
            });
        }
        let shared = Tensor::new([d, d], pooled.iter().map(|v| v / dof as f64).collect())?;
        let (inv, jitter) = invert(&shared, options.relative_jitter)?;
        stats.covariances = vec![shared; classes];
        stats.inverses = vec![inv; classes];
        stats.jitters = vec![jitter; classes];
    } else {
        for cov in &stats.covariances {
            let (inv, jitter) = invert(cov, options.relative_jitter)?;
            stats.inverses.push(inv);
            stats.jitters.push(jitter);
        }
    }
    Ok(stats)
}

/// Fits a single Gaussian to embeddings that all carry the same label.
pub fn fit_one_class(train: &EmbeddingSet, options: &FitOptions) -> Result<ClassStats> {
    let first = *train.labels.first().ok_or_else(|| Error::InsufficientSamples {
        needed: 2,
        got: 0,
        hint: "no training embeddings".into(),
    })?;
    if let Some(other) = train.labels.iter().find(|&&l| l != first) {
        return Err(Error::Data(format!(
            "one-class fit needs a single class, found labels {first} and {other}"
        )));
    }
    let mut relabeled = train.clone();
    relabeled.labels.iter_mut().for_each(|l| *l = 0);
    fit_stats(&relabeled, options)
}

impl ClassStats {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        let d = self.dim();
        for k in 0..self.num_classes() {
            c.insert(format!("class.{k}.mean"), &Tensor::new([d], self.means[k].clone())?);
            c.insert(format!("class.{k}.covariance"), &self.covariances[k]);
            c.insert(format!("class.{k}.inverse"), &self.inverses[k]);
        }
        c.insert_u32(
            "counts",
            vec![self.num_classes()],
            self.counts.iter().map(|&n| n as u32).collect(),
        );
        c.insert("jitters", &Tensor::new([self.num_classes()], self.jitters.clone())?);
        c.metadata.insert("metric".into(), Value::from(self.metric.name()));
        c.metadata
            .insert("shared_covariance".into(), Value::from(self.shared_covariance));
        c.metadata.insert("num_classes".into(), Value::from(self.num_classes()));
        c.metadata.insert("dim".into(), Value::from(d));
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = |key: &str| {
            c.metadata
                .get(key)
                .ok_or_else(|| Error::Data(format!("stats file lacks metadata {key:?}")))
        };
        let metric: Metric = meta("metric")?
            .as_str()
            .ok_or_else(|| Error::Data("metric must be a string".into()))?
            .parse()?;
        let classes = meta("num_classes")?
            .as_u64()
            .ok_or_else(|| Error::Data("num_classes must be an integer".into()))? as usize;
        let shared = meta("shared_covariance")?.as_bool().unwrap_or(false);
        let (_, counts) = c.get_u32("counts")?;
        let jitters = c.get::<f64>("jitters")?.into_data();
        if counts.len() != classes || jitters.len() != classes || classes == 0 {
            return Err(Error::Data("stats file class counts disagree".into()));
        }
        let mut stats = ClassStats {
            metric,
            shared_covariance: shared,
            means: Vec::new(),
            covariances: Vec::new(),
            inverses: Vec::new(),
            jitters,
            counts: counts.into_iter().map(|n| n as usize).collect(),
        };
        for k in 0..classes {
            let mean = c.get::<f64>(&format!("class.{k}.mean"))?.into_data();
            let d = mean.len();
            let cov = c.get::<f64>(&format!("class.{k}.covariance"))?;
            let inv = c.get::<f64>(&format!("class.{k}.inverse"))?;
            if cov.shape() != [d, d] || inv.shape() != [d, d] {
                return Err(Error::Data(format!("class {k} matrices are not {d}x{d}")));
            }
            stats.means.push(mean);
            stats.covariances.push(cov);
            stats.inverses.push(inv);
        }
        if stats.means.iter().any(|m| m.len() != stats.means[0].len()) {
            return Err(Error::Data("class means differ in dimension".into()));
        }
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
