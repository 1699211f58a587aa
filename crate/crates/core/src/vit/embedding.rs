use std::path::Path;

use serde_json::Value;

use super::config::ViTConfig;
use super::model::infer;
use super::params::ViTParams;
use crate::checkpoint::Container;
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Class-token embeddings with their labels (and, when produced by a model,
/// the classifier logits for the same samples).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// `n x d`.
    pub features: Tensor<f64>,
    pub labels: Vec<u32>,
    /// `n x C`, present when extracted through a classifier.
    pub logits: Option<Tensor<f64>>,
    /// Where the samples came from: `train`, `val`, `test`, `ood`, ...
    pub source: String,
}

impl EmbeddingSet {
    pub fn new(features: Tensor<f64>, labels: Vec<u32>, source: impl Into<String>) -> Result<Self> {
        if features.ndim() != 2 || features.shape()[0] != labels.len() {
            return Err(Error::Data(format!(
                "{} labels for feature matrix of shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        Ok(EmbeddingSet {
            features,
            labels,
            logits: None,
            source: source.into(),
        })
    }

    pub fn with_logits(mut self, logits: Tensor<f64>) -> Result<Self> {
        if logits.ndim() != 2 || logits.shape()[0] != self.len() {
            return Err(Error::Data(format!(
                "logits of shape {:?} for {} samples",
                logits.shape(),
                self.len()
            )));
        }
        self.logits = Some(logits);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let take = |t: &Tensor<f64>| -> Result<Tensor<f64>> {
            let w = t.shape()[1];
            let mut data = Vec::with_capacity(indices.len() * w);
            for &i in indices {
                data.extend_from_slice(t.row(i));
            }
            Tensor::new([indices.len(), w], data)
        };
        let mut out = EmbeddingSet::new(
            take(&self.features)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.source.clone(),
        )?;
        if let Some(l) = &self.logits {
            out = out.with_logits(take(l)?)?;
        }
        Ok(out)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.insert("features", &self.features);
        c.insert_u32("labels", vec![self.labels.len()], self.labels.clone());
        if let Some(l) = &self.logits {
            c.insert("logits", l);
        }
        c.metadata.insert("source".into(), Value::from(self.source.clone()));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let features = c.get::<f64>("features")?;
        let (_, labels) = c.get_u32("labels")?;
        let source = c
            .metadata
            .get("source")
            .and_then(Value::as_str)
            .unwrap_or("unknown")
            .to_string();
        let mut set = EmbeddingSet::new(features, labels, source)?;
        if c.names().any(|n| n == "logits") {
            set = set.with_logits(c.get::<f64>("logits")?)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Runs the encoder over every image of `set` in chunks of `batch_size` and
/// collects class-token embeddings and logits.
pub fn extract<T: Float>(
    params: &ViTParams<T>,
    config: &ViTConfig,
    set: &LabeledImageSet,
    batch_size: usize,
    source: &str,
) -> Result<EmbeddingSet> {
    let dims = [config.channels, config.image_size, config.image_size];
    if set.image_dims() != dims {
        return Err(Error::ShapeMismatch {
            op: "extract",
            lhs: dims.to_vec(),
            rhs: set.image_dims().to_vec(),
        });
    }
    let n = set.len();
    let batch_size = batch_size.max(1);
    let mut features = Vec::with_capacity(n * config.hidden_size);
    let mut logits = Vec::with_capacity(n * config.num_classes);
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let images = set.batch::<T>(&idx)?;
        let (f, l) = infer(params, config, &images)?;
        features.extend(f.data().iter().map(|v| v.as_f64()));
        logits.extend(l.data().iter().map(|v| v.as_f64()));
        start = end;
    }
    EmbeddingSet::new(
        Tensor::new([n, config.hidden_size], features)?,
        set.labels.clone(),
        source,
    )?
    .with_logits(Tensor::new([n, config.num_classes], logits)?)
}
