//! Seeded synthetic image generators.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledImageSet;
use crate::error::{Error, Result};

const BACKGROUND: f64 = 0.5;
const RADIUS: f64 = 0.28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// One Gaussian bump per class, placed on a circle around the image centre.
    Blobs,
    /// One oriented sinusoidal grating per class.
    Textures,
    /// The blob generator with every class pattern displaced: rotated by
    /// `shift` class spacings and widened by a factor `1 + shift`.
    Shifted,
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(GeneratorKind::Blobs),
            "textures" => Ok(GeneratorKind::Textures),
            "shifted" => Ok(GeneratorKind::Shifted),
            other => Err(Error::Config(format!(
                "unknown generator '{other}' (expected blobs, textures or shifted)"
            ))),
        }
    }
}

/// Pattern of one class. Positions and widths are fractions of the image side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    pub center: [f64; 2],
    pub width: f64,
    /// Per-channel amplitude added on top of the 0.5 background.
    pub amplitude: Vec<f64>,
    /// Grating orientation in radians (textures only).
    pub orientation: f64,
    /// Grating cycles per image side (textures only).
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: GeneratorKind,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub channels: usize,
    pub noise_sigma: f64,
    /// Displacement of the shifted generator: rotation in class spacings and
    /// relative growth of the blob width.
    pub shift: f64,
    pub seed: u64,
    /// Explicit per-class patterns; derived from the class index when absent.
    pub patterns: Option<Vec<PatternParams>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: GeneratorKind::Blobs,
            num_classes: 3,
            samples_per_class: 500,
            image_size: 32,
            channels: 3,
            noise_sigma: 0.1,
            shift: 0.5,
            seed: 0,
            patterns: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.samples_per_class == 0 {
            return Err(Error::Config("synthetic sets need at least one class and sample".into()));
        }
        if self.image_size == 0 || self.channels == 0 {
            return Err(Error::Config("image size and channels must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        if let Some(p) = &self.patterns {
            if p.len() != self.num_classes {
                return Err(Error::Config(format!(
                    "{} patterns for {} classes",
                    p.len(),
                    self.num_classes
                )));
            }
            if p.iter().any(|q| q.amplitude.len() != self.channels) {
                return Err(Error::Config("pattern amplitude needs one value per channel".into()));
            }
        }
        Ok(())
    }

    /// Pattern of class `k`.
    pub fn pattern(&self, k: usize) -> PatternParams {
        if let Some(p) = &self.patterns {
            return p[k].clone();
        }
        let offset = match self.kind {
            GeneratorKind::Shifted => self.shift,
            _ => 0.0,
        };
        let pos = (k as f64 + offset) / self.num_classes as f64;
        let theta = 2.0 * PI * pos;
        let amplitude = if self.channels == 1 {
            vec![0.3]
        } else {
            (0..self.channels)
                .map(|c| 0.15 + 0.15 * (theta + 2.0 * PI * c as f64 / self.channels as f64).cos())
                .collect()
        };
        PatternParams {
            center: [0.5 + RADIUS * theta.sin(), 0.5 + RADIUS * theta.cos()],
            width: 0.12 * (1.0 + offset),
            amplitude,
            orientation: PI * pos,
            frequency: 3.0,
        }
    }

    /// Noise-free image of class `k` (before clipping to `[0, 1]`).
    pub fn template(&self, k: usize) -> Vec<f64> {
        let p = self.pattern(k);
        let s = self.image_size;
        let mut out = Vec::with_capacity(self.channels * s * s);
        for amp in &p.amplitude {
            for y in 0..s {
                for x in 0..s {
                    let fy = (y as f64 + 0.5) / s as f64;
                    let fx = (x as f64 + 0.5) / s as f64;
                    let shape = match self.kind {
                        GeneratorKind::Blobs | GeneratorKind::Shifted => {
                            let r2 = (fy - p.center[0]).powi(2) + (fx - p.center[1]).powi(2);
                            (-r2 / (2.0 * p.width * p.width)).exp()
                        }
                        GeneratorKind::Textures => {
                            let u = fx * p.orientation.cos() + fy * p.orientation.sin();
                            (2.0 * PI * p.frequency * u).sin()
                        }
                    };
                    out.push(BACKGROUND + amp * shape);
                }
            }
        }
        out
    }

    fn class_prefix(&self) -> &'static str {
        match self.kind {
            GeneratorKind::Blobs => "blob",
            GeneratorKind::Textures => "texture",
            GeneratorKind::Shifted => "shifted",
        }
    }
}

/// Generates `samples_per_class` noisy copies of every class template,
/// class-major. Pixels are clipped to `[0, 1]`.
pub fn synthesize(spec: &SyntheticSpec) -> Result<LabeledImageSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let numel = spec.channels * spec.image_size * spec.image_size;
    let n = spec.num_classes * spec.samples_per_class;
    let mut images = Vec::with_capacity(n * numel);
    let mut labels = Vec::with_capacity(n);
    for k in 0..spec.num_classes {
        let template = spec.template(k);
        for _ in 0..spec.samples_per_class {
            if spec.noise_sigma == 0.0 {
                images.extend(template.iter().map(|&v| v.clamp(0.0, 1.0) as f32));
            } else {
                images.extend(
                    template
                        .iter()
                        .map(|&v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32),
                );
            }
            labels.push(k as u32);
        }
    }
    let names = (0..spec.num_classes)
        .map(|k| format!("{}-{k}", spec.class_prefix()))
        .collect();
    LabeledImageSet::new(
        images,
        [spec.channels, spec.image_size, spec.image_size],
        labels,
        names,
        format!(
            "synthetic:{}:seed={}:sigma={}",
            spec.class_prefix(),
            spec.seed,
            spec.noise_sigma
        ),
    )
}
