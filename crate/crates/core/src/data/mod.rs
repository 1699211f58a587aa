//! Labeled image sets, the `OODD1` dataset file format, synthetic
//! generators and deterministic splits.
//!
//! `OODD1` layout: the 5-byte magic `OODD1`, a little-endian `u64` manifest
//! length, a JSON manifest (counts, dims, class names, pixel encoding and
//! optional per-channel standardization), the pixel buffer (`n * C * H * W`
//! values, channel-major per image) and finally `n` little-endian `u32`
//! labels.

mod split;
mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub use split::{holdout_classes, split};
pub use synth::{synthesize, GeneratorKind, PatternParams, SyntheticSpec};

pub const MAGIC: &[u8; 5] = b"OODD1";

/// Per-channel standardization applied when images are batched for a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Pixel encoding on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelEncoding {
    /// `f32` already in `[0, 1]`.
    F32,
    /// `u8`, scaled by `1/255` on load.
    U8,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    count: usize,
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    class_names: Vec<String>,
    #[serde(default)]
    provenance: String,
    pixels: PixelEncoding,
    #[serde(default)]
    standardization: Option<ChannelStats>,
}

/// Images in `[0, 1]` with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    /// `n * C * H * W` pixels, image-major then channel, row, column.
    pub images: Vec<f32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub class_names: Vec<String>,
    pub provenance: String,
    pub standardization: Option<ChannelStats>,
}

/// Memory order of a raw `u8` export handled by [`LabeledImageSet::from_raw_u8`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawLayout {
    /// `n x C x H x W`
    Chw,
    /// `n x H x W x C` (the usual layout of image-array dumps)
    Hwc,
}

impl LabeledImageSet {
    pub fn new(
        images: Vec<f32>,
        dims: [usize; 3],
        labels: Vec<u32>,
        class_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let set = LabeledImageSet {
            images,
            channels: dims[0],
            height: dims[1],
            width: dims[2],
            labels,
            class_names,
            provenance: provenance.into(),
            standardization: None,
        };
        set.validate()?;
        Ok(set)
    }

    /// Builds a set from raw `u8` pixels, scaling to `[0, 1]`.
    pub fn from_raw_u8(
        pixels: &[u8],
        layout: RawLayout,
        dims: [usize; 3],
        labels: Vec<u32>,
        class_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let [c, h, w] = dims;
        let per = c * h * w;
        if per == 0 || pixels.len() != labels.len() * per {
            return Err(Error::Data(format!(
                "{} raw pixels for {} images of {dims:?}",
                pixels.len(),
                labels.len()
            )));
        }
        let mut images = Vec::with_capacity(pixels.len());
        for img in pixels.chunks_exact(per) {
            match layout {
                RawLayout::Chw => images.extend(img.iter().map(|&p| p as f32 / 255.0)),
                RawLayout::Hwc => {
                    for ch in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                images.push(img[(y * w + x) * c + ch] as f32 / 255.0);
                            }
                        }
                    }
                }
            }
        }
        Self::new(images, dims, labels, class_names, provenance)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Data("image dimensions must be >= 1".into()));
        }
        if self.images.len() != self.labels.len() * self.image_numel() {
            return Err(Error::Data(format!(
                "{} pixels for {} images of {:?}",
                self.images.len(),
                self.labels.len(),
                self.image_dims()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= self.class_names.len()) {
            return Err(Error::LabelOverflow {
                label: bad as usize,
                classes: self.class_names.len(),
            });
        }
        if let Some(p) = self.images.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Data(format!("pixel value {p} outside [0, 1]")));
        }
        if let Some(s) = &self.standardization {
            if s.mean.len() != self.channels
                || s.std.len() != self.channels
                || s.std.iter().any(|&v| !(v > 0.0))
            {
                return Err(Error::Data("invalid per-channel standardization".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn image_numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_numel();
        &self.images[i * n..(i + 1) * n]
    }

    /// Per-sample model input: the stored pixels, standardized per channel
    /// when the set carries standardization statistics.
    pub fn model_input(&self, i: usize) -> Vec<f32> {
        let mut img = self.image(i).to_vec();
        self.standardize(&mut img);
        img
    }

    /// Applies the recorded per-channel standardization (if any) to one image.
    pub fn standardize(&self, img: &mut [f32]) {
        if let Some(s) = &self.standardization {
            let plane = self.height * self.width;
            for (j, p) in img.iter_mut().enumerate() {
                let c = j / plane;
                *p = (*p - s.mean[c]) / s.std[c];
            }
        }
    }

    /// Stacks the images at `indices` into a `[B, C, H, W]` tensor.
    pub fn batch<T: Float>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(indices.len() * self.image_numel());
        for &i in indices {
            data.extend(self.model_input(i).into_iter().map(|p| T::of(p as f64)));
        }
        Tensor::new([indices.len(), self.channels, self.height, self.width], data)
    }

    /// Per-channel mean and standard deviation over every pixel of the set.
    pub fn channel_stats(&self) -> ChannelStats {
        let plane = self.height * self.width;
        let mut mean = vec![0.0f64; self.channels];
        let mut sq = vec![0.0f64; self.channels];
        for img in self.images.chunks_exact(self.image_numel()) {
            for (j, &p) in img.iter().enumerate() {
                mean[j / plane] += p as f64;
                sq[j / plane] += (p as f64) * (p as f64);
            }
        }
        let count = (self.len() * plane).max(1) as f64;
        ChannelStats {
            mean: mean.iter().map(|m| (m / count) as f32).collect(),
            std: mean
                .iter()
                .zip(&sq)
                .map(|(m, s)| ((s / count - (m / count).powi(2)).max(1e-12).sqrt()) as f32)
                .collect(),
        }
    }

    /// Records the set's own channel statistics as its standardization.
    pub fn with_standardization(mut self) -> Self {
        self.standardization = Some(self.channel_stats());
        self
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut images = Vec::with_capacity(indices.len() * self.image_numel());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        LabeledImageSet {
            images,
            channels: self.channels,
            height: self.height,
            width: self.width,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
            standardization: self.standardization.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&Manifest {
            count: self.len(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
            pixels: PixelEncoding::F32,
            standardization: self.standardization.clone(),
        })?;
        let mut out = Vec::with_capacity(13 + manifest.len() + self.images.len() * 4 + self.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        f32::write_le(&self.images, &mut out);
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let truncated = |detail: String| Error::Truncated {
            path: origin.to_string(),
            detail,
        };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic {
                path: origin.to_string(),
                expected: "OODD1",
            });
        }
        if bytes.len() < 13 {
            return Err(truncated("missing manifest length".into()));
        }
        let mlen = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let body = 13usize
            .checked_add(mlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| truncated(format!("manifest of {mlen} bytes does not fit")))?;
        let m: Manifest = serde_json::from_slice(&bytes[13..body])?;
        if m.class_names.len() != m.num_classes {
            return Err(Error::Data(format!(
                "manifest declares {} classes but names {}",
                m.num_classes,
                m.class_names.len()
            )));
        }
        let numel = m.count * m.channels * m.height * m.width;
        let pix_bytes = numel
            * match m.pixels {
                PixelEncoding::F32 => 4,
                PixelEncoding::U8 => 1,
            };
        let need = pix_bytes + m.count * 4;
        let data = &bytes[body..];
        if data.len() < need {
            return Err(truncated(format!(
                "expected {need} payload bytes, found {}",
                data.len()
            )));
        }
        if data.len() > need {
            return Err(Error::Data(format!(
                "{} trailing bytes after labels",
                data.len() - need
            )));
        }
        let images: Vec<f32> = match m.pixels {
            PixelEncoding::F32 => f32::read_le(&data[..pix_bytes]),
            PixelEncoding::U8 => data[..pix_bytes].iter().map(|&p| p as f32 / 255.0).collect(),
        };
        let labels: Vec<u32> = data[pix_bytes..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let set = LabeledImageSet {
            images,
            channels: m.channels,
            height: m.height,
            width: m.width,
            labels,
            class_names: m.class_names,
            provenance: m.provenance,
            standardization: m.standardization,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates an `OODD1` file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LabeledImageSet::from_bytes(&bytes, &path.display().to_string())
}
