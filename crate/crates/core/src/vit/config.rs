use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where layer normalization sits inside an encoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPlacement {
    /// `z' = z + MSA(LN(z)); out = z' + FFN(LN(z'))`
    #[default]
    PreNorm,
    /// `z' = LN(z + MSA(z)); out = LN(z' + FFN(z'))`
    PostNorm,
}

fn default_eps() -> f64 {
    1e-6
}

/// Architecture hyperparameters of the encoder and classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub layers: usize,
    pub hidden_size: usize,
    pub mlp_size: usize,
    pub heads: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub norm: NormPlacement,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

/// Named architecture presets.
pub const PROFILES: [&str; 5] = ["tiny-4", "deit-t-16", "deit-s-16", "vit-b-16", "vit-l-16"];

impl ViTConfig {
    /// Looks up a named profile. `tiny-4` is the desk-scale default with a
    /// 10-class head; the others reproduce published DeiT/ViT shapes with a
    /// 1000-class head.
    pub fn profile(name: &str) -> Result<Self> {
        let (image, patch, layers, hidden, mlp, heads, classes) = match name {
            "tiny-4" => (32, 4, 4, 64, 128, 4, 10),
            "deit-t-16" => (224, 16, 12, 192, 768, 3, 1000),
            "deit-s-16" => (224, 16, 12, 384, 1536, 6, 1000),
            "vit-b-16" => (224, 16, 12, 768, 3072, 12, 1000),
            "vit-l-16" => (224, 16, 24, 1024, 4096, 16, 1000),
            other => {
                return Err(Error::Config(format!(
                    "unknown model profile {other:?}; expected one of {PROFILES:?}"
                )))
            }
        };
        Ok(ViTConfig {
            image_size: image,
            patch_size: patch,
            channels: 3,
            layers,
            hidden_size: hidden,
            mlp_size: mlp,
            heads,
            num_classes: classes,
            norm: NormPlacement::PreNorm,
            layer_norm_eps: default_eps(),
        })
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if [
            self.image_size,
            self.patch_size,
            self.channels,
            self.layers,
            self.hidden_size,
            self.mlp_size,
            self.heads,
            self.num_classes,
        ]
        .contains(&0)
        {
            return fail("all ViT dimensions must be >= 1".into());
        }
        if self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.hidden_size % self.heads != 0 {
            return fail(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden_size, self.heads
            ));
        }
        if !(self.layer_norm_eps > 0.0) {
            return fail("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Patches per image, `N = HW / P^2`.
    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    /// Token count including the class token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    /// Length of one flattened patch, `P^2 * C'`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.heads
    }

    pub fn image_numel(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts() {
        let b16 = ViTConfig::profile("vit-b-16").unwrap();
        assert_eq!(b16.num_patches(), 196);
        assert_eq!(b16.seq_len(), 197);
        let tiny = ViTConfig::profile("tiny-4").unwrap();
        assert_eq!(tiny.num_patches(), 64);
        assert_eq!(tiny.patch_dim(), 48);
    }

    #[test]
    fn validation_catches_bad_divisibility() {
        let mut c = ViTConfig::profile("tiny-4").unwrap();
        c.patch_size = 5;
        assert!(c.validate().is_err());
        let mut c = ViTConfig::profile("tiny-4").unwrap();
        c.heads = 3;
        assert!(c.validate().is_err());
        assert!(ViTConfig::profile("resnet").is_err());
    }
}
