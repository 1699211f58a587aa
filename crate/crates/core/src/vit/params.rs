use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ViTConfig;
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Per-layer weights. Generic over the slot type so that the same layout
/// carries tensors, tape variables, shapes or gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<W> {
    pub norm1_gamma: W,
    pub norm1_beta: W,
    pub wq: W,
    pub bq: W,
    pub wk: W,
    pub bk: W,
    pub wv: W,
    pub bv: W,
    pub wo: W,
    pub bo: W,
    pub norm2_gamma: W,
    pub norm2_beta: W,
    pub fc1_w: W,
    pub fc1_b: W,
    pub fc2_w: W,
    pub fc2_b: W,
}

/// Encoder plus classifier-head weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VitWeights<W> {
    /// Patch projection `E`, `(P^2 C') x d`.
    pub patch_proj: W,
    /// Class token, `d`.
    pub cls_token: W,
    /// Positional embedding, `(N + 1) x d`.
    pub pos_embed: W,
    pub blocks: Vec<BlockWeights<W>>,
    pub norm_gamma: W,
    pub norm_beta: W,
    /// Classifier head, `d x C`.
    pub head_weight: W,
    pub head_bias: W,
}

/// The learnable parameters of a model.
pub type ViTParams<T> = VitWeights<Tensor<T>>;

impl<W> BlockWeights<W> {
    fn fields(&self) -> [(&'static str, &W); 16] {
        [
            ("norm1.gamma", &self.norm1_gamma),
            ("norm1.beta", &self.norm1_beta),
            ("attn.q.weight", &self.wq),
            ("attn.q.bias", &self.bq),
            ("attn.k.weight", &self.wk),
            ("attn.k.bias", &self.bk),
            ("attn.v.weight", &self.wv),
            ("attn.v.bias", &self.bv),
            ("attn.o.weight", &self.wo),
            ("attn.o.bias", &self.bo),
            ("norm2.gamma", &self.norm2_gamma),
            ("norm2.beta", &self.norm2_beta),
            ("mlp.fc1.weight", &self.fc1_w),
            ("mlp.fc1.bias", &self.fc1_b),
            ("mlp.fc2.weight", &self.fc2_w),
            ("mlp.fc2.bias", &self.fc2_b),
        ]
    }

    fn fields_mut(&mut self) -> [&mut W; 16] {
        [
            &mut self.norm1_gamma,
            &mut self.norm1_beta,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.norm2_gamma,
            &mut self.norm2_beta,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    fn from_iter(mut it: impl Iterator<Item = W>) -> Self {
        let mut next = || it.next().expect("block field count");
        BlockWeights {
            norm1_gamma: next(),
            norm1_beta: next(),
            wq: next(),
            bq: next(),
            wk: next(),
            bk: next(),
            wv: next(),
            bv: next(),
            wo: next(),
            bo: next(),
            norm2_gamma: next(),
            norm2_beta: next(),
            fc1_w: next(),
            fc1_b: next(),
            fc2_w: next(),
            fc2_b: next(),
        }
    }
}

impl<W> VitWeights<W> {
    /// Every slot with its canonical name, in canonical order.
    pub fn named(&self) -> Vec<(String, &W)> {
        let mut out = vec![
            ("patch_embed.weight".to_string(), &self.patch_proj),
            ("cls_token".to_string(), &self.cls_token),
            ("pos_embed".to_string(), &self.pos_embed),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.fields().into_iter().map(|(n, w)| (format!("blocks.{i}.{n}"), w)));
        }
        out.extend([
            ("norm.gamma".to_string(), &self.norm_gamma),
            ("norm.beta".to_string(), &self.norm_beta),
            ("head.weight".to_string(), &self.head_weight),
            ("head.bias".to_string(), &self.head_bias),
        ]);
        out
    }

    /// Mutable slots in the same order as [`VitWeights::named`].
    pub fn slots_mut(&mut self) -> Vec<&mut W> {
        let mut out = vec![&mut self.patch_proj, &mut self.cls_token, &mut self.pos_embed];
        for b in &mut self.blocks {
            out.extend(b.fields_mut());
        }
        out.extend([
            &mut self.norm_gamma,
            &mut self.norm_beta,
            &mut self.head_weight,
            &mut self.head_bias,
        ]);
        out
    }

    /// Rebuilds a structure from slots in canonical order.
    pub fn from_slots(layers: usize, slots: Vec<W>) -> Result<Self> {
        let expected = 3 + 16 * layers + 4;
        if slots.len() != expected {
            return Err(Error::Contract(format!(
                "expected {expected} parameter slots for {layers} layers, got {}",
                slots.len()
            )));
        }
        let mut it = slots.into_iter();
        let patch_proj = it.next().unwrap();
        let cls_token = it.next().unwrap();
        let pos_embed = it.next().unwrap();
        let blocks = (0..layers)
            .map(|_| BlockWeights::from_iter(it.by_ref().take(16)))
            .collect();
        Ok(VitWeights {
            patch_proj,
            cls_token,
            pos_embed,
            blocks,
            norm_gamma: it.next().unwrap(),
            norm_beta: it.next().unwrap(),
            head_weight: it.next().unwrap(),
            head_bias: it.next().unwrap(),
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &W) -> U) -> VitWeights<U> {
        let slots = self.named().into_iter().map(|(n, w)| f(&n, w)).collect();
        VitWeights::from_slots(self.blocks.len(), slots).expect("same layout")
    }

    pub fn try_map<U>(&self, mut f: impl FnMut(&str, &W) -> Result<U>) -> Result<VitWeights<U>> {
        let slots = self
            .named()
            .into_iter()
            .map(|(n, w)| f(&n, w))
            .collect::<Result<Vec<_>>>()?;
        VitWeights::from_slots(self.blocks.len(), slots)
    }
}

/// Whether weight decay applies to a parameter. Biases and layer-norm
/// affines are exempt.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta"))
}

/// Shapes of every parameter, derived from the configuration.
pub fn param_shapes(config: &ViTConfig) -> VitWeights<Vec<usize>> {
    let d = config.hidden_size;
    let m = config.mlp_size;
    let block = BlockWeights {
        norm1_gamma: vec![d],
        norm1_beta: vec![d],
        wq: vec![d, d],
        bq: vec![d],
        wk: vec![d, d],
        bk: vec![d],
        wv: vec![d, d],
        bv: vec![d],
        wo: vec![d, d],
        bo: vec![d],
        norm2_gamma: vec![d],
        norm2_beta: vec![d],
        fc1_w: vec![d, m],
        fc1_b: vec![m],
        fc2_w: vec![m, d],
        fc2_b: vec![d],
    };
    VitWeights {
        patch_proj: vec![config.patch_dim(), d],
        cls_token: vec![d],
        pos_embed: vec![config.seq_len(), d],
        blocks: vec![block; config.layers],
        norm_gamma: vec![d],
        norm_beta: vec![d],
        head_weight: vec![d, config.num_classes],
        head_bias: vec![config.num_classes],
    }
}

/// Total learnable scalar count, computed from shapes alone.
pub fn param_count(config: &ViTConfig) -> usize {
    param_shapes(config)
        .named()
        .into_iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

const INIT_STD: f64 = 0.02;

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("valid std");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

impl<T: Float> VitWeights<Tensor<T>> {
    /// Truncated-normal (std 0.02, cut at two std) projections and positional
    /// embedding; zero biases and class token; unit layer-norm gains.
    pub fn init(config: &ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        param_shapes(config).try_map(|name, shape| {
            let numel: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".gamma") {
                vec![T::one(); numel]
            } else if name.ends_with(".bias") || name.ends_with(".beta") || name == "cls_token" {
                vec![T::zero(); numel]
            } else {
                (0..numel).map(|_| T::of(trunc_normal(&mut rng, INIT_STD))).collect()
            };
            Tensor::new(shape.clone(), data)
        })
    }

    /// Every weight zero, layer-norm gains one.
    pub fn zeros(config: &ViTConfig) -> Result<Self> {
        config.validate()?;
        param_shapes(config).try_map(|name, shape| {
            if name.ends_with(".gamma") {
                Tensor::ones(shape.clone())
            } else {
                Tensor::zeros(shape.clone())
            }
        })
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Float>(&self) -> VitWeights<Tensor<U>> {
        self.map(|_, t| t.cast())
    }

    /// Checks every tensor against the shape implied by `config`.
    pub fn check_shapes(&self, config: &ViTConfig) -> Result<()> {
        let expected = param_shapes(config);
        if expected.blocks.len() != self.blocks.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} layers, config says {}",
                self.blocks.len(),
                config.layers
            )));
        }
        for ((name, want), (_, have)) in expected.named().into_iter().zip(self.named()) {
            if have.shape() != want.as_slice() {
                return Err(Error::Data(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    have.shape(),
                    want
                )));
            }
        }
        Ok(())
    }

    pub fn to_container(&self, config: &ViTConfig) -> Result<Container> {
        let mut c = Container::new();
        for (name, t) in self.named() {
            c.insert(name, t);
        }
        c.metadata
            .insert("vit_config".into(), serde_json::to_value(config)?);
        Ok(c)
    }

    /// Loads parameters and their configuration, validating every shape.
    pub fn from_container(c: &Container) -> Result<(ViTConfig, Self)> {
        let cfg: ViTConfig = match c.metadata.get("vit_config") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => return Err(Error::Data("checkpoint lacks a vit_config block".into())),
        };
        cfg.validate()?;
        let params = param_shapes(&cfg).try_map(|name, _| c.get::<T>(name))?;
        params.check_shapes(&cfg)?;
        Ok((cfg, params))
    }

    pub fn save(&self, config: &ViTConfig, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container(config)?.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<(ViTConfig, Self)> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Reads just the configuration block of a model checkpoint.
pub fn config_of(c: &Container) -> Result<ViTConfig> {
    match c.metadata.get("vit_config") {
        Some(v) => Ok(serde_json::from_value::<ViTConfig>(v.clone())?),
        None => Err(Error::Data("checkpoint lacks a vit_config block".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_profile_count_matches_shapes() {
        let cfg = ViTConfig::profile("tiny-4").unwrap();
        let p = ViTParams::<f32>::init(&cfg, 0).unwrap();
        assert_eq!(p.num_params(), param_count(&cfg));
        assert_eq!(p.named().len(), 3 + 16 * 4 + 4);
    }

    #[test]
    fn init_is_seeded_and_truncated() {
        let cfg = ViTConfig::profile("tiny-4").unwrap();
        let a = ViTParams::<f32>::init(&cfg, 7).unwrap();
        let b = ViTParams::<f32>::init(&cfg, 7).unwrap();
        let c = ViTParams::<f32>::init(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.patch_proj.data().iter().all(|v| v.abs() <= 0.04));
        assert!(a.cls_token.data().iter().all(|&v| v == 0.0));
        assert!(a.blocks[0].norm1_gamma.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn checkpoint_round_trip_and_shape_audit() {
        let cfg = ViTConfig::profile("tiny-4").unwrap().with_classes(3);
        let p = ViTParams::<f32>::init(&cfg, 1).unwrap();
        let c = p.to_container(&cfg).unwrap();
        let (cfg2, p2) = ViTParams::<f32>::from_container(&c).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(p, p2);

        let mut bad = c.clone();
        bad.insert("blocks.1.attn.q.weight", &Tensor::<f32>::zeros([64, 63]).unwrap());
        let err = ViTParams::<f32>::from_container(&bad).unwrap_err().to_string();
        assert!(err.contains("blocks.1.attn.q.weight"), "{err}");
    }

    #[test]
    fn decay_mask() {
        assert!(decays("blocks.0.attn.q.weight"));
        assert!(decays("pos_embed"));
        assert!(!decays("blocks.0.attn.q.bias"));
        assert!(!decays("norm.gamma"));
        assert!(!decays("blocks.3.norm2.beta"));
    }
}
