//! Encoder forward pass expressed on a [`Tape`].
//!
//! Token sequences are batched as `[batch, tokens, hidden]`.

use super::config::{NormPlacement, ViTConfig};
use super::params::{BlockWeights, ViTParams, VitWeights};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

/// Parameters bound to a tape.
pub type BoundParams<'t, T> = VitWeights<Var<'t, T>>;
pub type BoundBlock<'t, T> = BlockWeights<Var<'t, T>>;

/// Registers every parameter as a trainable leaf of `tape`.
pub fn bind<'t, T: Float>(tape: &'t Tape<T>, params: &ViTParams<T>) -> BoundParams<'t, T> {
    params.map(|_, t| tape.param(t.clone()))
}

/// Splits one `C' x H x W` image into `N` flattened patches.
///
/// Patches are taken in row-major order over the patch grid; inside a patch
/// values are flattened channel first, then row, then column.
pub fn patchify<T: Float>(image: &Tensor<T>, config: &ViTConfig) -> Result<Tensor<T>> {
    let want = [config.channels, config.image_size, config.image_size];
    if image.shape() != want {
        return Err(Error::ShapeMismatch {
            op: "patchify",
            lhs: want.to_vec(),
            rhs: image.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(image.numel());
    patchify_into(image.data(), config, &mut out);
    Tensor::new([config.num_patches(), config.patch_dim()], out)
}

fn patchify_into<T: Float>(pixels: &[T], config: &ViTConfig, out: &mut Vec<T>) {
    let (c, s, p) = (config.channels, config.image_size, config.patch_size);
    let grid = s / p;
    for py in 0..grid {
        for px in 0..grid {
            for ch in 0..c {
                for r in 0..p {
                    let row = (ch * s + py * p + r) * s + px * p;
                    out.extend_from_slice(&pixels[row..row + p]);
                }
            }
        }
    }
}

/// Patchifies a `[B, C', H, W]` batch into `[B, N, P^2 C']`.
pub fn patchify_batch<T: Float>(images: &Tensor<T>, config: &ViTConfig) -> Result<Tensor<T>> {
    let per = config.image_numel();
    let s = images.shape();
    if s.len() != 4 || s[1..] != [config.channels, config.image_size, config.image_size] {
        return Err(Error::ShapeMismatch {
            op: "patchify",
            lhs: vec![0, config.channels, config.image_size, config.image_size],
            rhs: s.to_vec(),
        });
    }
    let mut out = Vec::with_capacity(images.numel());
    for img in images.data().chunks_exact(per) {
        patchify_into(img, config, &mut out);
    }
    Tensor::new([s[0], config.num_patches(), config.patch_dim()], out)
}

/// `z = [x_cls; x_p^1 E; ...; x_p^N E] + E_pos` for a `[B, N, P^2 C']` batch.
pub fn embed_sequence<'t, T: Float>(
    patches: &Var<'t, T>,
    params: &BoundParams<'t, T>,
) -> Result<Var<'t, T>> {
    let shape = patches.shape();
    if shape.len() != 3 {
        return Err(Error::InvalidShape {
            shape,
            reason: "embed_sequence expects [batch, patches, patch_dim]".into(),
        });
    }
    let batch = shape[0];
    let d = params.cls_token.shape()[0];
    let tokens = patches.matmul(&params.patch_proj)?;
    let cls = params.cls_token.reshape([1, d])?.expand_leading(batch)?;
    Var::concat(&[cls, tokens], 1)?.add_leading(&params.pos_embed)
}

/// Multi-head self-attention over `[B, S, d]`. Returns the projected output
/// and the attention weights `[B * heads, S, S]`.
pub fn multi_head_attention<'t, T: Float>(
    z: &Var<'t, T>,
    block: &BoundBlock<'t, T>,
    heads: usize,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let shape = z.shape();
    let [b, s, d] = shape[..] else {
        return Err(Error::InvalidShape {
            shape,
            reason: "attention expects [batch, tokens, hidden]".into(),
        });
    };
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("hidden size {d} not divisible by {heads} heads")));
    }
    let dk = d / heads;
    let split = |x: Var<'t, T>| -> Result<Var<'t, T>> {
        x.reshape([b, s, heads, dk])?
            .permute(&[0, 2, 1, 3])?
            .reshape([b * heads, s, dk])
    };
    let q = split(z.matmul(&block.wq)?.add_leading(&block.bq)?)?;
    let k = split(z.matmul(&block.wk)?.add_leading(&block.bk)?)?;
    let v = split(z.matmul(&block.wv)?.add_leading(&block.bv)?)?;
    let scores = q
        .batch_matmul(&k.permute(&[0, 2, 1])?)?
        .scale(T::one() / T::of(dk as f64).sqrt());
    let attn = scores.softmax(2)?;
    let merged = attn
        .batch_matmul(&v)?
        .reshape([b, heads, s, dk])?
        .permute(&[0, 2, 1, 3])?
        .reshape([b, s, d])?;
    let out = merged.matmul(&block.wo)?.add_leading(&block.bo)?;
    Ok((out, attn))
}

fn feed_forward<'t, T: Float>(h: &Var<'t, T>, block: &BoundBlock<'t, T>) -> Result<Var<'t, T>> {
    h.matmul(&block.fc1_w)?
        .add_leading(&block.fc1_b)?
        .gelu()
        .matmul(&block.fc2_w)?
        .add_leading(&block.fc2_b)
}

/// One encoder layer. Returns the output and the layer's attention weights.
pub fn encoder_block<'t, T: Float>(
    z: &Var<'t, T>,
    block: &BoundBlock<'t, T>,
    config: &ViTConfig,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let eps = T::of(config.layer_norm_eps);
    match config.norm {
        NormPlacement::PreNorm => {
            let h = z.layer_norm(&block.norm1_gamma, &block.norm1_beta, eps)?;
            let (a, attn) = multi_head_attention(&h, block, config.heads)?;
            let z1 = z.add(&a)?;
            let h2 = z1.layer_norm(&block.norm2_gamma, &block.norm2_beta, eps)?;
            Ok((z1.add(&feed_forward(&h2, block)?)?, attn))
        }
        NormPlacement::PostNorm => {
            let (a, attn) = multi_head_attention(z, block, config.heads)?;
            let z1 = z
                .add(&a)?
                .layer_norm(&block.norm1_gamma, &block.norm1_beta, eps)?;
            let out = z1
                .add(&feed_forward(&z1, block)?)?
                .layer_norm(&block.norm2_gamma, &block.norm2_beta, eps)?;
            Ok((out, attn))
        }
    }
}

/// Layer-normed class token and classifier logits from the final sequence.
pub fn classify<'t, T: Float>(
    z: &Var<'t, T>,
    params: &BoundParams<'t, T>,
    config: &ViTConfig,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let shape = z.shape();
    let cls = z.narrow(1, 0, 1)?.reshape([shape[0], shape[2]])?;
    let feat = cls.layer_norm(
        &params.norm_gamma,
        &params.norm_beta,
        T::of(config.layer_norm_eps),
    )?;
    let logits = feat
        .matmul(&params.head_weight)?
        .add_leading(&params.head_bias)?;
    Ok((feat, logits))
}

/// Output of a batched forward pass.
pub struct Forward<'t, T: Float> {
    /// `[B, d]` class-token embeddings after the final layer norm.
    pub features: Var<'t, T>,
    /// `[B, C]` classifier logits.
    pub logits: Var<'t, T>,
    /// Attention weights per layer, `[B * heads, S, S]` each.
    pub attention: Vec<Var<'t, T>>,
}

/// Full forward pass over a `[B, C', H, W]` image batch.
pub fn forward_batch<'t, T: Float>(
    tape: &'t Tape<T>,
    params: &BoundParams<'t, T>,
    config: &ViTConfig,
    images: &Tensor<T>,
) -> Result<Forward<'t, T>> {
    let patches = tape.constant(patchify_batch(images, config)?);
    let mut z = embed_sequence(&patches, params)?;
    let mut attention = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (next, attn) = encoder_block(&z, block, config)?;
        attention.push(attn);
        z = next;
    }
    let (features, logits) = classify(&z, params, config)?;
    Ok(Forward {
        features,
        logits,
        attention,
    })
}

/// Single-image inference: returns (`x_feat` of length d, logits of length C).
pub fn forward<T: Float>(
    image: &Tensor<T>,
    config: &ViTConfig,
    params: &ViTParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let batch = image.clone().reshape([1, config.channels, config.image_size, config.image_size])?;
    let (f, l) = infer(params, config, &batch)?;
    Ok((f.reshape([config.hidden_size])?, l.reshape([config.num_classes])?))
}

/// Batched inference without gradient recording: (`[B, d]`, `[B, C]`).
pub fn infer<T: Float>(
    params: &ViTParams<T>,
    config: &ViTConfig,
    images: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let tape = Tape::no_grad();
    let bound = bind(&tape, params);
    let out = forward_batch(&tape, &bound, config, images)?;
    let features = out.features.value().clone();
    let logits = out.logits.value().clone();
    Ok((features, logits))
}
