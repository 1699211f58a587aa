use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Padding used by the random crop.
pub const CROP_PAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    /// Identity.
    #[default]
    Off,
    /// Horizontal flip with probability 1/2, then a random crop from the
    /// image zero-padded by [`CROP_PAD`] pixels on every side.
    Random,
    /// Always flip, never crop.
    ForceFlip,
}

/// Augments one `C x H x W` image. The random draws depend only on
/// `(seed, index)`.
pub fn augment(image: &[f32], dims: [usize; 3], mode: AugmentMode, seed: u64, index: u64) -> Vec<f32> {
    let [c, h, w] = dims;
    match mode {
        AugmentMode::Off => image.to_vec(),
        AugmentMode::ForceFlip => transform(image, c, h, w, true, 0, 0),
        AugmentMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index);
            let flip = rng.gen_bool(0.5);
            let pad = CROP_PAD as i64;
            let dy = rng.gen_range(-pad..=pad);
            let dx = rng.gen_range(-pad..=pad);
            transform(image, c, h, w, flip, dy, dx)
        }
    }
}

// out[y][x] = in'[y + dy][x + dx] where in' is the (optionally flipped)
// image with zeros outside its bounds.
fn transform(image: &[f32], c: usize, h: usize, w: usize, flip: bool, dy: i64, dx: i64) -> Vec<f32> {
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = y as i64 + dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for x in 0..w {
                let sx = x as i64 + dx;
                if sx < 0 || sx >= w as i64 {
                    continue;
                }
                let sx = if flip { w - 1 - sx as usize } else { sx as usize };
                out[(ch * h + y) * w + x] = image[(ch * h + sy as usize) * w + sx];
            }
        }
    }
    out
}
