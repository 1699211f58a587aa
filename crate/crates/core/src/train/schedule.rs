/// Triangular cyclic learning rate with a single cycle over the whole run:
/// linear from `base_lr` to `max_lr` over the first half of the steps, then
/// back down over the second half.
pub fn cyclic_lr(step: usize, total_steps: usize, base_lr: f64, max_lr: f64) -> f64 {
    let total = total_steps.max(1) as f64;
    let half = total / 2.0;
    let s = (step as f64).min(total);
    let t = if s <= half {
        s / half
    } else {
        (total - s) / (total - half)
    };
    base_lr * (1.0 - t) + max_lr * t
}
