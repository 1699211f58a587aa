//! Supervised cross-entropy training: plain (or momentum) SGD with a
//! triangular cyclic learning rate, decoupled weight decay, seeded shuffling
//! and flip/crop augmentation.

mod augment;
mod config;
mod optim;
mod run;
mod schedule;

pub use augment::{augment, AugmentMode, CROP_PAD};
pub use config::{parse_kv, read_kv_file, Precision, TrainConfig, TRAIN_PROFILES};
pub use optim::{sgd_step, sgd_update, Sgd};
pub use run::{accuracy, argmax_rows, train, train_with_progress, EpochRecord, TrainReport};
pub use schedule::cyclic_lr;

use crate::error::Result;
use crate::tensor::{Float, Var};

/// Mean cross-entropy of `[B, C]` logits against integer labels.
pub fn cross_entropy<'t, T: Float>(logits: &Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    logits.cross_entropy(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn ce(logits: &[f64], label: usize) -> f64 {
        let tape = Tape::new();
        let l = tape.constant(Tensor::new([1, logits.len()], logits.to_vec()).unwrap());
        let v = cross_entropy(&l, &[label]).unwrap().value().item();
        v
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((ce(&[0.3; 5], 2) - 5f64.ln()).abs() < 1e-12);
        assert!(ce(&[10.0, -10.0], 0) < 1e-4);
        // independent: -3 + ln(e^1 + e^2 + e^3)
        let want = -3.0 + (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((ce(&[1.0, 2.0, 3.0], 2) - want).abs() < 1e-12);
        assert!((want - 0.40761).abs() < 1e-5);
        let tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::new([1, 2], vec![0.0, 0.0]).unwrap());
        assert!(cross_entropy(&l, &[2]).is_err());
    }
}
