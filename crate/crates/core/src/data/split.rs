use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabeledImageSet;
use crate::error::{Error, Result};

/// Stratified, seeded split into (train, val, test).
///
/// Within each class the samples are shuffled, then the first
/// `round(f_train * n_c)` go to train and `round((f_train + f_val) * n_c)`
/// bounds val; the remainder goes to test. Sample order inside each split
/// follows the original set.
pub fn split(
    set: &LabeledImageSet,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(LabeledImageSet, LabeledImageSet, LabeledImageSet)> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0u8; set.len()];
    for class in 0..set.num_classes() {
        let mut members: Vec<usize> = (0..set.len())
            .filter(|&i| set.labels[i] as usize == class)
            .collect();
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let a = (fractions[0] * n).round() as usize;
        let b = (((fractions[0] + fractions[1]) * n).round() as usize).max(a);
        for (rank, &i) in members.iter().enumerate() {
            assignment[i] = if rank < a {
                0
            } else if rank < b {
                1
            } else {
                2
            };
        }
    }
    let part = |which: u8| -> Vec<usize> {
        (0..set.len()).filter(|&i| assignment[i] == which).collect()
    };
    Ok((set.subset(&part(0)), set.subset(&part(1)), set.subset(&part(2))))
}

/// Moves the `held` classes into a separate OOD set.
///
/// The ID set keeps the remaining classes in their original order with
/// labels renumbered `0..C-|held|`; the OOD set keeps original labels and names.
pub fn holdout_classes(
    set: &LabeledImageSet,
    held: &[usize],
) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let c = set.num_classes();
    if held.is_empty() {
        return Err(Error::Config("no classes to hold out".into()));
    }
    if let Some(&bad) = held.iter().find(|&&h| h >= c) {
        return Err(Error::LabelOverflow { label: bad, classes: c });
    }
    let is_held: Vec<bool> = (0..c).map(|k| held.contains(&k)).collect();
    let kept: Vec<usize> = (0..c).filter(|&k| !is_held[k]).collect();
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "holding out all {c} classes leaves no in-distribution data"
        )));
    }
    let mut remap = vec![u32::MAX; c];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new as u32;
    }
    let id_idx: Vec<usize> = (0..set.len())
        .filter(|&i| !is_held[set.labels[i] as usize])
        .collect();
    let ood_idx: Vec<usize> = (0..set.len())
        .filter(|&i| is_held[set.labels[i] as usize])
        .collect();
    let mut id = set.subset(&id_idx);
    for l in &mut id.labels {
        *l = remap[*l as usize];
    }
    id.class_names = kept.iter().map(|&k| set.class_names[k].clone()).collect();
    Ok((id, set.subset(&ood_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, SyntheticSpec};

    fn set(classes: usize, per: usize) -> LabeledImageSet {
        synthesize(&SyntheticSpec {
            num_classes: classes,
            samples_per_class: per,
            image_size: 4,
            channels: 1,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn all_train() {
        let s = set(3, 5);
        let (tr, va, te) = split(&s, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(tr, s);
        assert!(va.is_empty() && te.is_empty());
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(matches!(split(&set(2, 3), [0.5, 0.2, 0.2], 0), Err(Error::Config(_))));
    }

    #[test]
    fn hold_one_of_ten() {
        let s = set(10, 2);
        let (id, ood) = holdout_classes(&s, &[3]).unwrap();
        assert_eq!(id.num_classes(), 9);
        assert_eq!(id.labels.iter().max(), Some(&8));
        assert!(ood.labels.iter().all(|&l| l == 3));
        assert_eq!(ood.class_names[3], "blob-3");
        assert!(holdout_classes(&s, &(0..10).collect::<Vec<_>>()).is_err());
        assert!(holdout_classes(&s, &[]).is_err());
    }
}
