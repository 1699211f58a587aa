use proptest::prelude::*;

use oodkit::data::{holdout_classes, split, synthesize, GeneratorKind, SyntheticSpec};

fn spec(classes: usize, per: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: classes,
        samples_per_class: per,
        image_size: 8,
        channels: 2,
        seed,
        ..Default::default()
    }
}

#[test]
fn class_pixel_means_match_templates() {
    // away from the clipping bounds the noise is unbiased, so every pixel's
    // class mean lies within three standard errors of the template
    let s = SyntheticSpec {
        noise_sigma: 0.05,
        ..spec(4, 400, 17)
    };
    let set = synthesize(&s).unwrap();
    let n = s.samples_per_class as f64;
    let bound = 3.0 * s.noise_sigma / n.sqrt();
    let mut checked = 0;
    let mut outside = 0;
    for k in 0..s.num_classes {
        let template = s.template(k);
        for (p, &want) in template.iter().enumerate() {
            if !(0.2..=0.8).contains(&want) {
                continue;
            }
            let mean: f64 = (0..set.len())
                .filter(|&i| set.labels[i] as usize == k)
                .map(|i| set.image(i)[p] as f64)
                .sum::<f64>()
                / n;
            checked += 1;
            if (mean - want).abs() > bound {
                outside += 1;
            }
        }
    }
    // three sigma admits about 0.3% by chance
    assert!(checked > 400);
    assert!(outside as f64 <= 0.01 * checked as f64, "{outside} of {checked} outside");
}

#[test]
fn shifted_set_differs_from_blobs_only_in_patterns() {
    let blobs = spec(3, 2, 5);
    let shifted = SyntheticSpec {
        kind: GeneratorKind::Shifted,
        ..blobs.clone()
    };
    let a = synthesize(&SyntheticSpec { noise_sigma: 0.0, ..blobs }).unwrap();
    let b = synthesize(&SyntheticSpec { noise_sigma: 0.0, ..shifted }).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_ne!(a.images, b.images);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_sizes_are_within_one_per_class(
        classes in 1usize..5,
        per in 1usize..40,
        f_train in 0.0f64..1.0,
        f_val_part in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let f_val = (1.0 - f_train) * f_val_part;
        let f_test = 1.0 - f_train - f_val;
        let set = synthesize(&spec(classes, per, 1)).unwrap();
        let (tr, va, te) = split(&set, [f_train, f_val, f_test], seed).unwrap();
        prop_assert_eq!(tr.len() + va.len() + te.len(), set.len());
        for (part, f) in [(&tr, f_train), (&va, f_val), (&te, f_test)] {
            for k in 0..classes as u32 {
                let got = part.labels.iter().filter(|&&l| l == k).count() as f64;
                prop_assert!((got - f * per as f64).abs() <= 1.0, "class {} got {} want {}", k, got, f * per as f64);
            }
        }
        // disjoint: every image lands in exactly one part
        let mut all: Vec<Vec<u32>> = [&tr, &va, &te]
            .iter()
            .flat_map(|p| (0..p.len()).map(|i| p.image(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>())
            .collect();
        let mut orig: Vec<Vec<u32>> = (0..set.len()).map(|i| set.image(i).iter().map(|v| v.to_bits()).collect()).collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
    }

    #[test]
    fn holdout_parts_merge_back(
        classes in 2usize..8,
        per in 1usize..6,
        mask in any::<u8>(),
    ) {
        let set = synthesize(&spec(classes, per, 2)).unwrap();
        let held: Vec<usize> = (0..classes).filter(|k| mask >> k & 1 == 1).collect();
        if held.is_empty() || held.len() == classes {
            prop_assert!(holdout_classes(&set, &held).is_err());
            return Ok(());
        }
        let (id, ood) = holdout_classes(&set, &held).unwrap();
        prop_assert_eq!(id.len() + ood.len(), set.len());
        prop_assert_eq!(id.num_classes(), classes - held.len());
        // map the ID labels back through the kept class names
        let mut merged: Vec<(u32, Vec<u32>)> = Vec::new();
        for i in 0..id.len() {
            let name = &id.class_names[id.labels[i] as usize];
            let orig = set.class_names.iter().position(|n| n == name).unwrap() as u32;
            merged.push((orig, id.image(i).iter().map(|v| v.to_bits()).collect()));
        }
        for i in 0..ood.len() {
            prop_assert!(held.contains(&(ood.labels[i] as usize)));
            merged.push((ood.labels[i], ood.image(i).iter().map(|v| v.to_bits()).collect()));
        }
        let mut orig: Vec<(u32, Vec<u32>)> = (0..set.len())
            .map(|i| (set.labels[i], set.image(i).iter().map(|v| v.to_bits()).collect()))
            .collect();
        merged.sort();
        orig.sort();
        prop_assert_eq!(merged, orig);
    }
}
