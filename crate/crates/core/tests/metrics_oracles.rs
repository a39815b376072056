mod common;

use common::*;
use rand::Rng;
use unetformer::labels::Labels;
use unetformer::metrics::{dice_score, evaluate, hausdorff};
use unetformer::Error;

fn instance(seed: u64) -> (Labels, Labels) {
    let mut r = rng(seed);
    let dims = [r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=8)];
    let density = r.random_range(0.05..0.8);
    (
        random_labels(dims, 3, density, seed * 2 + 1),
        random_labels(dims, 3, density, seed * 2 + 2),
    )
}

#[test]
fn dice_matches_set_oracle() {
    for seed in 0..50 {
        let (a, b) = instance(seed);
        for class in 0..3 {
            assert_eq!(
                dice_score(&a, &b, class).unwrap(),
                brute_dice(&a, &b, class),
                "seed {seed} class {class}"
            );
        }
    }
}

#[test]
fn hausdorff_matches_all_pairs_oracle() {
    let mut compared = 0;
    for seed in 0..50 {
        let (a, b) = instance(seed);
        for class in 1..3 {
            for pct in [100.0, 95.0] {
                match (
                    hausdorff(&a, &b, class, [1.0; 3], pct),
                    brute_hausdorff(&a, &b, class, [1.0; 3], pct),
                ) {
                    (Ok(got), Some(want)) => {
                        assert_eq!(got, want, "seed {seed} class {class} pct {pct}");
                        compared += 1;
                    }
                    (Err(Error::Domain(_)), None) => {}
                    (got, want) => panic!("seed {seed} class {class}: {got:?} vs {want:?}"),
                }
            }
        }
    }
    assert!(compared >= 150, "only {compared} non-empty comparisons");
}

#[test]
fn anisotropic_hausdorff_matches_oracle() {
    let spacing = [2.5, 0.7, 1.3];
    for seed in 100..120 {
        let (a, b) = instance(seed);
        if let Some(want) = brute_hausdorff(&a, &b, 1, spacing, 100.0) {
            let got = hausdorff(&a, &b, 1, spacing, 100.0).unwrap();
            assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
        }
    }
}

#[test]
fn three_four_five_case() {
    let mut a = Labels::new([4, 5, 1], vec![0; 20]).unwrap();
    let mut b = a.clone();
    let i = a.index(0, 0, 0);
    a.values[i] = 1;
    let j = b.index(3, 4, 0);
    b.values[j] = 1;
    assert_eq!(hausdorff(&a, &b, 1, [1.0; 3], 100.0).unwrap(), 5.0);
    let r = evaluate(&a, &b, 2, [1.0; 3]).unwrap();
    assert_eq!(r.per_class[0].hausdorff, Some(5.0));
    assert_eq!(r.per_class[0].dice, 0.0);
}

#[test]
fn identical_masks_score_perfectly() {
    let (a, _) = instance(7);
    let r = evaluate(&a, &a, 3, [1.0; 3]).unwrap();
    for c in &r.per_class {
        assert_eq!(c.dice, 1.0);
        if !c.empty {
            assert_eq!(c.hausdorff, Some(0.0));
        }
    }
}
