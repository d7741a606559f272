use gandetect::metrics::{accuracy_at, auc, pd_at_far, roc_curve, trapezoid_area, ScoreSet};
use gandetect::rng::Rng;
use proptest::prelude::*;

/// O(n²) pairwise AUC with half credit for ties.
fn pairwise_auc(s: &ScoreSet) -> f64 {
    let mut wins = 0.0;
    for p in &s.positives {
        for n in &s.negatives {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (s.positives.len() * s.negatives.len()) as f64
}

fn random_scores(seed: u64) -> ScoreSet {
    let mut rng = Rng::new(seed);
    let np = rng.int_range(1, 200) as usize;
    let nn = rng.int_range(1, 200) as usize;
    // coarse rounding makes ties common
    let mut draw = |shift: f64| (rng.normal() + shift).mul_add(4.0, 0.0).round() / 4.0;
    let positives = (0..np).map(|_| draw(0.7)).collect();
    let negatives = (0..nn).map(|_| draw(0.0)).collect();
    ScoreSet::new(positives, negatives).unwrap()
}

#[test]
fn fast_auc_equals_pairwise() {
    for seed in 0..50 {
        let s = random_scores(seed);
        assert_eq!(auc(&s).unwrap(), pairwise_auc(&s), "seed {seed}");
    }
}

#[test]
fn roc_area_equals_auc() {
    for seed in 0..50 {
        let s = random_scores(1000 + seed);
        let roc = roc_curve(&s).unwrap();
        assert_eq!(roc.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.last(), Some(&(1.0, 1.0)));
        assert!(roc.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
        assert!((trapezoid_area(&roc) - auc(&s).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn pd_under_identical_distributions_tracks_far() {
    for seed in 0..20 {
        let mut rng = Rng::new(seed);
        let pos = (0..1000).map(|_| rng.normal()).collect();
        let neg = (0..1000).map(|_| rng.normal()).collect();
        let pd = pd_at_far(&ScoreSet::new(pos, neg).unwrap(), 0.05).unwrap();
        assert!((0.02..=0.09).contains(&pd), "seed {seed}: pd {pd}");
    }
}

#[test]
fn order_statistic_threshold() {
    let neg: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
    let pos = vec![0.945, 0.95, 0.2];
    let s = ScoreSet::new(pos, neg).unwrap();
    // t* = 0.94: five negatives lie above it
    assert!((pd_at_far(&s, 0.05).unwrap() - 2.0 / 3.0).abs() < 1e-15);
}

fn scores_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-50i32..50, 1..60),
        prop::collection::vec(-50i32..50, 1..60),
    )
        .prop_map(|(p, n)| {
            (
                p.into_iter().map(|v| v as f64 / 4.0).collect(),
                n.into_iter().map(|v| v as f64 / 4.0).collect(),
            )
        })
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_maps((p, n) in scores_strategy()) {
        let s = ScoreSet::new(p.clone(), n.clone()).unwrap();
        let f = |v: &f64| (v * 0.3).exp() + 2.0 * v.powi(3);
        let t = ScoreSet::new(p.iter().map(f).collect(), n.iter().map(f).collect()).unwrap();
        prop_assert_eq!(auc(&s).unwrap(), auc(&t).unwrap());
    }

    #[test]
    fn auc_swaps_to_complement((p, n) in scores_strategy()) {
        let s = ScoreSet::new(p, n).unwrap();
        let sum = auc(&s).unwrap() + auc(&s.swapped()).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pd_non_decreasing_in_far((p, n) in scores_strategy(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let s = ScoreSet::new(p, n).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(pd_at_far(&s, lo).unwrap() <= pd_at_far(&s, hi).unwrap());
    }

    #[test]
    fn metrics_stay_in_unit_interval((p, n) in scores_strategy(), t in -20.0f64..20.0) {
        let s = ScoreSet::new(p, n).unwrap();
        for v in [auc(&s).unwrap(), accuracy_at(&s, t).unwrap(), pd_at_far(&s, 0.05).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
