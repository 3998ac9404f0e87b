mod common;

use std::collections::BTreeSet;

use common::exhaustive_maxima;
use fixsearch::gabor::FeatureStack;
use fixsearch::imagio::GrayImage;
use fixsearch::peaks::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn integer_map(rng: &mut impl Rng, w: usize, h: usize, top: i32) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.random_range(0..=top) as f64).unwrap()
}

fn point_set(set: &CandidateSet) -> BTreeSet<(usize, usize)> {
    set.points().into_iter().collect()
}

#[test]
fn random_integer_maps_match_plateau_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for i in 0..150 {
        // few levels give large, irregular plateaus; many levels give isolated peaks
        let top = [2, 4, 9, 50][i % 4];
        let map = integer_map(&mut rng, 32, 32, top);
        let got = regional_maxima(&map, 0, 0.0);
        assert_eq!(point_set(&got), exhaustive_maxima(map.data(), 32, 32), "map {i}");
    }
}

#[test]
fn emitted_candidates_dominate_neighbours() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let map = integer_map(&mut rng, 40, 30, 6);
    for c in regional_maxima(&map, 2, 3.0).iter() {
        let v = map.get(c.x, c.y);
        for ny in c.y - 1..=c.y + 1 {
            for nx in c.x - 1..=c.x + 1 {
                assert!(v >= map.get(nx, ny));
            }
        }
    }
}

#[test]
fn candidate_order_is_independent_of_insertion_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let cands: Vec<Candidate> = (0..40)
        .map(|_| Candidate::new(rng.random_range(0..50), rng.random_range(0..50), vec![rng.random_range(0..5) as f64], rng.random_range(0..3)))
        .collect();
    let mut a = CandidateSet::empty(50, 50, 0);
    let mut b = CandidateSet::empty(50, 50, 0);
    cands.iter().cloned().for_each(|c| a.push(c));
    cands.iter().rev().cloned().for_each(|c| b.push(c));
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn threshold_example_keeps_five_and_nine() {
    let mut set = CandidateSet::empty(10, 10, 0);
    for (x, s) in [(1, 3.0), (2, 5.0), (3, 9.0)] {
        set.push(Candidate::new(x, 1, vec![s], 0));
    }
    let kept = threshold_candidates(&set, 4.0, ChannelRule::Max);
    let scores: Vec<f64> = kept.iter().map(|c| c.primary_score()).collect();
    assert_eq!(scores, vec![5.0, 9.0]);
}

#[test]
fn duplicated_channels_reduce_to_single() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let map = GrayImage::from_fn(48, 48, |_, _| rng.random_range(0.0..1.0)).unwrap();
    let single = FeatureStack::new(vec![map.clone()], vec!["c".into()]).unwrap();
    let quad = FeatureStack::new(vec![map.clone(); 4], (0..4).map(|i| format!("c{i}")).collect()).unwrap();
    let (a, b) = (bank_maxima(&single, 3, 4.0).unwrap(), bank_maxima(&quad, 3, 4.0).unwrap());
    assert_eq!(point_set(&a), point_set(&b));
    assert!(b.iter().all(|c| c.source_channel == 0));
}

fn map_strategy() -> impl Strategy<Value = GrayImage> {
    (4usize..20, 4usize..20).prop_flat_map(|(w, h)| {
        prop::collection::vec(0i32..6, w * h)
            .prop_map(move |v| GrayImage::new(w, h, v.into_iter().map(f64::from).collect()).unwrap())
    })
}

proptest! {
    #[test]
    fn strictly_increasing_maps_preserve_maxima(map in map_strategy(), margin in 0usize..3, sep in 0.0..4.0f64) {
        let a = regional_maxima(&map, margin, sep);
        let warped = map.map(|v| (0.3 * v).exp() * 7.0 - 2.0).unwrap();
        let b = regional_maxima(&warped, margin, sep);
        prop_assert_eq!(a.points(), b.points());
    }

    #[test]
    fn raising_tau_never_adds(map in map_strategy(), t1 in -1.0..6.0f64, dt in 0.0..4.0f64, rule in 0usize..3) {
        let rule = [ChannelRule::Any, ChannelRule::All, ChannelRule::Max][rule];
        let stack = FeatureStack::new(vec![map.clone(), map.map(|v| 5.0 - v).unwrap()], vec!["a".into(), "b".into()]).unwrap();
        let set = bank_maxima(&stack, 0, 0.0).unwrap();
        let low = threshold_candidates(&set, t1, rule);
        let high = threshold_candidates(&set, t1 + dt, rule);
        prop_assert!(high.is_subset_of(&low));
        prop_assert!(low.is_subset_of(&set));
    }
}
