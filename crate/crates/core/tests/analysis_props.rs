use fixsearch::analysis::*;
use fixsearch::gabor::GaborBankConfig;
use fixsearch::glcm::GlcmConfig;
use fixsearch::imagio::GrayImage;
use fixsearch::peaks::{Candidate, CandidateSet};
use fixsearch::phantom::{generate, LesionSpec, PhantomSpec};
use fixsearch::pipelines::RunConfig;
use proptest::prelude::*;

fn small() -> (GrayImage, RunConfig) {
    let spec = PhantomSpec {
        width: 160,
        height: 160,
        n_blobs: 50,
        blob_sigma: 5.0,
        lesion: LesionSpec { center: (80.0, 80.0), radius: 10.0, contrast: 1.0, spicules: 5 },
        ..Default::default()
    };
    let cfg = RunConfig {
        glcm: GlcmConfig { levels: 32, window: 20, ..Default::default() },
        gabor: GaborBankConfig::for_target_diameter(20.0),
        ..Default::default()
    };
    (generate(&spec).unwrap().0, cfg)
}

#[test]
fn feature_with_itself_is_one() {
    let (img, cfg) = small();
    for sampling in [Sampling::PerTile, Sampling::PerCandidate] {
        let r = feature_correlation(&img, &cfg, (Feature::GlcmMean, Feature::GlcmMean), sampling).unwrap();
        assert!((r.r - 1.0).abs() <= 1e-12);
        assert!(r.n >= 3);
    }
}

#[test]
fn default_pair_is_stable_and_bounded() {
    let (img, cfg) = small();
    let pair = (Feature::GlcmMean, Feature::GaborMax);
    let a = feature_correlation(&img, &cfg, pair, Sampling::PerTile).unwrap();
    let b = feature_correlation(&img, &cfg, pair, Sampling::PerTile).unwrap();
    assert_eq!(a.r.to_bits(), b.r.to_bits());
    assert!((-1.0..=1.0).contains(&a.r));
    assert_eq!(a.n, 64);
    assert_eq!(a.pair, ("glcm_mean".to_string(), "gabor_max".to_string()));
}

#[test]
fn negated_image_flips_gabor_sign() {
    let (img, cfg) = small();
    let neg = img.map(|v| -v).unwrap();
    let site = sample_features(&img, &cfg, Sampling::PerTile).unwrap();
    let site_neg = sample_features(&neg, &cfg, Sampling::PerTile).unwrap();
    let a = site.values(Feature::Gabor(0)).unwrap();
    let b = site_neg.values(Feature::Gabor(0)).unwrap();
    assert!((pearson(&a, &b).unwrap() + 1.0).abs() <= 1e-12);
    assert!(site.values(Feature::Gabor(9)).is_err());
}

#[test]
fn too_few_sites() {
    let img = GrayImage::from_fn(50, 50, |x, y| (x * y) as f64).unwrap();
    let cfg = RunConfig {
        glcm: GlcmConfig { levels: 8, window: 50, ..Default::default() },
        gabor: GaborBankConfig::for_target_diameter(5.0),
        ..Default::default()
    };
    assert!(feature_correlation(&img, &cfg, (Feature::GlcmMean, Feature::GaborMax), Sampling::PerTile).is_err());
}

fn set_strategy() -> impl Strategy<Value = CandidateSet> {
    prop::collection::vec((0usize..60, 0usize..60, -5.0..5.0f64), 0..12).prop_map(|pts| {
        let mut s = CandidateSet::empty(60, 60, 0);
        pts.into_iter().for_each(|(x, y, v)| s.push(Candidate::new(x, y, vec![v], 0)));
        s
    })
}

proptest! {
    #[test]
    fn pearson_affine_invariance(
        a in prop::collection::vec(-100.0..100.0f64, 3..40),
        seed in 0u64..1000,
        alpha in 0.01..50.0f64,
        beta in -100.0..100.0f64,
    ) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v.sin() * 3.0 + ((i as u64 * 7919 + seed) % 13) as f64).collect();
        prop_assume!(pearson(&a, &b).is_ok());
        let r = pearson(&a, &b).unwrap();
        let moved: Vec<f64> = a.iter().map(|v| alpha * v + beta).collect();
        let flipped: Vec<f64> = a.iter().map(|v| -alpha * v + beta).collect();
        prop_assert!((pearson(&moved, &b).unwrap() - r).abs() <= 1e-12);
        prop_assert!((pearson(&flipped, &b).unwrap() + r).abs() <= 1e-12);
        prop_assert!((pearson(&b, &moved).unwrap() - r).abs() <= 1e-12);
    }

    #[test]
    fn gaze_monotone_in_radius(
        set in set_strategy(),
        gaze in prop::collection::vec((0u8..4, 0.0..60.0f64, 0.0..60.0f64, 0.0..3000.0f64), 1..20),
        r1 in 0.1..30.0f64,
        dr in 0.0..30.0f64,
    ) {
        let mut records: Vec<GazeRecord> = gaze
            .into_iter()
            .map(|(o, x, y, t)| GazeRecord { observer_id: format!("o{o}"), t_ms: t, x, y, valid: true })
            .collect();
        records.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));
        prop_assume!(records.iter().any(|g| g.t_ms <= 2000.0));
        let a = gaze_containment(&records, &set, r1, 2000.0).unwrap();
        let b = gaze_containment(&records, &set, r1 + dr, 2000.0).unwrap();
        prop_assert!(b.fraction >= a.fraction);
    }

    #[test]
    fn self_agreement_is_total(set in set_strategy(), tol in 0.0..10.0f64) {
        prop_assume!(!set.is_empty());
        let r = candidate_agreement(&set, &set, tol).unwrap();
        prop_assert_eq!((r.precision, r.recall), (Some(1.0), Some(1.0)));
    }
}
