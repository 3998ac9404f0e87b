use fixsearch::gabor::GaborBankConfig;
use fixsearch::glcm::GlcmConfig;
use fixsearch::imagio::GrayImage;
use fixsearch::peaks::{CandidateSet, ChannelRule};
use fixsearch::phantom::{generate, DensityClass, LesionSpec, PhantomSpec};
use fixsearch::pipelines::*;

fn small_phantom(seed: u64) -> (GrayImage, (f64, f64), f64) {
    let center = (60.0 + (seed * 37 % 70) as f64, 70.0 + (seed * 53 % 60) as f64);
    let spec = PhantomSpec {
        width: 192,
        height: 192,
        seed,
        n_blobs: 60,
        blob_sigma: 5.0,
        density_class: DensityClass::ALL[(seed % 3) as usize],
        lesion: LesionSpec { center, radius: 10.0, contrast: 1.0, spicules: 6 },
        ..Default::default()
    };
    let (img, truth) = generate(&spec).unwrap();
    (img, truth.center, truth.radius)
}

fn small_config(seed: u64, hint: Option<(f64, f64)>) -> RunConfig {
    RunConfig {
        glcm: GlcmConfig { levels: 32, window: 40, ..Default::default() },
        gabor: GaborBankConfig::for_target_diameter(20.0),
        lesion_hint: hint,
        seed,
        ..Default::default()
    }
}

fn keys(set: &CandidateSet) -> Vec<(usize, usize, usize)> {
    set.iter().map(|c| c.key()).collect()
}

fn near(set: &CandidateSet, p: (f64, f64), r: f64) -> bool {
    set.iter().any(|c| c.dist2(p.0, p.1) <= r * r)
}

#[test]
fn final_is_subset_of_initial_for_every_pipeline() {
    for seed in 0..6 {
        let (img, center, _) = small_phantom(seed);
        for hint in [Some(center), None] {
            let cfg = small_config(seed, hint);
            for kind in [PipelineKind::A, PipelineKind::B, PipelineKind::Threshold] {
                let r = run_pipeline(kind, &img, &cfg).unwrap();
                assert!(r.final_set.is_subset_of(&r.initial), "{kind:?} seed {seed}");
                assert!(r.final_set.len() <= r.initial.len());
                for c in r.final_set.iter() {
                    let orig = r.initial.iter().find(|o| o.key() == c.key()).unwrap();
                    assert_eq!(c.stage_tags[..orig.stage_tags.len()], orig.stage_tags[..]);
                    assert_eq!(c.scores, orig.scores);
                }
            }
        }
    }
}

#[test]
fn hinted_pipelines_find_the_lesion() {
    let mut hits = [0; 3];
    for seed in 0..6 {
        let (img, center, radius) = small_phantom(seed);
        let cfg = small_config(seed, Some(center));
        for (i, kind) in [PipelineKind::A, PipelineKind::B, PipelineKind::Threshold].into_iter().enumerate() {
            hits[i] += near(&run_pipeline(kind, &img, &cfg).unwrap().final_set, center, radius) as usize;
        }
    }
    assert!(hits.iter().all(|&h| h >= 5), "{hits:?}");
}

#[test]
fn all_true_mask_is_identity_screening() {
    let (img, center, _) = small_phantom(1);
    let cfg = small_config(1, Some(center));
    let all = Mask::filled(192, 192, true);
    let r = pipeline_a_with_mask(&img, &cfg, Some(&all)).unwrap();
    assert_eq!(keys(&r.final_set), keys(&r.initial));
    assert!(r.warnings.iter().all(|w| !w.contains("mask is empty")));

    let none = Mask::filled(192, 192, false);
    let r = pipeline_a_with_mask(&img, &cfg, Some(&none)).unwrap();
    assert!(r.final_set.is_empty());
    assert!(r.warnings.iter().any(|w| w.contains("mask is empty")));
}

#[test]
fn single_cluster_b_keeps_everything() {
    let (img, _, _) = small_phantom(2);
    let mut cfg = small_config(2, None);
    cfg.gmm_b.k = 1;
    let r = pipeline_b(&img, &cfg).unwrap();
    assert_eq!(keys(&r.final_set), keys(&r.initial));
}

#[test]
fn b_falls_back_when_candidates_are_scarce() {
    let (img, _, _) = small_phantom(3);
    let mut cfg = small_config(3, None);
    cfg.gmm_b.k = 500;
    let r = pipeline_b(&img, &cfg).unwrap();
    assert_eq!(keys(&r.final_set), keys(&r.initial));
    assert!(r.warnings.iter().any(|w| w.contains("keeping all")));
}

#[test]
fn threshold_sweep_is_monotone() {
    let (img, center, radius) = small_phantom(4);
    let mut cfg = small_config(4, None);
    cfg.threshold.tau = Some(f64::NEG_INFINITY);
    let base = pipeline_threshold(&img, &cfg).unwrap();
    assert_eq!(keys(&base.final_set), keys(&base.initial));
    assert_eq!(base.tau, None);

    for rule in [ChannelRule::Any, ChannelRule::All, ChannelRule::Max] {
        cfg.threshold.channel_rule = rule;
        let mut prev: Option<CandidateSet> = None;
        for step in 0..12 {
            cfg.threshold.tau = Some(-200.0 + 60.0 * step as f64);
            let r = pipeline_threshold(&img, &cfg).unwrap();
            if let Some(p) = &prev {
                assert!(r.final_set.is_subset_of(p));
            }
            prev = Some(r.final_set);
        }
    }

    // the lesion candidate survives a threshold just below its own score
    let lesion = base.initial.iter().filter(|c| c.dist2(center.0, center.1) <= radius * radius).map(|c| c.primary_score()).fold(f64::NEG_INFINITY, f64::max);
    assert!(lesion.is_finite());
    cfg.threshold.channel_rule = ChannelRule::Max;
    cfg.threshold.tau = Some(lesion - 1e-9);
    let r = pipeline_threshold(&img, &cfg).unwrap();
    assert!(near(&r.final_set, center, radius));
}

#[test]
fn percentile_threshold_keeps_upper_half() {
    let (img, _, _) = small_phantom(5);
    let cfg = small_config(5, None);
    let r = pipeline_threshold(&img, &cfg).unwrap();
    let tau = r.tau.unwrap();
    let scores: Vec<f64> = r.initial.iter().map(|c| c.primary_score()).collect();
    assert_eq!(percentile(&scores, 50.0), Some(tau));
    assert_eq!(r.final_set.len(), scores.iter().filter(|&&s| s > tau).count());
}

#[test]
fn reports_are_byte_stable() {
    let (img, center, _) = small_phantom(0);
    for hint in [Some(center), None] {
        let cfg = small_config(9, hint);
        for kind in [PipelineKind::A, PipelineKind::B, PipelineKind::Threshold] {
            let a = run_pipeline(kind, &img, &cfg).unwrap().to_json();
            let b = run_pipeline(kind, &img, &cfg).unwrap().to_json();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn mask_matches_image_and_selected_cluster() {
    let (img, center, _) = small_phantom(2);
    let cfg = small_config(2, Some(center));
    let r = pipeline_a(&img, &cfg).unwrap();
    let mask = r.mask.as_ref().unwrap();
    assert_eq!((mask.width, mask.height), (192, 192));
    assert!(mask.get(center.0 as usize, center.1 as usize));
    assert_eq!(r.selection_mode, Some(SelectionMode::Hint));
    assert_eq!(r.mask_pixels, Some(mask.count()));
}

#[test]
fn image_too_small_for_kernel() {
    let img = GrayImage::filled(64, 64, 1.0).unwrap();
    assert!(pipeline_threshold(&img, &RunConfig::default()).is_err());
}
