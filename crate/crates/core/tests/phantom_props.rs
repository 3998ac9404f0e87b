use fixsearch::phantom::*;

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

#[test]
fn density_presets_order_background_variance() {
    for seed in 0..4 {
        let var = |d: DensityClass| {
            let mut spec = PhantomSpec { seed, density_class: d, ..Default::default() };
            spec.lesion.contrast = 0.0;
            variance(generate(&spec).unwrap().0.data())
        };
        let (f, s, h) = (var(DensityClass::Fatty), var(DensityClass::Scattered), var(DensityClass::Heterogeneous));
        assert!(h > s && s > f, "seed {seed}: {f} {s} {h}");
    }
}

#[test]
fn lesion_contrast_measured_against_annulus() {
    for seed in 0..9 {
        let spec = PhantomSpec::suite_member(seed);
        let (img, truth) = generate(&spec).unwrap();
        let (cx, cy) = truth.center;
        let r = truth.radius;
        let (mut inside, mut ring) = (Vec::new(), Vec::new());
        for y in 0..img.height() {
            for x in 0..img.width() {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d <= r {
                    inside.push(img.get(x, y));
                } else if d <= r * 2f64.sqrt() {
                    ring.push(img.get(x, y));
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let measured = mean(&inside) - mean(&ring);
        let c = spec.lesion.contrast;
        assert!((measured - c).abs() <= 0.2 * c, "seed {seed}: {measured}");
    }
}

#[test]
fn distinct_seeds_distinct_images() {
    let a = generate(&PhantomSpec::suite_member(3)).unwrap().0;
    let b = generate(&PhantomSpec { seed: 4, ..PhantomSpec::suite_member(3) }).unwrap().0;
    assert_ne!(a, b);
    assert_eq!(a, generate(&PhantomSpec::suite_member(3)).unwrap().0);
}
