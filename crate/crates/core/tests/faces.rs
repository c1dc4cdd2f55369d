use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use upada_core::eval::train_probe;
use upada_core::faces::{
    generate_dataset, lookup_by_labels, oval_mask, pan_angle, render_sample, shear, split_loso, Dataset, FactorSpec,
};
use upada_core::tensor::Tensor;
use upada_core::Error;

fn default_data() -> Dataset {
    generate_dataset(&FactorSpec::default()).unwrap()
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn default_counts() {
    let ds = default_data();
    assert_eq!(ds.len(), 1800);
    for p in 0..5 {
        for e in 0..6 {
            assert_eq!(ds.index().bucket(p, e).len(), 60);
        }
    }
    for s in ds.samples() {
        assert_eq!(s.image.len(), 24 * 24);
        assert!(s.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = FactorSpec {
        n_subjects: 3,
        seed: 42,
        ..Default::default()
    };
    assert_eq!(generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
    let other = FactorSpec { seed: 43, ..spec.clone() };
    assert_ne!(generate_dataset(&spec).unwrap(), generate_dataset(&other).unwrap());
    let a = render_sample(&spec, 1, 2, 3, 99).unwrap();
    let b = render_sample(&spec, 1, 2, 3, 99).unwrap();
    assert_eq!(a, b);
}

#[test]
fn regenerate_from_recorded_seeds() {
    let ds = default_data();
    for s in ds.samples().iter().step_by(97) {
        let img = render_sample(&ds.spec, s.subject, s.expression, s.pose, s.noise_seed).unwrap();
        assert_eq!(img, s.image);
    }
}

#[test]
fn middle_pose_is_unsheared() {
    let spec = FactorSpec::default();
    assert!(pan_angle(&spec, 2).abs() < 1e-12);
    assert!((pan_angle(&spec, 0) + 30f64.to_radians()).abs() < 1e-12);
    assert!((pan_angle(&spec, 4) - 30f64.to_radians()).abs() < 1e-12);
    let img: Vec<f64> = oval_mask(24);
    assert_eq!(shear(&img, 24, 0.0), img);
}

#[test]
fn invalid_specs_and_ids() {
    let bad = FactorSpec {
        side: 8,
        ..Default::default()
    };
    assert!(matches!(generate_dataset(&bad), Err(Error::Config { field: "side", .. })));
    let neg = FactorSpec {
        noise_sigma: -1.0,
        ..Default::default()
    };
    assert!(matches!(generate_dataset(&neg), Err(Error::Config { field: "noise_sigma", .. })));
    assert!(render_sample(&FactorSpec::default(), 10, 0, 0, 0).is_err());
    assert!(render_sample(&FactorSpec::default(), 0, 6, 0, 0).is_err());
}

/// Different expressions of the same (subject, pose) are further apart than
/// different noise draws of the same cell.
#[test]
fn expressions_are_separable_from_noise() {
    let ds = default_data();
    let (mut between, mut nb) = (0.0, 0usize);
    let (mut within, mut nw) = (0.0, 0usize);
    let s = ds.samples();
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            let (a, b) = (&s[i], &s[j]);
            if a.subject != b.subject || a.pose != b.pose {
                continue;
            }
            let d = l2(&a.image, &b.image);
            if a.expression == b.expression {
                within += d;
                nw += 1;
            } else {
                between += d;
                nb += 1;
            }
        }
    }
    let (between, within) = (between / nb as f64, within / nw as f64);
    assert!(between > within, "between {between} within {within}");
}

#[test]
fn split_counts_and_partition() {
    let ds = default_data();
    for subject in 0..10 {
        let sp = split_loso(&ds, subject, 5).unwrap();
        assert_eq!((sp.source.len(), sp.target_train.len(), sp.target_test.len()), (1620, 120, 60));
        let ids = |d: &Dataset| d.samples().iter().map(|s| s.id).collect::<Vec<_>>();
        let mut all: Vec<usize> = ids(&sp.source);
        all.extend(ids(sp.target_train.reveal()));
        all.extend(ids(&sp.target_test));
        assert_eq!(all.len(), 1800);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 1800, "parts overlap");
        assert!(sp.source.samples().iter().all(|s| s.subject != subject));
        assert!(sp.target_test.samples().iter().all(|s| s.subject == subject));
        assert!(sp.target_train.reveal().samples().iter().all(|s| s.subject == subject));
    }
    assert!(split_loso(&ds, 10, 0).is_err());
}

#[test]
fn split_is_seeded() {
    let ds = default_data();
    let a = split_loso(&ds, 3, 1).unwrap();
    assert_eq!(a, split_loso(&ds, 3, 1).unwrap());
    assert_ne!(a.target_test, split_loso(&ds, 3, 2).unwrap().target_test);
}

#[test]
fn target_labels_are_hidden() {
    let ds = default_data();
    let sp = split_loso(&ds, 0, 0).unwrap();
    for i in 0..sp.target_train.len() {
        assert_eq!(sp.target_train.expression(i), None);
        assert_eq!(sp.target_train.pose(i), None);
    }
}

#[test]
fn lookup_returns_matching_labels() {
    let ds = default_data();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    for p in 0..5 {
        for e in 0..6 {
            let s = lookup_by_labels(&ds, p, e, &mut r).unwrap();
            assert_eq!((s.pose, s.expression), (p, e));
        }
    }
    assert!(lookup_by_labels(&ds, 5, 0, &mut r).is_none());
}

fn tiny_dataset(cells: &[(usize, usize)]) -> Dataset {
    let spec = FactorSpec {
        n_subjects: 2,
        samples_per_cell: 1,
        ..Default::default()
    };
    let full = generate_dataset(&spec).unwrap();
    let keep: Vec<_> = full
        .samples()
        .iter()
        .filter(|s| cells.iter().any(|&(sub, e)| s.subject == sub && s.expression == e && s.pose == 0))
        .cloned()
        .collect();
    Dataset::from_samples(spec, keep).unwrap()
}

#[test]
fn lookup_single_and_empty_buckets() {
    let ds = tiny_dataset(&[(0, 1)]);
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let only = ds.get(0).id;
    for _ in 0..10 {
        assert_eq!(lookup_by_labels(&ds, 0, 1, &mut r).unwrap().id, only);
    }
    assert!(lookup_by_labels(&ds, 0, 2, &mut r).is_none());
}

#[test]
fn lookup_is_uniform() {
    let spec = FactorSpec {
        n_subjects: 4,
        samples_per_cell: 1,
        ..Default::default()
    };
    let ds = generate_dataset(&spec).unwrap();
    assert_eq!(ds.index().bucket(1, 3).len(), 4);
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut counts = std::collections::HashMap::new();
    for _ in 0..1000 {
        *counts.entry(lookup_by_labels(&ds, 1, 3, &mut r).unwrap().id).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 4);
    for (&id, &c) in &counts {
        let f = c as f64 / 1000.0;
        assert!((0.15..=0.35).contains(&f), "sample {id}: {f}");
    }
}

/// Generator health gate: both factors are linearly recoverable from raw pixels.
#[test]
fn raw_pixel_probe_recovers_factors() {
    let ds = default_data();
    let sp = split_loso(&ds, 0, 0).unwrap();
    let x: Tensor = sp.source.all_images();
    let expr: Vec<usize> = sp.source.samples().iter().map(|s| s.expression).collect();
    let pose: Vec<usize> = sp.source.samples().iter().map(|s| s.pose).collect();
    let e = train_probe(&x, &expr, 6, 1).unwrap();
    let p = train_probe(&x, &pose, 5, 1).unwrap();
    assert!(e.test > 0.8, "expression {}", e.test);
    assert!(p.test > 0.8, "pose {}", p.test);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn split_partition_holds(n_subjects in 2usize..5, subject in 0usize..5, seed in 0u64..1000) {
        prop_assume!(subject < n_subjects);
        let spec = FactorSpec { n_subjects, samples_per_cell: 2, seed, ..Default::default() };
        let ds = generate_dataset(&spec).unwrap();
        let sp = split_loso(&ds, subject, seed).unwrap();
        let per = 6 * 5 * 2;
        prop_assert_eq!(sp.source.len(), (n_subjects - 1) * per);
        prop_assert_eq!(sp.target_train.len(), per * 2 / 3);
        prop_assert_eq!(sp.target_test.len(), per - per * 2 / 3);
        let mut ids: Vec<usize> = sp.source.samples().iter()
            .chain(sp.target_train.reveal().samples())
            .chain(sp.target_test.samples())
            .map(|s| s.id).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..ds.len()).collect::<Vec<_>>());
    }

    #[test]
    fn pixels_stay_in_unit_range(subject in 0usize..10, e in 0usize..6, p in 0usize..5, noise in any::<u64>()) {
        let spec = FactorSpec { noise_sigma: 0.3, ..Default::default() };
        let img = render_sample(&spec, subject, e, p, noise).unwrap();
        prop_assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
