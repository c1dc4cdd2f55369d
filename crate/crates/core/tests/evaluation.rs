use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use upada_core::eval::{disentanglement_probes, domain_confusion_report, evaluate_accuracy, score, train_probe};
use upada_core::faces::{generate_dataset, split_loso, Dataset, FactorSpec, TargetTrain};
use upada_core::model::{init_bundle, ArchConfig, Component};

fn data() -> Dataset {
    generate_dataset(&FactorSpec {
        n_subjects: 4,
        samples_per_cell: 3,
        side: 16,
        ..Default::default()
    })
    .unwrap()
}

fn arch(ds: &Dataset) -> ArchConfig {
    ArchConfig {
        input_dim: ds.spec.pixels(),
        trunk_hidden: 24,
        pose_dim: 6,
        expr_dim: 8,
        head_hidden: 8,
        gen_hidden: 8,
        n_poses: ds.spec.n_poses,
        n_expressions: ds.spec.n_expressions,
    }
}

#[test]
fn shuffled_labels_probe_at_chance() {
    let ds = data();
    let x = ds.all_images();
    let mut y: Vec<usize> = ds.samples().iter().map(|s| s.expression).collect();
    y.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let acc = train_probe(&x, &y, 6, 0).unwrap();
    assert!((acc.test - 1.0 / 6.0).abs() <= 0.1, "{}", acc.test);
}

#[test]
fn probes_are_hermetic_and_deterministic() {
    let ds = data();
    let sp = split_loso(&ds, 1, 0).unwrap();
    let bundle = init_bundle(5, arch(&ds)).unwrap();
    let before = bundle.params.clone();
    let a = domain_confusion_report(&bundle, &sp.source, &sp.target_train, 9).unwrap();
    let b = disentanglement_probes(&bundle, &sp.source, 9).unwrap();
    let acc = evaluate_accuracy(&bundle, &sp.target_test).unwrap();
    assert_eq!(bundle.params, before);
    assert_eq!(a, domain_confusion_report(&bundle, &sp.source, &sp.target_train, 9).unwrap());
    assert_eq!(b, disentanglement_probes(&bundle, &sp.source, 9).unwrap());
    assert_eq!(acc, evaluate_accuracy(&bundle, &sp.target_test).unwrap());
}

/// With `E_t = E_s` and a "target" drawn from the source distribution, the
/// domain probes cannot beat chance by much.
#[test]
fn identical_distributions_are_indistinguishable() {
    let ds = data();
    let mut bundle = init_bundle(2, arch(&ds)).unwrap();
    bundle.copy_component(Component::Es, Component::Et);
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let (a, b) = idx.split_at(ds.len() / 2);
    let pick = |ix: &[usize]| Dataset::from_samples(ds.spec.clone(), ix.iter().map(|&i| ds.get(i).clone()).collect()).unwrap();
    let (fe, fp) = domain_confusion_report(&bundle, &pick(a), &TargetTrain::new(pick(b)), 4).unwrap();
    assert!((fe.test_acc - 0.5).abs() < 0.15, "{}", fe.test_acc);
    assert!((fp.test_acc - 0.5).abs() < 0.15, "{}", fp.test_acc);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn overall_is_weighted_mean_of_poses(seed in any::<u64>(), subject in 0usize..4) {
        let ds = data();
        let sp = split_loso(&ds, subject, seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<usize> = sp.target_test.samples().iter().map(|s| {
            if rand::Rng::gen_bool(&mut r, 0.5) { s.expression } else { rand::Rng::gen_range(&mut r, 0..6) }
        }).collect();
        let rep = score(&preds, &sp.target_test).unwrap();
        let weighted: f64 = rep.per_pose.iter().zip(&rep.per_pose_counts).map(|(a, &c)| a * c as f64).sum::<f64>()
            / sp.target_test.len() as f64;
        prop_assert!((weighted - rep.overall).abs() < 1e-12);
        prop_assert_eq!(rep.per_pose.len(), 5);
        prop_assert!(rep.per_pose.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}
