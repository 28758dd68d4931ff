use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kinverify::bsif::{bsif_encode, learn_filters, ChannelFilters, PatchSet};
use kinverify::config::{BankSource, Descriptors, Fusion, RunConfig};
use kinverify::features::FeatureTensor;
use kinverify::imaging::{normalize_patch, Channel, Plane};
use kinverify::linalg::{asymmetry, sorted_eigen};
use kinverify::protocol::{
    prepare_records, run_cross_validation, synth_kin_dataset, SynthDataset, SynthOptions, FOLDS,
};
use kinverify::scoring::{cosine_score, Label};
use kinverify::subspace::{
    compute_sild_scatters, project, txqda_fit, SpectrumClip, TensorPair, TxqdaOptions, VectorPair,
};

fn dataset(dir: &std::path::Path, families: usize) -> SynthDataset {
    synth_kin_dataset(dir, SynthOptions { seed: 11, families, difficulty: 0.5 }).unwrap()
}

fn small_config() -> RunConfig {
    RunConfig {
        bsif_sizes: vec![3, 5],
        patches: 1500,
        dim_mode1: 10,
        dim_mode2: 4,
        ..RunConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scatters_are_symmetric_psd_and_exp_within_is_at_least_one(
        seed in any::<u64>(),
        dim in 1usize..12,
        pairs in 2usize..20,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs)
            .map(|_| {
                let p = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let c = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (p, c)
            })
            .collect();
        let labeled: Vec<VectorPair> = vectors
            .iter()
            .enumerate()
            .map(|(i, (p, c))| VectorPair {
                parent: p,
                child: c,
                label: if i % 2 == 0 { Label::Kin } else { Label::NonKin },
            })
            .collect();
        let mut sc = compute_sild_scatters(&labeled, dim).unwrap();
        for s in [&sc.within, &sc.between] {
            prop_assert!(asymmetry(s) <= 1e-9);
            let (values, _) = sorted_eigen(s.clone());
            prop_assert!(values.iter().all(|&v| v >= -1e-9));
        }
        sc.exponentiate(SpectrumClip::DEFAULT).unwrap();
        let (values, _) = sorted_eigen(sc.exp_within.clone().unwrap());
        prop_assert!(values.iter().all(|&v| v >= 1.0 - 1e-9));
    }

    #[test]
    fn bsif_codes_stay_in_range(seed in any::<u64>(), side in prop::sample::select(vec![3usize, 5, 7]), bits in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<f64> = (0..bits * side * side).map(|_| rng.random_range(-1.0..1.0)).collect();
        let filters = ChannelFilters::new(side, bits, &coeffs).unwrap();
        let plane = Plane::from_fn(12, 10, |_, _| rng.random_range(0.0..1.0));
        let map = bsif_encode(&plane, filters).unwrap();
        prop_assert_eq!((map.width(), map.height()), (12, 10));
        prop_assert!(map.codes().iter().all(|&c| c < 1 << bits));
    }
}

#[test]
fn ica_unmixing_is_orthonormal_at_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (side, count) = (5, 600);
    let mut rows = Vec::with_capacity(count * side * side);
    for _ in 0..count {
        let raw: Vec<f64> = (0..side * side).map(|_| rng.random_range(-1.0f64..1.0).powi(3)).collect();
        rows.extend(normalize_patch(&raw).unwrap());
    }
    let set = PatchSet::from_rows(side, Channel::Green, DMatrix::from_row_slice(count, side * side, &rows)).unwrap();
    let learned = learn_filters(&set, 8, 5).unwrap();
    assert!(learned.orthonormality_error <= 1e-6, "{}", learned.orthonormality_error);
    let u = &learned.unmixing;
    let err = (u * u.transpose() - DMatrix::identity(8, 8)).amax();
    assert!(err <= 1e-6, "{err}");
}

/// Kin pairs share the first rows; every entry has the same spread, at the
/// small scale of normalized histogram features.
fn planted_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<(FeatureTensor, FeatureTensor, Label)> {
    let (d1, d2, shared, scale) = (16, 2, 3, 0.05);
    (0..n)
        .map(|i| {
            let kin = i % 2 == 0;
            let parent = DMatrix::from_fn(d1, d2, |_, _| scale * rng.random_range(-1.0..1.0));
            let child = DMatrix::from_fn(d1, d2, |r, c| {
                if kin && r < shared {
                    parent[(r, c)] + 0.1 * scale * rng.random_range(-1.0..1.0)
                } else {
                    scale * rng.random_range(-1.0..1.0)
                }
            });
            let label = if kin { Label::Kin } else { Label::NonKin };
            (FeatureTensor::from_matrix(parent).unwrap(), FeatureTensor::from_matrix(child).unwrap(), label)
        })
        .collect()
}

fn separation(opts: TxqdaOptions, train: &[TensorPair], test: &[(FeatureTensor, FeatureTensor, Label)]) -> f64 {
    let model = txqda_fit(train, opts).unwrap();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (p, c, label) in test {
        let s = cosine_score(&project(&model, p).unwrap(), &project(&model, c).unwrap()).unwrap().value();
        if label.is_kin() {
            pos.push(s)
        } else {
            neg.push(s)
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    mean(&pos) - mean(&neg)
}

#[test]
fn txqda_is_reproducible_and_shuffled_labels_lose_the_separation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let train_data = planted_pairs(&mut rng, 400);
    let test_data = planted_pairs(&mut rng, 200);
    let opts = TxqdaOptions { dims: (3, 2), ..TxqdaOptions::default() };
    let train: Vec<TensorPair> = train_data
        .iter()
        .map(|(p, c, l)| TensorPair { parent: p, child: c, label: *l })
        .collect();
    assert_eq!(txqda_fit(&train, opts).unwrap(), txqda_fit(&train, opts).unwrap());

    let mut labels: Vec<Label> = train.iter().map(|p| p.label).collect();
    for i in (1..labels.len()).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    let shuffled: Vec<TensorPair> = train
        .iter()
        .zip(&labels)
        .map(|(p, &label)| TensorPair { label, ..*p })
        .collect();
    let real = separation(opts, &train, &test_data);
    let control = separation(opts, &shuffled, &test_data);
    assert!(real > 0.3, "separation with true labels {real}");
    assert!(control < real / 2.0, "shuffled {control} vs true {real}");
}

#[test]
fn prepare_records_assigns_folds_and_negatives() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 12);
    let cfg = RunConfig::default();
    let prepared = prepare_records(&ds.records, &cfg).unwrap();
    let positives = prepared.iter().filter(|r| r.label.is_kin()).count();
    assert_eq!(positives, ds.records.len());
    assert_eq!(prepared.len(), 2 * positives);
    for fold in 1..=FOLDS as u8 {
        let (pos, neg) = prepared
            .iter()
            .filter(|r| r.fold == Some(fold))
            .fold((0, 0), |(p, n), r| if r.label.is_kin() { (p + 1, n) } else { (p, n + 1) });
        assert_eq!(pos, neg, "fold {fold}");
    }
    assert_eq!(prepare_records(&ds.records, &cfg).unwrap(), prepared);
}

#[test]
fn cross_validation_is_deterministic_and_clean() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 12);
    let cfg = small_config();
    let a = run_cross_validation(&ds.records, &cfg).unwrap();
    let b = run_cross_validation(&ds.records, &cfg).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.scored, b.scored);
    assert!(a.audit.leaks().is_empty());
    assert_eq!(a.folds.len(), FOLDS);
    assert!(a.metrics.mean_accuracy > 60.0, "{}", a.metrics.mean_accuracy);
}

#[test]
fn score_fusion_and_lbp_runs_complete() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 12);
    let score = RunConfig { fusion: Fusion::Score, ..small_config() };
    let outcome = run_cross_validation(&ds.records, &score).unwrap();
    assert_eq!(outcome.folds[0].views.len(), 2);

    let lbp = RunConfig { descriptors: Descriptors::Lbp, ..small_config() };
    let outcome = run_cross_validation(&ds.records, &lbp).unwrap();
    assert_eq!(outcome.folds[0].views.len(), 1);
    assert!(outcome.audit.leaks().is_empty());
}

#[test]
fn all_data_banks_are_reported_as_leaks() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 12);
    let cfg = RunConfig { bank_source: BankSource::AllData, ..small_config() };
    let outcome = run_cross_validation(&ds.records, &cfg).unwrap();
    assert!(!outcome.audit.leaks().is_empty());
}
