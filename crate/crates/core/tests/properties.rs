use std::collections::BTreeSet;

use nalgebra::DMatrix;
use proptest::prelude::*;
use tckit::classify::{auc, stratified_folds};
use tckit::data;
use tckit::synth::{generate, SynthSpec};
use tckit::tck::{build_tck, TckSettings};

fn ids(ds: &tckit::data::MtsDataset) -> BTreeSet<String> {
    ds.ids().into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_and_balance_conserve_records(n0 in 3usize..20, n1 in 3usize..20, frac in 0.3f64..0.8, seed in 0u64..1000) {
        let mut spec = SynthSpec::two_moons_mts(n0, 0.0, seed);
        spec.clusters[1].n = n1;
        let (ds, _) = generate(&spec).unwrap();
        let (train, test) = data::split_train_test(&ds, frac, seed).unwrap();
        prop_assert!(ids(&train).is_disjoint(&ids(&test)));
        prop_assert_eq!(train.n() + test.n(), ds.n());
        let (btrain, btest) = data::balance_train(&train, &test, seed).unwrap();
        let [a, b] = btrain.class_counts();
        prop_assert_eq!(a, b);
        let mut all = ids(&btrain);
        all.extend(ids(&btest));
        prop_assert_eq!(all, ids(&ds));
        prop_assert_eq!(btrain.n() + btest.n(), ds.n());
    }

    #[test]
    fn auc_of_negated_scores_is_complement(scores in prop::collection::vec(-1e3f64..1e3, 4..60), split in 1usize..3) {
        let y: Vec<u8> = (0..scores.len()).map(|i| u8::from(i % (split + 1) == 0)).collect();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = auc(&y, &scores).unwrap();
        let b = auc(&y, &neg).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn folds_are_a_stratified_partition(n in 10usize..80, k in 2usize..5, seed in 0u64..1000) {
        let y: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        let folds = stratified_folds(&y, k, seed).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for f in &folds {
            prop_assert!(f.iter().any(|&i| y[i] == 1) && f.iter().any(|&i| y[i] == 0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn tck_kernel_is_symmetric_psd(seed in 0u64..10_000, missing in 0.0f64..0.4) {
        let (ds, _) = generate(&SynthSpec::two_moons_mts(8, missing, seed)).unwrap();
        let settings = TckSettings { max_components: 3, randomizations: 2, ..Default::default() };
        let k = build_tck(&ds, &settings, seed).unwrap().k;
        prop_assert!((&k - k.transpose()).amax() < 1e-12);
        let eig = nalgebra::SymmetricEigen::new(k.clone()).eigenvalues;
        let max = eig.max();
        prop_assert!(eig.min() >= -1e-8 * max);
        prop_assert!(k.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        prop_assert_eq!(k.diagonal(), DMatrix::<f64>::from_element(ds.n(), 1, 1.0).column(0).into_owned());
    }
}
