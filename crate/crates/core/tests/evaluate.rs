mod common;

use haicmp_core::evaluate::{
    auc_score, default_fpr_grid, dual_label_confusion, interpolate_tpr, roc_curve, tree_attribution, vertical_average_roc,
    youden_threshold,
};
use haicmp_core::learner::{train, FeatureMatrix, Hyperparameters};
use proptest::prelude::*;

use common::{u_statistic_auc, youden_scan};

/// Scores on a coarse lattice so ties are common, with both classes present.
fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..12, any::<bool>()), 2..60).prop_map(|mut v| {
        v[0].1 = true;
        v[1].1 = false;
        v.into_iter().map(|(s, y)| (s as f64 / 11.0, y)).unzip()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_is_the_u_statistic((scores, labels) in scored()) {
        prop_assert!((auc_score(&scores, &labels).unwrap() - u_statistic_auc(&scores, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn youden_matches_the_scan((scores, labels) in scored()) {
        prop_assert_eq!(youden_threshold(&roc_curve(&scores, &labels).unwrap()), youden_scan(&scores, &labels));
    }

    #[test]
    fn confusion_partitions_every_sample((scores, labels) in scored(), theta in -0.1f64..1.1, flips in prop::collection::vec(any::<bool>(), 60)) {
        let iri: Vec<bool> = labels.iter().zip(&flips).map(|(&v, &f)| v || f).collect();
        let c = dual_label_confusion(&scores, theta, &labels, &iri).unwrap();
        prop_assert_eq!(c.total(), scores.len());
        let predicted = scores.iter().filter(|&&s| s >= theta).count();
        prop_assert_eq!(c.cells.iter().filter(|x| x.predicted).map(|x| x.count).sum::<usize>(), predicted);
    }

    #[test]
    fn averaging_copies_of_a_curve_returns_it((scores, labels) in scored(), k in 1usize..5) {
        let curve = roc_curve(&scores, &labels).unwrap();
        let grid = default_fpr_grid();
        let avg = vertical_average_roc(&vec![curve.clone(); k], &grid, 1.96).unwrap();
        for (x, m) in grid.iter().zip(&avg.mean_tpr) {
            prop_assert!((m - interpolate_tpr(&curve, *x)).abs() < 1e-12);
        }
        prop_assert!(avg.mean_tpr.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn attributions_add_up_to_the_margin(seed in any::<u64>(), depth in 1usize..6) {
        use haicmp_core::rng::rng_from_seed;
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let rows: Vec<Vec<Option<f64>>> =
            (0..150).map(|_| (0..4).map(|_| (!rng.random_bool(0.3)).then(|| rng.random_range(0.0..1.0))).collect()).collect();
        let labels: Vec<bool> = (0..150).map(|i| i % 2 == 0 || rows[i][1].is_some_and(|v| v > 0.7)).collect();
        let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let hp = Hyperparameters { max_depth: depth, n_rounds: 20, learning_rate: 0.3, ..Default::default() };
        let model = train(&FeatureMatrix::from_rows(&rows, 4).unwrap(), &labels, &names, &hp, seed).unwrap();
        for r in rows.iter().take(40) {
            let a = tree_attribution(&model, r).unwrap();
            prop_assert!((a.total() - model.predict_margin(r).unwrap()).abs() <= 1e-6);
        }
    }
}
