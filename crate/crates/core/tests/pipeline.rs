use conformal_ood::conformal::{aggregated_scores, calibrate, calibration_root, test_root};
use conformal_ood::ncm::base_ncm;
use conformal_ood::synthetic::{generate, SyntheticSpec};
use conformal_ood::transforms::sample_transform;
use conformal_ood::{
    p_value, score_vector, Aggregation, LossKind, Model, NcmConfig, Scorer, Tensor, TransformFamily,
};
use conformal_ood_oracles::oracle_p_value;

fn noisy_scorer() -> Scorer {
    Scorer::new(
        NcmConfig::equivariance(LossKind::SquaredError),
        Model::noisy_annulus_invariant(0.3, 4),
        TransformFamily::rotation_2d(),
    )
}

/// Base score for point `j` under the single transform its stream yields.
fn single_scores(scorer: &Scorer, points: &[Tensor], root: &conformal_ood::RngStream) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let g = sample_transform(&scorer.family, &mut root.derive(j as u64).derive(0));
            base_ncm(&scorer.ncm, &scorer.model, x, &g).unwrap().value()
        })
        .collect()
}

#[test]
fn single_transform_pipeline_is_plain_inductive_conformal() {
    let scorer = noisy_scorer();
    let cal = generate(&SyntheticSpec::annulus_id(200, 1)).unwrap();
    let test = generate(&SyntheticSpec::annulus_id(1000, 2)).unwrap();
    let seed = 9;
    let art = calibrate(&cal, &scorer, 1, Aggregation::Sum, seed).unwrap();

    let cal_direct = single_scores(&scorer, &cal, &calibration_root(seed));
    let test_direct = single_scores(&scorer, &test, &test_root(seed, 0));
    let test_pipeline =
        aggregated_scores(&scorer, &test, 1, Aggregation::Sum, &test_root(seed, 0)).unwrap();
    assert_eq!(test_pipeline, test_direct);
    for s in &test_direct {
        assert_eq!(
            p_value(&art, *s).unwrap().value,
            oracle_p_value(&cal_direct, *s)
        );
    }
}

#[test]
fn score_vectors_use_fresh_transforms_per_point() {
    let scorer = noisy_scorer();
    let x = Tensor::vector(vec![1.0, 0.0]).unwrap();
    let root = calibration_root(3);
    let a = score_vector(&scorer, &x, 5, &root.derive(0), 0).unwrap();
    let b = score_vector(&scorer, &x, 5, &root.derive(1), 1).unwrap();
    assert_ne!(a.transforms, b.transforms);
    let a_again = score_vector(&scorer, &x, 5, &root.derive(0), 0).unwrap();
    assert_eq!(a, a_again);
}

#[test]
fn knn_scorer_runs_through_calibration() {
    let train = generate(&SyntheticSpec::annulus_id(300, 7)).unwrap();
    let scorer = Scorer::new(
        NcmConfig::knn(5),
        Model::ExternalScores,
        TransformFamily::rotation_2d(),
    )
    .with_train_features(train);
    let cal = generate(&SyntheticSpec::annulus_id(100, 8)).unwrap();
    let art = calibrate(&cal, &scorer, 3, Aggregation::Sum, 1).unwrap();
    let far = Tensor::vector(vec![4.0, 0.0]).unwrap();
    let v = score_vector(&scorer, &far, 3, &test_root(1, 0), 0).unwrap();
    let s: f64 = v.values().sum();
    assert_eq!(p_value(&art, s).unwrap().value, 1.0 / 101.0);
}
