use conformal_ood::conformal::{aggregated_scores, test_root};
use conformal_ood::metrics::auroc;
use conformal_ood::ncm::base_ncm;
use conformal_ood::synthetic::{generate, SyntheticSpec};
use conformal_ood::transforms::sample_transform;
use conformal_ood::{
    calibrate, p_value, Aggregation, LossKind, Model, NcmConfig, RngStream, Scorer, Tensor,
    TransformFamily,
};
use conformal_ood_oracles::rotation_first_coordinate_exceedance;

#[test]
fn outside_annulus_exceedance_matches_quadrature() {
    let cfg = NcmConfig::equivariance(LossKind::SquaredError);
    let model = Model::annulus_invariant();
    let family = TransformFamily::rotation_2d();
    let mut rng = RngStream::new(55);
    for radius in [2.5, 3.0] {
        let draws = 100_000;
        let mut hits = 0;
        for _ in 0..draws {
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            let x = Tensor::vector(vec![radius * phase.cos(), radius * phase.sin()]).unwrap();
            let g = sample_transform(&family, &mut rng);
            if base_ncm(&cfg, &model, &x, &g).unwrap().value() >= 1.0 {
                hits += 1;
            }
        }
        let mc = hits as f64 / draws as f64;
        let quad = rotation_first_coordinate_exceedance(radius, 1.0, 2000);
        assert!(
            (mc - quad).abs() < 0.006,
            "r = {radius}: MC {mc} vs quadrature {quad}"
        );
        // Frozen quadrature values.
        let frozen = if radius == 2.5 { 0.6755 } else { 0.7174 };
        assert!((quad - frozen).abs() < 5e-4, "{quad}");
    }
}

fn pvalues(
    scorer: &Scorer,
    art: &conformal_ood::CalibrationArtifact,
    points: &[Tensor],
    n: usize,
    seed: u64,
    group: u64,
) -> Vec<f64> {
    aggregated_scores(scorer, points, n, Aggregation::Sum, &test_root(seed, group))
        .unwrap()
        .into_iter()
        .map(|s| p_value(art, s).unwrap().value)
        .collect()
}

#[test]
fn annulus_vs_ring_separates() {
    let scorer = Scorer::new(
        NcmConfig::equivariance(LossKind::SquaredError),
        Model::annulus_invariant(),
        TransformFamily::rotation_2d(),
    );
    let seed = 21;
    let cal = generate(&SyntheticSpec::annulus_id(1000, 1)).unwrap();
    let test_id = generate(&SyntheticSpec::annulus_id(1000, 2)).unwrap();
    let test_ood = generate(&SyntheticSpec::ring_ood(1000, 3.0, 3)).unwrap();
    let art = calibrate(&cal, &scorer, 5, Aggregation::Sum, seed).unwrap();
    let id_p = pvalues(&scorer, &art, &test_id, 5, seed, 0);
    let ood_p = pvalues(&scorer, &art, &test_ood, 5, seed, 1);
    let a = auroc(&id_p, &ood_p).unwrap();
    assert!(a >= 0.99, "AUROC {a}");
}
