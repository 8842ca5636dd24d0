use conformal_ood::metrics::auroc;
use conformal_ood::transforms::apply;
use conformal_ood::{p_value, CalibrationArtifact, RngStream, Tensor, TransformInstance};
use conformal_ood_oracles::{oracle_auroc, oracle_p_value, oracle_quarter_turn};
use proptest::prelude::*;

/// Scores drawn from a small integer lattice so ties are common.
fn lattice(rng: &mut RngStream, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.next_below(20) as f64 * 0.25).collect()
}

#[test]
fn binary_search_p_value_matches_linear_scan() {
    let mut rng = RngStream::new(2718);
    for case in 0..100_000 {
        let k = 1 + rng.next_below(40) as usize;
        let scores = if case % 2 == 0 {
            lattice(&mut rng, k)
        } else {
            (0..k).map(|_| rng.uniform(-3.0, 3.0)).collect()
        };
        let test = if case % 3 == 0 {
            scores[rng.next_below(k as u64) as usize]
        } else {
            rng.uniform(-3.5, 3.5)
        };
        let art = CalibrationArtifact::from_scores(scores.clone(), 1, 0, "x").unwrap();
        assert_eq!(
            p_value(&art, test).unwrap().value,
            oracle_p_value(&scores, test)
        );
    }
}

#[test]
fn rank_sum_auroc_matches_all_pairs() {
    let mut rng = RngStream::new(314);
    for case in 0..1000 {
        let (n_id, n_ood) = (
            1 + rng.next_below(60) as usize,
            1 + rng.next_below(60) as usize,
        );
        let (id, ood) = if case % 2 == 0 {
            (lattice(&mut rng, n_id), lattice(&mut rng, n_ood))
        } else {
            (
                (0..n_id).map(|_| rng.next_f64()).collect(),
                (0..n_ood).map(|_| rng.next_f64()).collect::<Vec<_>>(),
            )
        };
        let fast = auroc(&id, &ood).unwrap();
        let slow = oracle_auroc(&id, &ood).unwrap();
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }
}

proptest! {
    #[test]
    fn quarter_turn_matches_index_map(n in 1usize..8, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let data: Vec<f64> = (0..n * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = Tensor::new(vec![n, n], data.clone()).unwrap();
        let out = apply(&TransformInstance::quarter_turn(1), &x).unwrap();
        let expected = oracle_quarter_turn(&data, n);
        prop_assert_eq!(out.data(), expected.as_slice());
    }
}
