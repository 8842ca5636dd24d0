//! Base nonconformity measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{evaluate, predict_transform, Model};
use crate::tensor::Tensor;
use crate::transforms::{apply, encode_params, output_transform, TransformInstance};

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// A finite nonconformity score; larger means less conforming.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaseScore(f64);

impl BaseScore {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(BaseScore(value))
        } else {
            Err(Error::NonFiniteScore(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NcmKind {
    /// `L[M(g(x)), g'M(x)]`.
    EquivarianceError,
    /// `L[M(x, g(x)), g]`: the model predicts the applied transform.
    AuxiliaryTask,
    /// Mean distance of `g(x)` to its k nearest proper-training points.
    KnnDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
    KlDivergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NcmConfig {
    pub kind: NcmKind,
    pub loss: LossKind,
    /// Neighbour count; only read by [`NcmKind::KnnDistance`].
    pub k: usize,
}

impl NcmConfig {
    pub fn equivariance(loss: LossKind) -> Self {
        NcmConfig {
            kind: NcmKind::EquivarianceError,
            loss,
            k: 1,
        }
    }

    pub fn auxiliary(loss: LossKind) -> Self {
        NcmConfig {
            kind: NcmKind::AuxiliaryTask,
            loss,
            k: 1,
        }
    }

    pub fn knn(k: usize) -> Self {
        NcmConfig {
            kind: NcmKind::KnnDistance,
            loss: LossKind::SquaredError,
            k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == NcmKind::KnnDistance && self.k == 0 {
            return Err(Error::InvalidConfig("k-NN needs k >= 1".into()));
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::IncompatibleShape(format!(
            "loss operands have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

fn check_distribution(p: &Tensor, strictly_positive: bool) -> Result<()> {
    let sum: f64 = p.data().iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    let bad = if strictly_positive {
        p.data().iter().any(|v| *v <= 0.0)
    } else {
        p.data().iter().any(|v| *v < 0.0)
    };
    if bad {
        return Err(Error::InvalidDistribution("entry out of range".into()));
    }
    Ok(())
}

/// Sum of squared element differences.
pub fn loss_squared_error(a: &Tensor, b: &Tensor) -> Result<BaseScore> {
    same_shape(a, b)?;
    BaseScore::new(
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum(),
    )
}

/// `-ln probs[c]` for the hot index `c`, with probabilities floored at
/// [`PROB_FLOOR`].
pub fn loss_cross_entropy(probs: &Tensor, onehot: &Tensor) -> Result<BaseScore> {
    same_shape(probs, onehot)?;
    check_distribution(probs, false)?;
    let hot: Vec<usize> = onehot
        .data()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect();
    match hot.as_slice() {
        [c] if onehot.data()[*c] == 1.0 => {
            let p = probs.data()[*c].clamp(PROB_FLOOR, 1.0);
            BaseScore::new(-p.ln())
        }
        _ => Err(Error::InvalidDistribution("target is not one-hot".into())),
    }
}

/// `sum_i p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn loss_kl(p: &Tensor, q: &Tensor) -> Result<BaseScore> {
    same_shape(p, q)?;
    check_distribution(p, false)?;
    check_distribution(q, true)?;
    BaseScore::new(
        p.data()
            .iter()
            .zip(q.data())
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(pi, qi)| pi * (pi / qi).ln())
            .sum(),
    )
}

fn loss(kind: LossKind, prediction: &Tensor, target: &Tensor) -> Result<BaseScore> {
    match kind {
        LossKind::SquaredError => loss_squared_error(prediction, target),
        LossKind::CrossEntropy => loss_cross_entropy(prediction, target),
        LossKind::KlDivergence => loss_kl(target, prediction),
    }
}

/// Equivariance-error score of `x` under transform `g`.
///
/// `KnnDistance` is not handled here since it needs the training features;
/// see [`base_ncm_knn`].
pub fn base_ncm(
    cfg: &NcmConfig,
    m: &Model,
    x: &Tensor,
    g: &TransformInstance,
) -> Result<BaseScore> {
    match cfg.kind {
        NcmKind::EquivarianceError => {
            let gx = apply(g, x)?;
            let prediction = evaluate(m, &gx)?;
            let target = output_transform(g, &evaluate(m, x)?);
            loss(cfg.loss, &prediction, &target)
        }
        NcmKind::AuxiliaryTask => {
            let gx = apply(g, x)?;
            let prediction = predict_transform(m, x, &gx)?;
            loss(cfg.loss, &prediction, &encode_params(g))
        }
        NcmKind::KnnDistance => Err(Error::EmptyTrainingSet),
    }
}

/// Mean Euclidean distance from `x` to its `k` nearest training points.
/// Equal distances keep training-set order.
pub fn base_ncm_knn(train_features: &[Tensor], x: &Tensor, k: usize) -> Result<BaseScore> {
    if train_features.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if k == 0 || k > train_features.len() {
        return Err(Error::KTooLarge {
            k,
            available: train_features.len(),
        });
    }
    let mut distances = train_features
        .iter()
        .map(|t| {
            same_shape(t, x)?;
            Ok(t.data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    // Stable sort keeps insertion order among ties.
    distances.sort_by(f64::total_cmp);
    BaseScore::new(distances[..k].iter().sum::<f64>() / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{FamilyId, OutputRule};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    fn t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn squared_error_examples() {
        assert_eq!(
            loss_squared_error(&t(&[1.5, 2.0]), &t(&[1.5, 2.0]))
                .unwrap()
                .value(),
            0.0
        );
        assert_eq!(
            loss_squared_error(&t(&[0.0, 0.0]), &t(&[3.0, 4.0]))
                .unwrap()
                .value(),
            25.0
        );
        assert_eq!(
            loss_squared_error(&t(&[1.0]), &t(&[-1.0])).unwrap().value(),
            4.0
        );
        assert!(matches!(
            loss_squared_error(&t(&[1.0]), &t(&[1.0, 2.0])),
            Err(Error::IncompatibleShape(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let eps = PROB_FLOOR;
        let perfect = t(&[1.0 - 3.0 * eps, eps, eps, eps]);
        let ce = loss_cross_entropy(&perfect, &t(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(ce.value().abs() < 1e-6);
        for hot in 0..4 {
            let mut onehot = [0.0; 4];
            onehot[hot] = 1.0;
            let ce = loss_cross_entropy(&t(&[0.25; 4]), &t(&onehot)).unwrap();
            assert!((ce.value() - 1.386294).abs() < 1e-6);
        }
        let ce = loss_cross_entropy(&t(&[0.5, 0.5]), &t(&[0.0, 1.0])).unwrap();
        assert!((ce.value() - std::f64::consts::LN_2).abs() < 1e-6);
        // Exact zero probability is floored rather than producing infinity.
        let ce = loss_cross_entropy(&t(&[1.0, 0.0]), &t(&[0.0, 1.0])).unwrap();
        assert!((ce.value() + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_bad_inputs() {
        assert!(matches!(
            loss_cross_entropy(&t(&[0.5, 0.6]), &t(&[1.0, 0.0])),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(matches!(
            loss_cross_entropy(&t(&[0.5, 0.5]), &t(&[0.5, 0.5])),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn kl_examples() {
        let p = t(&[0.2, 0.3, 0.5]);
        assert!(loss_kl(&p, &p).unwrap().value().abs() < 1e-15);
        let kl = loss_kl(&t(&[1.0, 0.0]), &t(&[0.5, 0.5])).unwrap().value();
        assert!((kl - LN_2).abs() < 1e-12);
        let kl = loss_kl(&t(&[0.5, 0.5]), &t(&[0.25, 0.75])).unwrap().value();
        assert!((kl - 0.143841).abs() < 1e-6);
        assert!(loss_kl(&t(&[0.5, 0.5]), &t(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn equivariance_examples() {
        let cfg = NcmConfig::equivariance(LossKind::SquaredError);
        let m = Model::annulus_invariant();
        for theta in [0.1, 1.0, 2.5, 4.0] {
            let s = base_ncm(
                &cfg,
                &m,
                &t(&[1.0, 0.0]),
                &TransformInstance::rotation(theta),
            )
            .unwrap();
            assert!(s.value().abs() < 1e-10);
        }
        let s = base_ncm(
            &cfg,
            &m,
            &t(&[3.0, 0.0]),
            &TransformInstance::quarter_turn(1),
        )
        .unwrap();
        assert_eq!(s.value(), 9.0);
    }

    #[test]
    fn auxiliary_outside_annulus() {
        let cfg = NcmConfig::auxiliary(LossKind::SquaredError);
        let g = TransformInstance::rotation(FRAC_PI_2).with_output_rule(OutputRule::ParamsTarget);
        let s = base_ncm(&cfg, &Model::angle_predictor(), &t(&[3.0, 0.0]), &g).unwrap();
        assert!((s.value() - FRAC_PI_2 * FRAC_PI_2).abs() < 1e-12);
        assert!((s.value() - 2.4674).abs() < 1e-4);
    }

    #[test]
    fn auxiliary_cross_entropy_for_rotation_classes() {
        let cfg = NcmConfig::auxiliary(LossKind::CrossEntropy);
        let g = TransformInstance {
            family: FamilyId::RotationRangeClass,
            params: vec![1.0, 95f64.to_radians()],
            output_rule: OutputRule::ParamsTarget,
        };
        let m = Model::rotation_class_softmax();
        let id = base_ncm(&cfg, &m, &t(&[1.0, 0.0]), &g).unwrap().value();
        let ood = base_ncm(&cfg, &m, &t(&[3.0, 0.0]), &g).unwrap().value();
        assert!(id < 0.5, "{id}");
        assert!((ood - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn knn_examples() {
        let train = vec![t(&[0.0]), t(&[10.0])];
        assert_eq!(base_ncm_knn(&train, &t(&[0.0]), 1).unwrap().value(), 0.0);
        assert_eq!(base_ncm_knn(&train, &t(&[1.0]), 1).unwrap().value(), 1.0);
        assert_eq!(base_ncm_knn(&train, &t(&[1.0]), 2).unwrap().value(), 5.0);
        assert!(matches!(
            base_ncm_knn(&[], &t(&[1.0]), 1),
            Err(Error::EmptyTrainingSet)
        ));
        assert!(matches!(
            base_ncm_knn(&train, &t(&[1.0]), 3),
            Err(Error::KTooLarge { k: 3, available: 2 })
        ));
    }

    proptest! {
        #[test]
        fn scores_are_nonnegative_and_deterministic(
            a in -4.0f64..4.0, b in -4.0f64..4.0, theta in 0.0f64..std::f64::consts::TAU, aux in any::<bool>()
        ) {
            let x = t(&[a, b]);
            let (cfg, m, g) = if aux {
                (
                    NcmConfig::auxiliary(LossKind::SquaredError),
                    Model::angle_predictor(),
                    TransformInstance::rotation(theta).with_output_rule(OutputRule::ParamsTarget),
                )
            } else {
                (
                    NcmConfig::equivariance(LossKind::SquaredError),
                    Model::annulus_invariant(),
                    TransformInstance::rotation(theta),
                )
            };
            let s1 = base_ncm(&cfg, &m, &x, &g).unwrap();
            let s2 = base_ncm(&cfg, &m, &x, &g).unwrap();
            prop_assert!(s1.value() >= 0.0);
            prop_assert_eq!(s1.value().to_bits(), s2.value().to_bits());
        }

        #[test]
        fn knn_zero_iff_enough_coincident_points(
            points in proptest::collection::vec(-3i32..3, 1..12), x in -3i32..3, k in 1usize..5
        ) {
            prop_assume!(k <= points.len());
            let train: Vec<Tensor> = points.iter().map(|p| t(&[f64::from(*p)])).collect();
            let score = base_ncm_knn(&train, &t(&[f64::from(x)]), k).unwrap().value();
            let coincident = points.iter().filter(|p| **p == x).count();
            prop_assert_eq!(score == 0.0, coincident >= k);
        }
    }
}
