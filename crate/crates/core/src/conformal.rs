//! Score vectors, aggregation, and conformal p-values.
//!
//! A calibration artifact holds the sorted aggregated scores of the
//! calibration set. A test point's p-value is the fraction of calibration
//! scores at least as large as its own, counting the test point itself:
//! `(|{j : s_j >= s}| + 1) / (k + 1)`. When test and calibration scores are
//! exchangeable this is uniform on `{1/(k+1), ..., 1}`, so flagging
//! `p < epsilon` has false-detection probability at most `epsilon`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::ncm::{base_ncm, base_ncm_knn, BaseScore, NcmConfig, NcmKind};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::transforms::{apply, sample_transform, TransformFamily, TransformInstance};

/// Current calibration artifact format.
pub const FORMAT_VERSION: u32 = 1;

/// Substream of the root seed used for calibration points.
pub const SCOPE_CALIBRATION: u64 = 0;
/// Substream of the root seed used for test points.
pub const SCOPE_TEST: u64 = 1;

/// Base scores of one point under `n` independently sampled transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub point_id: u64,
    pub scores: Vec<BaseScore>,
    pub transforms: Vec<TransformInstance>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().map(|s| s.value())
    }
}

/// Coordinate-wise increasing map from a score vector to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
}

pub fn aggregate(kind: Aggregation, v: &ScoreVector) -> Result<f64> {
    aggregate_values(kind, &v.values().collect::<Vec<_>>())
}

pub fn aggregate_values(kind: Aggregation, scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyVector);
    }
    match kind {
        Aggregation::Sum => Ok(scores.iter().sum()),
    }
}

/// Everything needed to turn an input into base scores.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub ncm: NcmConfig,
    pub model: Model,
    pub family: TransformFamily,
    /// Proper-training features, read only by the k-NN measure.
    pub train_features: Vec<Tensor>,
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    family: &'a TransformFamily,
    model: &'a Model,
    ncm: &'a NcmConfig,
    aggregation: Aggregation,
}

impl Scorer {
    pub fn new(ncm: NcmConfig, model: Model, family: TransformFamily) -> Self {
        Scorer {
            ncm,
            model,
            family,
            train_features: Vec::new(),
        }
    }

    pub fn with_train_features(mut self, train: Vec<Tensor>) -> Self {
        self.train_features = train;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.ncm.validate()?;
        self.model.validate()?;
        self.family.validate()
    }

    pub fn base_score(&self, x: &Tensor, g: &TransformInstance) -> Result<BaseScore> {
        match self.ncm.kind {
            NcmKind::KnnDistance => base_ncm_knn(&self.train_features, &apply(g, x)?, self.ncm.k),
            _ => base_ncm(&self.ncm, &self.model, x, g),
        }
    }

    /// Configuration fingerprint binding an artifact to the scorer that made it.
    pub fn fingerprint(&self, aggregation: Aggregation) -> String {
        fingerprint_of(&FingerprintInput {
            family: &self.family,
            model: &self.model,
            ncm: &self.ncm,
            aggregation,
        })
    }
}

/// First 16 hex digits of the SHA-256 of the value's canonical JSON.
pub fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("fingerprint input serializes");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Scores `x` under `n` transforms, transform `i` drawn from `rng.derive(i)`.
pub fn score_vector(
    scorer: &Scorer,
    x: &Tensor,
    n: usize,
    rng: &RngStream,
    point_id: u64,
) -> Result<ScoreVector> {
    if n == 0 {
        return Err(Error::InvalidN(n));
    }
    let mut scores = Vec::with_capacity(n);
    let mut transforms = Vec::with_capacity(n);
    for i in 0..n {
        let g = sample_transform(&scorer.family, &mut rng.derive(i as u64));
        scores.push(scorer.base_score(x, &g)?);
        transforms.push(g);
    }
    Ok(ScoreVector {
        point_id,
        scores,
        transforms,
    })
}

/// Aggregated scores of `points`, point `j` using stream `root.derive(j)`.
/// Runs in parallel; the result does not depend on scheduling.
pub fn aggregated_scores(
    scorer: &Scorer,
    points: &[Tensor],
    n: usize,
    aggregation: Aggregation,
    root: &RngStream,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidN(n));
    }
    points
        .par_iter()
        .enumerate()
        .map(|(j, x)| {
            let v = score_vector(scorer, x, n, &root.derive(j as u64), j as u64)?;
            aggregate(aggregation, &v)
        })
        .collect()
}

/// Stream root for calibration points under `seed`.
pub fn calibration_root(seed: u64) -> RngStream {
    RngStream::new(seed).derive(SCOPE_CALIBRATION)
}

/// Stream root for the test points of group `group` under `seed`.
pub fn test_root(seed: u64, group: u64) -> RngStream {
    RngStream::new(seed).derive(SCOPE_TEST).derive(group)
}

/// Sorted calibration scores plus the settings they were produced under.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationArtifact {
    format_version: u32,
    n: usize,
    seed: u64,
    config_fingerprint: String,
    sorted_scores: Vec<f64>,
}

impl CalibrationArtifact {
    /// Builds an artifact from unsorted aggregated scores.
    pub fn from_scores(
        mut scores: Vec<f64>,
        n: usize,
        seed: u64,
        config_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        if n == 0 {
            return Err(Error::InvalidN(n));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore(*bad));
        }
        scores.sort_by(f64::total_cmp);
        Ok(CalibrationArtifact {
            format_version: FORMAT_VERSION,
            n,
            seed,
            config_fingerprint: config_fingerprint.into(),
            sorted_scores: scores,
        })
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> &str {
        &self.config_fingerprint
    }

    pub fn sorted_scores(&self) -> &[f64] {
        &self.sorted_scores
    }

    /// Calibration set size.
    pub fn k(&self) -> usize {
        self.sorted_scores.len()
    }

    fn count_at_least(&self, score: f64) -> usize {
        self.k() - self.sorted_scores.partition_point(|s| *s < score)
    }

    fn count_greater(&self, score: f64) -> usize {
        self.k() - self.sorted_scores.partition_point(|s| *s <= score)
    }
}

/// Scores each calibration point and freezes the sorted aggregates.
pub fn calibrate(
    points: &[Tensor],
    scorer: &Scorer,
    n: usize,
    aggregation: Aggregation,
    seed: u64,
) -> Result<CalibrationArtifact> {
    if points.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let scores = aggregated_scores(scorer, points, n, aggregation, &calibration_root(seed))?;
    CalibrationArtifact::from_scores(scores, n, seed, scorer.fingerprint(aggregation))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub value: f64,
    pub smoothed: bool,
}

pub fn p_value(art: &CalibrationArtifact, test_score: f64) -> Result<PValue> {
    if !test_score.is_finite() {
        return Err(Error::NonFiniteScore(test_score));
    }
    let count = art.count_at_least(test_score);
    Ok(PValue {
        value: (count + 1) as f64 / (art.k() + 1) as f64,
        smoothed: false,
    })
}

/// Tie-randomized p-value `(|{s_j > s}| + u (|{s_j = s}| + 1)) / (k + 1)`
/// for `u` in `[0, 1)`. An exact zero is reported as `f64::MIN_POSITIVE`.
pub fn p_value_smoothed(art: &CalibrationArtifact, test_score: f64, u: f64) -> Result<PValue> {
    if !test_score.is_finite() {
        return Err(Error::NonFiniteScore(test_score));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidConfig(format!(
            "tie-break variate {u} outside [0, 1)"
        )));
    }
    let greater = art.count_greater(test_score);
    let equal = art.count_at_least(test_score) - greater;
    let value = (greater as f64 + u * (equal + 1) as f64) / (art.k() + 1) as f64;
    Ok(PValue {
        value: value.max(f64::MIN_POSITIVE),
        smoothed: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub p: PValue,
    pub epsilon: f64,
    pub is_ood: bool,
}

pub fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(epsilon))
    }
}

/// Flags OOD iff `p < epsilon`.
pub fn decide(p: PValue, epsilon: f64) -> Result<DetectionResult> {
    check_epsilon(epsilon)?;
    Ok(DetectionResult {
        p,
        epsilon,
        is_ood: p.value < epsilon,
    })
}

pub fn detect(art: &CalibrationArtifact, test_score: f64, epsilon: f64) -> Result<DetectionResult> {
    check_epsilon(epsilon)?;
    decide(p_value(art, test_score)?, epsilon)
}

/// Full conformal p-value: the last entry is the test score, the rest are
/// scores computed with the test point included in the bag.
pub fn cad_p_value(all_scores: &[f64]) -> Result<PValue> {
    let Some((&test, rest)) = all_scores.split_last().filter(|_| all_scores.len() >= 2) else {
        return Err(Error::TooFewScores(all_scores.len()));
    };
    if let Some(bad) = all_scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(*bad));
    }
    let count = rest.iter().filter(|s| **s >= test).count();
    Ok(PValue {
        value: (count + 1) as f64 / all_scores.len() as f64,
        smoothed: false,
    })
}
