//! Synthetic models whose equivariance holds exactly on an annulus
//! `r_lo <= |x| <= r_hi` (the in-distribution manifold) and breaks outside
//! it, plus a table model that carries externally computed score vectors.

use std::collections::HashMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const DEFAULT_R_LO: f64 = 0.5;
pub const DEFAULT_R_HI: f64 = 1.5;
pub const DEFAULT_BETA: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    AnnulusInvariant,
    AnglePredictor,
    RotationClassSoftmax,
    ExternalScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    /// Outputs `(|x|)` on the annulus and `(x_1)` off it. With
    /// `noise_sd > 0` adds a pseudo-random offset that is a fixed function
    /// of the input bits, so the model stays deterministic.
    AnnulusInvariant {
        r_lo: f64,
        r_hi: f64,
        noise_sd: f64,
        noise_seed: u64,
    },
    /// Recovers the rotation between `x` and `g(x)` on the annulus.
    AnglePredictor { r_lo: f64, r_hi: f64 },
    /// Softmax over quarter-turn classes, sharp on the annulus, flat off it.
    RotationClassSoftmax { r_lo: f64, r_hi: f64, beta: f64 },
    /// Scores come from a [`ScoreTable`]; the model itself cannot be run.
    ExternalScores,
}

impl Model {
    pub fn annulus_invariant() -> Self {
        Model::AnnulusInvariant {
            r_lo: DEFAULT_R_LO,
            r_hi: DEFAULT_R_HI,
            noise_sd: 0.0,
            noise_seed: 0,
        }
    }

    pub fn noisy_annulus_invariant(noise_sd: f64, noise_seed: u64) -> Self {
        Model::AnnulusInvariant {
            r_lo: DEFAULT_R_LO,
            r_hi: DEFAULT_R_HI,
            noise_sd,
            noise_seed,
        }
    }

    pub fn angle_predictor() -> Self {
        Model::AnglePredictor {
            r_lo: DEFAULT_R_LO,
            r_hi: DEFAULT_R_HI,
        }
    }

    pub fn rotation_class_softmax() -> Self {
        Model::RotationClassSoftmax {
            r_lo: DEFAULT_R_LO,
            r_hi: DEFAULT_R_HI,
            beta: DEFAULT_BETA,
        }
    }

    pub fn id(&self) -> ModelId {
        match self {
            Model::AnnulusInvariant { .. } => ModelId::AnnulusInvariant,
            Model::AnglePredictor { .. } => ModelId::AnglePredictor,
            Model::RotationClassSoftmax { .. } => ModelId::RotationClassSoftmax,
            Model::ExternalScores => ModelId::ExternalScores,
        }
    }

    fn name(&self) -> &'static str {
        match self.id() {
            ModelId::AnnulusInvariant => "annulus_invariant",
            ModelId::AnglePredictor => "angle_predictor",
            ModelId::RotationClassSoftmax => "rotation_class_softmax",
            ModelId::ExternalScores => "external_scores",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let annulus = |r_lo: f64, r_hi: f64| {
            if r_lo.is_finite() && r_hi.is_finite() && 0.0 <= r_lo && r_lo <= r_hi {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "annulus [{r_lo}, {r_hi}] is invalid"
                )))
            }
        };
        match *self {
            Model::AnnulusInvariant {
                r_lo,
                r_hi,
                noise_sd,
                ..
            } => {
                annulus(r_lo, r_hi)?;
                if !(noise_sd.is_finite() && noise_sd >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "noise sd {noise_sd} is invalid"
                    )));
                }
                Ok(())
            }
            Model::AnglePredictor { r_lo, r_hi } => annulus(r_lo, r_hi),
            Model::RotationClassSoftmax { r_lo, r_hi, beta } => {
                annulus(r_lo, r_hi)?;
                if !(beta.is_finite() && beta >= 0.0) {
                    return Err(Error::InvalidConfig(format!("beta {beta} is invalid")));
                }
                Ok(())
            }
            Model::ExternalScores => Ok(()),
        }
    }
}

fn pair(x: &Tensor) -> Result<(f64, f64)> {
    x.as_pair().ok_or_else(|| {
        Error::IncompatibleShape(format!(
            "model expects a 2-vector, got shape {:?}",
            x.shape()
        ))
    })
}

fn inside(r: f64, r_lo: f64, r_hi: f64) -> bool {
    r_lo <= r && r <= r_hi
}

fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

fn input_noise(noise_seed: u64, a: f64, b: f64) -> f64 {
    RngStream::with_path(noise_seed, vec![a.to_bits(), b.to_bits()]).next_normal()
}

/// Runs the model on one input.
pub fn evaluate(m: &Model, x: &Tensor) -> Result<Tensor> {
    match *m {
        Model::AnnulusInvariant {
            r_lo,
            r_hi,
            noise_sd,
            noise_seed,
        } => {
            let (a, b) = pair(x)?;
            let r = a.hypot(b);
            let mut out = if inside(r, r_lo, r_hi) { r } else { a };
            if noise_sd > 0.0 {
                out += noise_sd * input_noise(noise_seed, a, b);
            }
            Ok(Tensor::from_parts(vec![1], vec![out]))
        }
        Model::AnglePredictor { r_lo, r_hi } => {
            let (a, b) = pair(x)?;
            let out = if inside(a.hypot(b), r_lo, r_hi) {
                wrap_angle(b.atan2(a))
            } else {
                0.0
            };
            Ok(Tensor::from_parts(vec![1], vec![out]))
        }
        Model::RotationClassSoftmax { .. } => predict_transform(m, x, x),
        Model::ExternalScores => Err(Error::WrongModelKind {
            op: "evaluate",
            model: m.name(),
        }),
    }
}

/// Predicts the transform taking `x` to `gx`.
pub fn predict_transform(m: &Model, x: &Tensor, gx: &Tensor) -> Result<Tensor> {
    match *m {
        Model::AnglePredictor { r_lo, r_hi } => {
            let (a, b) = pair(x)?;
            let (ga, gb) = pair(gx)?;
            let out = if inside(a.hypot(b), r_lo, r_hi) {
                wrap_angle(gb.atan2(ga) - b.atan2(a))
            } else {
                0.0
            };
            Ok(Tensor::from_parts(vec![1], vec![out]))
        }
        Model::RotationClassSoftmax { r_lo, r_hi, beta } => {
            let (a, b) = pair(x)?;
            let (ga, gb) = pair(gx)?;
            let sharpness = if inside(a.hypot(b), r_lo, r_hi) {
                beta
            } else {
                0.0
            };
            let logits: Vec<f64> = (0..4)
                .map(|class| {
                    let (c, s) = match class {
                        0 => (1.0, 0.0),
                        1 => (0.0, 1.0),
                        2 => (-1.0, 0.0),
                        _ => (0.0, -1.0),
                    };
                    let (ra, rb) = (a * c - b * s, a * s + b * c);
                    -sharpness * ((ga - ra).powi(2) + (gb - rb).powi(2))
                })
                .collect();
            Ok(Tensor::from_parts(vec![4], softmax(&logits)))
        }
        _ => Err(Error::WrongModelKind {
            op: "predict_transform",
            model: m.name(),
        }),
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter()
        .map(|e| (e / total).max(f64::MIN_POSITIVE))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Proper training set; feature files only.
    Train,
    Cal,
    TestId,
    TestOod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub id: String,
    pub split: Split,
    pub scores: Vec<f64>,
}

/// Score vectors supplied by an external model, keyed by record id.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    n: usize,
    records: Vec<ExternalRecord>,
    index: HashMap<String, usize>,
}

impl ScoreTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ExternalRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[ExternalRecord] {
        &self.records
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ExternalRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Builds a [`ScoreTable`] from records declared to carry `n` scores each.
///
/// Record positions in errors are 1-based.
pub fn ingest_external(
    n: usize,
    records: impl IntoIterator<Item = ExternalRecord>,
) -> Result<ScoreTable> {
    let mut table = ScoreTable {
        n,
        ..ScoreTable::default()
    };
    for (pos, record) in records.into_iter().enumerate() {
        if record.scores.len() != n {
            return Err(Error::SchemaViolation {
                line: pos + 1,
                reason: format!("expected {n} scores, found {}", record.scores.len()),
            });
        }
        if let Some(bad) = record.scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore(*bad));
        }
        if table.index.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        table.index.insert(record.id.clone(), table.records.len());
        table.records.push(record);
    }
    Ok(table)
}
