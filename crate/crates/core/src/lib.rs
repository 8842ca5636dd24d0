//! Conformal out-of-distribution detection from equivariance errors.
//!
//! A model that is equivariant to a family of input transforms on its
//! training distribution should keep that property on new in-distribution
//! inputs and tend to lose it elsewhere. For each input we sample `n`
//! transforms, measure the equivariance error of each, sum the errors,
//! and compare the sum against a calibration set to obtain a conformal
//! p-value. Flagging `p < epsilon` bounds the false detection rate by
//! `epsilon` whenever test and calibration inputs are exchangeable.

pub mod conformal;
pub mod error;
pub mod io;
pub mod metrics;
pub mod models;
pub mod ncm;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod transforms;

pub use conformal::{
    aggregate, cad_p_value, calibrate, detect, p_value, p_value_smoothed, score_vector,
    Aggregation, CalibrationArtifact, DetectionResult, PValue, ScoreVector, Scorer,
};
pub use error::{Error, Result};
pub use models::{Model, ScoreTable, Split};
pub use ncm::{BaseScore, LossKind, NcmConfig, NcmKind};
pub use rng::RngStream;
pub use tensor::{DatasetSplit, Tensor};
pub use transforms::{OutputRule, TransformFamily, TransformInstance};
