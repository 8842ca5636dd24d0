//! Run configuration file (TOML). Angles are in degrees here and converted
//! to radians when building library types.

use std::path::{Path, PathBuf};

use conformal_ood::metrics::{
    default_epsilons, DEFAULT_CAL_SIZE, DEFAULT_REPLICATES, DEFAULT_TPR_LEVEL,
};
use conformal_ood::models::{Model, ModelId};
use conformal_ood::ncm::{LossKind, NcmConfig, NcmKind};
use conformal_ood::transforms::{FamilyId, OutputRule, TransformFamily};
use conformal_ood::{Aggregation, Error};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Transforms sampled per point.
    pub n: usize,
    pub aggregation: Aggregation,
    pub epsilons: Vec<f64>,
    pub smoothed: bool,
    pub tpr_level: f64,
    /// Values of `n` compared by `evaluate`.
    pub n_sweep: Vec<usize>,
    pub family: FamilyConfig,
    pub model: ModelConfig,
    pub ncm: NcmBlock,
    pub data: DataConfig,
    pub sweep: SweepConfig,
    pub hist: HistConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            n: 5,
            aggregation: Aggregation::Sum,
            epsilons: default_epsilons(),
            smoothed: false,
            tpr_level: DEFAULT_TPR_LEVEL,
            n_sweep: vec![1, 5, 20],
            family: FamilyConfig::default(),
            model: ModelConfig::default(),
            ncm: NcmBlock::default(),
            data: DataConfig::default(),
            sweep: SweepConfig::default(),
            hist: HistConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub kind: FamilyId,
    pub min_deg: f64,
    pub max_deg: f64,
    pub half_width_deg: u32,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_corner_shift: f64,
    pub freq_bins: usize,
    pub time_bins: usize,
    pub max_mask_fraction: f64,
    /// Defaults to `params_target` for rotation classes and projective
    /// transforms, `identity_output` otherwise.
    pub output_rule: Option<OutputRule>,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            kind: FamilyId::Rotation2D,
            min_deg: 0.0,
            max_deg: 360.0,
            half_width_deg: 10,
            scale_min: 0.8,
            scale_max: 1.2,
            max_corner_shift: 0.125,
            freq_bins: 64,
            time_bins: 64,
            max_mask_fraction: 0.2,
            output_rule: None,
        }
    }
}

impl FamilyConfig {
    pub fn build(&self) -> Result<TransformFamily, Error> {
        let rule = |default| self.output_rule.unwrap_or(default);
        let family = match self.kind {
            FamilyId::Identity => TransformFamily::Identity,
            FamilyId::Rotation2D => TransformFamily::Rotation2D {
                min_angle: self.min_deg.to_radians(),
                max_angle: self.max_deg.to_radians(),
                output_rule: rule(OutputRule::IdentityOutput),
            },
            FamilyId::RotationGrid90 => TransformFamily::RotationGrid90 {
                output_rule: rule(OutputRule::IdentityOutput),
            },
            FamilyId::RotationRangeClass => TransformFamily::RotationRangeClass {
                half_width_deg: self.half_width_deg,
                output_rule: rule(OutputRule::ParamsTarget),
            },
            FamilyId::Projective => TransformFamily::Projective {
                scale_min: self.scale_min,
                scale_max: self.scale_max,
                max_corner_shift: self.max_corner_shift,
                output_rule: rule(OutputRule::ParamsTarget),
            },
            FamilyId::TimeFreqMask => TransformFamily::TimeFreqMask {
                freq_bins: self.freq_bins,
                time_bins: self.time_bins,
                max_fraction: self.max_mask_fraction,
            },
        };
        family.validate()?;
        Ok(family)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelId,
    pub r_lo: f64,
    pub r_hi: f64,
    /// Output noise of the annulus model.
    pub noise_sd: f64,
    pub noise_seed: u64,
    pub beta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelId::AnnulusInvariant,
            r_lo: conformal_ood::models::DEFAULT_R_LO,
            r_hi: conformal_ood::models::DEFAULT_R_HI,
            noise_sd: 0.0,
            noise_seed: 0,
            beta: conformal_ood::models::DEFAULT_BETA,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model, Error> {
        let model = match self.kind {
            ModelId::AnnulusInvariant => Model::AnnulusInvariant {
                r_lo: self.r_lo,
                r_hi: self.r_hi,
                noise_sd: self.noise_sd,
                noise_seed: self.noise_seed,
            },
            ModelId::AnglePredictor => Model::AnglePredictor {
                r_lo: self.r_lo,
                r_hi: self.r_hi,
            },
            ModelId::RotationClassSoftmax => Model::RotationClassSoftmax {
                r_lo: self.r_lo,
                r_hi: self.r_hi,
                beta: self.beta,
            },
            ModelId::ExternalScores => Model::ExternalScores,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcmBlock {
    pub kind: NcmKind,
    pub loss: LossKind,
    pub k: usize,
}

impl Default for NcmBlock {
    fn default() -> Self {
        NcmBlock {
            kind: NcmKind::EquivarianceError,
            loss: LossKind::SquaredError,
            k: 5,
        }
    }
}

impl NcmBlock {
    pub fn build(&self) -> Result<NcmConfig, Error> {
        let cfg = NcmConfig {
            kind: self.kind,
            loss: self.loss,
            k: self.k,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Annulus / ring points generated from the run seed.
    Synthetic,
    /// A feature file with `train`, `cal`, `test_id`, `test_ood` records.
    Features,
    /// A score file of externally computed score vectors.
    Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub train_count: usize,
    pub cal_count: usize,
    pub test_id_count: usize,
    pub test_ood_count: usize,
    pub id_radius_mean: f64,
    pub id_radius_sd: f64,
    pub ood_radius_mean: f64,
    pub ood_radius_sd: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            path: None,
            train_count: 1000,
            cal_count: 1000,
            test_id_count: 1000,
            test_ood_count: 1000,
            id_radius_mean: 1.0,
            id_radius_sd: 0.1,
            ood_radius_mean: 3.0,
            ood_radius_sd: 0.1,
        }
    }
}

impl DataConfig {
    pub fn path(&self) -> Result<&Path, CliError> {
        self.path.as_deref().ok_or_else(|| {
            CliError::Config(format!("data source {:?} needs `data.path`", self.source))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub cal_size: usize,
    pub replicates: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            cal_size: DEFAULT_CAL_SIZE,
            replicates: DEFAULT_REPLICATES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistConfig {
    /// Calibration set size per trial.
    pub k: usize,
    pub trials: usize,
}

impl Default for HistConfig {
    fn default() -> Self {
        HistConfig {
            k: 99,
            trials: 5000,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub epsilons: Vec<f64>,
    pub smoothed: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                RunConfig::parse(&text)
            }
        }
    }

    pub fn apply(mut self, overrides: &Overrides) -> Self {
        if overrides.seed.is_some() {
            self.seed = overrides.seed;
        }
        if let Some(n) = overrides.n {
            self.n = n;
        }
        if !overrides.epsilons.is_empty() {
            self.epsilons = overrides.epsilons.clone();
        }
        if overrides.smoothed {
            self.smoothed = true;
        }
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 || self.n_sweep.contains(&0) {
            return Err(Error::InvalidN(0).into());
        }
        if self.epsilons.is_empty() {
            return Err(CliError::Config("at least one epsilon is required".into()));
        }
        for &eps in &self.epsilons {
            conformal_ood::conformal::check_epsilon(eps)?;
        }
        if !(self.tpr_level > 0.0 && self.tpr_level <= 1.0) {
            return Err(CliError::Config(format!(
                "tpr_level {} outside (0, 1]",
                self.tpr_level
            )));
        }
        self.family.build()?;
        self.model.build()?;
        self.ncm.build()?;
        Ok(())
    }

    /// The run seed; randomized commands refuse to run without one.
    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| {
            CliError::Config("a seed is required (--seed or `seed` in config)".into())
        })
    }
}
