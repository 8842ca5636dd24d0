//! Data sources and the computations behind each command.

use conformal_ood::conformal::{aggregate_values, calibration_root, score_vector, test_root};
use conformal_ood::io::{read_feature_file, read_score_file, FeatureFileHeader, FeatureRecord};
use conformal_ood::metrics::{
    chi_square_uniform, evaluation_report, fdr_sweep, grid_counts, EvaluationReport, FdrSweepRow,
};
use conformal_ood::models::ingest_external;
use conformal_ood::ncm::NcmKind;
use conformal_ood::synthetic::{generate, SyntheticKind, SyntheticSpec};
use conformal_ood::{
    aggregate, conformal, p_value, p_value_smoothed, CalibrationArtifact, Error, RngStream, Scorer,
    Split, Tensor,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DataSource, RunConfig};
use crate::CliError;

const SCOPE_TIE_BREAK: u64 = 2;
const SCOPE_DATA: u64 = 3;
const SCOPE_HIST: u64 = 4;
const SCOPE_RESAMPLE: u64 = 5;

/// Test group indices used for stream derivation.
pub const GROUP_TEST_ID: u64 = 0;
pub const GROUP_TEST_OOD: u64 = 1;

#[derive(Debug, Clone)]
pub struct TestPoint {
    pub id: String,
    pub split: Split,
    pub input: TestInput,
}

#[derive(Debug, Clone)]
pub enum TestInput {
    Features(Tensor),
    Scores(Vec<f64>),
}

/// Inputs for one run, resolved from the configured data source.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Tensor>,
    pub cal: Vec<TestInput>,
    pub test: Vec<TestPoint>,
    /// Scores per record when the source supplies them directly.
    pub external_n: Option<usize>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig, seed: u64) -> Result<Self, CliError> {
        match cfg.data.source {
            DataSource::Synthetic => synthetic_dataset(cfg, seed),
            DataSource::Features => {
                let (header, records) = read_feature_file(cfg.data.path()?)?;
                feature_dataset(&header, &records)
            }
            DataSource::Scores => {
                let (header, records) = read_score_file(cfg.data.path()?)?;
                let table = ingest_external(header.n, records)?;
                let mut cal = Vec::new();
                let mut test = Vec::new();
                for r in table.records() {
                    match r.split {
                        Split::Cal => cal.push(TestInput::Scores(r.scores.clone())),
                        split => test.push(TestPoint {
                            id: r.id.clone(),
                            split,
                            input: TestInput::Scores(r.scores.clone()),
                        }),
                    }
                }
                Ok(Dataset {
                    train: Vec::new(),
                    cal,
                    test,
                    external_n: Some(table.n()),
                })
            }
        }
    }

    pub fn test_split(&self, split: Split) -> impl Iterator<Item = &TestPoint> {
        self.test.iter().filter(move |p| p.split == split)
    }
}

/// Seed of the synthetic generator for split tag `tag`.
pub fn data_seed(seed: u64, tag: u64) -> u64 {
    RngStream::new(seed)
        .derive(SCOPE_DATA)
        .derive(tag)
        .next_u64()
}

fn synth(
    kind: SyntheticKind,
    count: usize,
    mean: f64,
    sd: f64,
    seed: u64,
) -> Result<Vec<Tensor>, Error> {
    generate(&SyntheticSpec {
        kind,
        count,
        radius_mean: mean,
        radius_sd: sd,
        seed,
    })
}

fn synthetic_dataset(cfg: &RunConfig, seed: u64) -> Result<Dataset, CliError> {
    let d = &cfg.data;
    let id = |count, tag| {
        synth(
            SyntheticKind::AnnulusId,
            count,
            d.id_radius_mean,
            d.id_radius_sd,
            data_seed(seed, tag),
        )
    };
    let train = if cfg.ncm.kind == NcmKind::KnnDistance {
        id(d.train_count, 0)?
    } else {
        Vec::new()
    };
    let cal = id(d.cal_count, 1)?
        .into_iter()
        .map(TestInput::Features)
        .collect();
    let test_id = id(d.test_id_count, 2)?;
    let test_ood = synth(
        SyntheticKind::RingOod,
        d.test_ood_count,
        d.ood_radius_mean,
        d.ood_radius_sd,
        data_seed(seed, 3),
    )?;
    let mut test = Vec::with_capacity(test_id.len() + test_ood.len());
    for (split, points) in [(Split::TestId, test_id), (Split::TestOod, test_ood)] {
        for (j, x) in points.into_iter().enumerate() {
            test.push(TestPoint {
                id: format!("{}-{j}", split_name(split)),
                split,
                input: TestInput::Features(x),
            });
        }
    }
    Ok(Dataset {
        train,
        cal,
        test,
        external_n: None,
    })
}

fn feature_dataset(
    header: &FeatureFileHeader,
    records: &[FeatureRecord],
) -> Result<Dataset, CliError> {
    let mut data = Dataset {
        train: Vec::new(),
        cal: Vec::new(),
        test: Vec::new(),
        external_n: None,
    };
    for r in records {
        let x = r.tensor(&header.shape)?;
        match r.split {
            Split::Train => data.train.push(x),
            Split::Cal => data.cal.push(TestInput::Features(x)),
            split => data.test.push(TestPoint {
                id: r.id.clone(),
                split,
                input: TestInput::Features(x),
            }),
        }
    }
    Ok(data)
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Cal => "cal",
        Split::TestId => "test_id",
        Split::TestOod => "test_ood",
    }
}

fn group_of(split: Split) -> u64 {
    match split {
        Split::TestOod => GROUP_TEST_OOD,
        _ => GROUP_TEST_ID,
    }
}

/// Scorer for feature-based sources.
pub fn build_scorer(cfg: &RunConfig, train: &[Tensor]) -> Result<Scorer, CliError> {
    let scorer = Scorer::new(cfg.ncm.build()?, cfg.model.build()?, cfg.family.build()?)
        .with_train_features(train.to_vec());
    scorer.validate()?;
    Ok(scorer)
}

#[derive(Serialize)]
struct ExternalFingerprint<'a> {
    source: &'a str,
    aggregation: conformal_ood::Aggregation,
}

/// Fingerprint stored in artifacts and compared by `detect`.
pub fn config_fingerprint(cfg: &RunConfig, data: &Dataset) -> Result<String, CliError> {
    if data.external_n.is_some() {
        return Ok(conformal::fingerprint_of(&ExternalFingerprint {
            source: "external_scores",
            aggregation: cfg.aggregation,
        }));
    }
    Ok(build_scorer(cfg, &data.train)?.fingerprint(cfg.aggregation))
}

/// Transform count actually used: fixed by the file for external scores.
pub fn effective_n(cfg: &RunConfig, data: &Dataset) -> usize {
    data.external_n.unwrap_or(cfg.n)
}

/// Aggregated scores of `inputs`; input `j` uses stream `root.derive(j)`.
fn scores_of<'a>(
    cfg: &RunConfig,
    scorer: Option<&Scorer>,
    inputs: impl IndexedParallelIterator<Item = &'a TestInput>,
    n: usize,
    root: &RngStream,
) -> Result<Vec<f64>, CliError> {
    inputs
        .enumerate()
        .map(|(j, input)| match input {
            TestInput::Scores(s) => aggregate_values(cfg.aggregation, s),
            TestInput::Features(x) => {
                let scorer = scorer.expect("feature inputs come with a scorer");
                let v = score_vector(scorer, x, n, &root.derive(j as u64), j as u64)?;
                aggregate(cfg.aggregation, &v)
            }
        })
        .collect::<Result<Vec<f64>, Error>>()
        .map_err(CliError::from)
}

fn scorer_for(cfg: &RunConfig, data: &Dataset) -> Result<Option<Scorer>, CliError> {
    if data.external_n.is_some() {
        Ok(None)
    } else {
        build_scorer(cfg, &data.train).map(Some)
    }
}

pub fn calibration_scores(
    cfg: &RunConfig,
    data: &Dataset,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, CliError> {
    let scorer = scorer_for(cfg, data)?;
    scores_of(
        cfg,
        scorer.as_ref(),
        data.cal.par_iter(),
        n,
        &calibration_root(seed),
    )
}

/// Aggregated scores of the test points of `split`, in file order.
pub fn test_scores(
    cfg: &RunConfig,
    data: &Dataset,
    split: Split,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, CliError> {
    let scorer = scorer_for(cfg, data)?;
    let inputs: Vec<&TestInput> = data.test_split(split).map(|p| &p.input).collect();
    scores_of(
        cfg,
        scorer.as_ref(),
        inputs.into_par_iter(),
        n,
        &test_root(seed, group_of(split)),
    )
}

/// Strict or smoothed p-value of test point `index` in `group`.
pub fn p_value_for(
    art: &CalibrationArtifact,
    score: f64,
    smoothed: bool,
    seed: u64,
    group: u64,
    index: u64,
) -> Result<f64, Error> {
    if smoothed {
        let u = RngStream::new(seed)
            .derive(SCOPE_TIE_BREAK)
            .derive(group)
            .derive(index)
            .next_f64();
        p_value_smoothed(art, score, u).map(|p| p.value)
    } else {
        p_value(art, score).map(|p| p.value)
    }
}

fn p_values(
    art: &CalibrationArtifact,
    scores: &[f64],
    smoothed: bool,
    seed: u64,
    group: u64,
) -> Result<Vec<f64>, CliError> {
    scores
        .iter()
        .enumerate()
        .map(|(j, &s)| p_value_for(art, s, smoothed, seed, group, j as u64))
        .collect::<Result<_, _>>()
        .map_err(CliError::from)
}

pub fn run_calibrate(cfg: &RunConfig) -> Result<CalibrationArtifact, CliError> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let data = Dataset::load(cfg, seed)?;
    if data.cal.is_empty() {
        return Err(Error::EmptyCalibration.into());
    }
    let n = effective_n(cfg, &data);
    let scores = calibration_scores(cfg, &data, n, seed)?;
    let fingerprint = config_fingerprint(cfg, &data)?;
    Ok(CalibrationArtifact::from_scores(
        scores,
        n,
        seed,
        &fingerprint,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectRow {
    pub id: String,
    pub split: Split,
    pub score: f64,
    pub p_value: f64,
    /// One decision per configured epsilon, in config order.
    pub is_ood: Vec<bool>,
}

/// Scores every test point against `art`. Test streams are keyed by the
/// artifact seed, so a run reproduces regardless of the config seed.
pub fn run_detect(
    cfg: &RunConfig,
    art: &CalibrationArtifact,
    allow_fingerprint_mismatch: bool,
) -> Result<Vec<DetectRow>, CliError> {
    cfg.validate()?;
    let seed = art.seed();
    let data = Dataset::load(cfg, seed)?;
    let fingerprint = config_fingerprint(cfg, &data)?;
    if fingerprint != art.fingerprint() {
        if !allow_fingerprint_mismatch {
            return Err(Error::FingerprintMismatch {
                artifact: art.fingerprint().to_string(),
                config: fingerprint,
            }
            .into());
        }
        eprintln!(
            "warning: artifact fingerprint {} differs from config fingerprint {fingerprint}",
            art.fingerprint()
        );
    }
    let n = effective_n(cfg, &data);
    if n != art.n() {
        return Err(CliError::Config(format!(
            "artifact was calibrated with n = {}, config uses n = {n}",
            art.n()
        )));
    }
    let mut rows = Vec::with_capacity(data.test.len());
    for split in [Split::TestId, Split::TestOod] {
        let scores = test_scores(cfg, &data, split, n, seed)?;
        let pvalues = p_values(art, &scores, cfg.smoothed, seed, group_of(split))?;
        for ((point, score), p) in data.test_split(split).zip(scores).zip(pvalues) {
            rows.push(DetectRow {
                id: point.id.clone(),
                split,
                score,
                p_value: p,
                is_ood: cfg.epsilons.iter().map(|&eps| p < eps).collect(),
            });
        }
    }
    Ok(rows)
}

/// AUROC and TNR per transform count. External-score sources have a single,
/// file-determined count.
pub fn run_evaluate(cfg: &RunConfig) -> Result<Vec<(usize, EvaluationReport)>, CliError> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let data = Dataset::load(cfg, seed)?;
    if data.cal.is_empty() {
        return Err(Error::EmptyCalibration.into());
    }
    let fingerprint = config_fingerprint(cfg, &data)?;
    let counts = match data.external_n {
        Some(n) => vec![n],
        None => cfg.n_sweep.clone(),
    };
    counts
        .into_iter()
        .map(|n| {
            let cal = calibration_scores(cfg, &data, n, seed)?;
            let art = CalibrationArtifact::from_scores(cal, n, seed, &fingerprint)?;
            let id_scores = test_scores(cfg, &data, Split::TestId, n, seed)?;
            let ood_scores = test_scores(cfg, &data, Split::TestOod, n, seed)?;
            let id_p = p_values(&art, &id_scores, cfg.smoothed, seed, GROUP_TEST_ID)?;
            let ood_p = p_values(&art, &ood_scores, cfg.smoothed, seed, GROUP_TEST_OOD)?;
            Ok((n, evaluation_report(&id_p, &ood_p, cfg.tpr_level)?))
        })
        .collect()
}

/// Calibration-resampling FDR experiment: the calibration split is the pool,
/// the `test_id` split is the held-out set.
pub fn run_fdr_sweep(cfg: &RunConfig) -> Result<Vec<FdrSweepRow>, CliError> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let data = Dataset::load(cfg, seed)?;
    let n = effective_n(cfg, &data);
    let pool = calibration_scores(cfg, &data, n, seed)?;
    let held_out = test_scores(cfg, &data, Split::TestId, n, seed)?;
    Ok(fdr_sweep(
        &held_out,
        &pool,
        cfg.sweep.cal_size,
        cfg.sweep.replicates,
        &cfg.epsilons,
        RngStream::new(seed).derive(SCOPE_RESAMPLE).next_u64(),
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistReport {
    pub k: usize,
    pub trials: usize,
    /// Count per atom `j / (k + 1)`, `j = 1..=k+1`.
    pub counts: Vec<usize>,
    pub chi_square: f64,
}

impl HistReport {
    pub fn dof(&self) -> usize {
        self.k
    }
}

/// Strict p-values from independent trials, each with a fresh calibration
/// set of `hist.k` iD points and one fresh iD test point.
pub fn run_pvalue_hist(cfg: &RunConfig) -> Result<HistReport, CliError> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    if cfg.data.source != DataSource::Synthetic {
        return Err(CliError::Config(
            "pvalue-hist draws fresh trials and needs the synthetic data source".into(),
        ));
    }
    let k = cfg.hist.k;
    if k == 0 || cfg.hist.trials == 0 {
        return Err(CliError::Config(
            "hist.k and hist.trials must be positive".into(),
        ));
    }
    let scorer = build_scorer(cfg, &[])?;
    if cfg.ncm.kind == NcmKind::KnnDistance {
        return Err(CliError::Config(
            "pvalue-hist does not support the knn score".into(),
        ));
    }
    let fingerprint = scorer.fingerprint(cfg.aggregation);
    let root = RngStream::new(seed).derive(SCOPE_HIST);
    let pvalues = (0..cfg.hist.trials as u64)
        .into_par_iter()
        .map(|t| {
            let trial = root.derive(t);
            let points = synth(
                SyntheticKind::AnnulusId,
                k + 1,
                cfg.data.id_radius_mean,
                cfg.data.id_radius_sd,
                trial.derive(0).next_u64(),
            )?;
            let streams = trial.derive(1);
            let mut scores = points
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    let v = score_vector(&scorer, x, cfg.n, &streams.derive(j as u64), j as u64)?;
                    aggregate(cfg.aggregation, &v)
                })
                .collect::<Result<Vec<f64>, Error>>()?;
            let test = scores.pop().expect("k + 1 points");
            let art = CalibrationArtifact::from_scores(scores, cfg.n, seed, &fingerprint)?;
            p_value(&art, test).map(|p| p.value)
        })
        .collect::<Result<Vec<f64>, Error>>()?;
    let counts = grid_counts(&pvalues, k)?;
    let chi_square = chi_square_uniform(&counts);
    Ok(HistReport {
        k,
        trials: cfg.hist.trials,
        counts,
        chi_square,
    })
}
