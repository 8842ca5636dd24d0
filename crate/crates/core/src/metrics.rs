//! Detection quality metrics and the false-detection-rate sweep.
//!
//! In-distribution points are positives. A point is flagged OOD when its
//! p-value falls below the threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{check_epsilon, p_value, CalibrationArtifact};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const DEFAULT_TPR_LEVEL: f64 = 0.90;
pub const DEFAULT_CAL_SIZE: usize = 1000;
pub const DEFAULT_REPLICATES: usize = 5;

/// The threshold grid `0.05 * j` for `j = 1..=10`.
pub fn default_epsilons() -> Vec<f64> {
    (1..=10).map(|j| f64::from(j) / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub auroc: f64,
    pub tnr_at_level: f64,
    pub tpr_level: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

pub fn evaluation_report(id_p: &[f64], ood_p: &[f64], tpr_level: f64) -> Result<EvaluationReport> {
    Ok(EvaluationReport {
        auroc: auroc(id_p, ood_p)?,
        tnr_at_level: tnr_at_tpr(id_p, ood_p, tpr_level)?,
        tpr_level,
        n_id: id_p.len(),
        n_ood: ood_p.len(),
    })
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Probability that an OOD p-value is below an iD one, ties counting half.
pub fn auroc(id_pvalues: &[f64], ood_pvalues: &[f64]) -> Result<f64> {
    if id_pvalues.is_empty() || ood_pvalues.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ood = sorted(ood_pvalues);
    // Twice the credit, so that ties stay integral.
    let doubled: u128 = id_pvalues
        .iter()
        .map(|&p| {
            let below = ood.partition_point(|q| *q < p);
            let tied = ood.partition_point(|q| *q <= p) - below;
            (2 * below + tied) as u128
        })
        .sum();
    Ok(doubled as f64 / (2.0 * id_pvalues.len() as f64 * ood_pvalues.len() as f64))
}

/// TNR at the largest observed threshold `t` that keeps at least `level`
/// of iD p-values at or above `t`.
pub fn tnr_at_tpr(id_pvalues: &[f64], ood_pvalues: &[f64], level: f64) -> Result<f64> {
    if id_pvalues.is_empty() || ood_pvalues.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "TPR level {level} outside (0, 1]"
        )));
    }
    let id = sorted(id_pvalues);
    let tpr = |t: f64| (id.len() - id.partition_point(|p| *p < t)) as f64 / id.len() as f64;
    let mut candidates: Vec<f64> = id_pvalues.iter().chain(ood_pvalues).copied().collect();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    // tpr(min iD value) = 1, so a threshold always exists.
    let threshold = candidates
        .into_iter()
        .find(|&t| tpr(t) >= level)
        .unwrap_or(id[0]);
    let caught = ood_pvalues.iter().filter(|p| **p < threshold).count();
    Ok(caught as f64 / ood_pvalues.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrSweepRow {
    pub epsilon: f64,
    pub replicate_fdrs: Vec<f64>,
    pub mean_fdr: f64,
}

impl FdrSweepRow {
    /// Standard error of the replicate mean (zero for a single replicate).
    pub fn stderr(&self) -> f64 {
        let r = self.replicate_fdrs.len();
        if r < 2 {
            return 0.0;
        }
        let var = self
            .replicate_fdrs
            .iter()
            .map(|f| (f - self.mean_fdr).powi(2))
            .sum::<f64>()
            / (r - 1) as f64;
        (var / r as f64).sqrt()
    }
}

/// Calibration-resampling experiment: each replicate draws `cal_size`
/// calibration scores with replacement from `cal_pool` and records the
/// fraction of held-out iD scores flagged at each threshold.
pub fn fdr_sweep(
    held_out_id_scores: &[f64],
    cal_pool: &[f64],
    cal_size: usize,
    replicates: usize,
    epsilons: &[f64],
    seed: u64,
) -> Result<Vec<FdrSweepRow>> {
    if cal_pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if held_out_id_scores.is_empty() || epsilons.is_empty() {
        return Err(Error::EmptyInput);
    }
    if cal_size == 0 {
        return Err(Error::EmptyCalibration);
    }
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be >= 1".into()));
    }
    for &eps in epsilons {
        check_epsilon(eps)?;
    }
    let root = RngStream::new(seed);
    let per_replicate: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = root.derive(r as u64);
            let sample: Vec<f64> = (0..cal_size)
                .map(|_| cal_pool[rng.next_below(cal_pool.len() as u64) as usize])
                .collect();
            let art = CalibrationArtifact::from_scores(sample, 1, seed, "fdr-sweep")?;
            let pvalues = held_out_id_scores
                .iter()
                .map(|s| p_value(&art, *s).map(|p| p.value))
                .collect::<Result<Vec<f64>>>()?;
            Ok(epsilons
                .iter()
                .map(|eps| {
                    pvalues.iter().filter(|p| **p < *eps).count() as f64 / pvalues.len() as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(epsilons
        .iter()
        .enumerate()
        .map(|(i, &epsilon)| {
            let replicate_fdrs: Vec<f64> = per_replicate.iter().map(|fdrs| fdrs[i]).collect();
            let mean_fdr = replicate_fdrs.iter().sum::<f64>() / replicate_fdrs.len() as f64;
            FdrSweepRow {
                epsilon,
                replicate_fdrs,
                mean_fdr,
            }
        })
        .collect())
}

/// Counts of p-values per grid atom `j / (k + 1)`, `j = 1..=k+1`.
pub fn grid_counts(pvalues: &[f64], k: usize) -> Result<Vec<usize>> {
    let atoms = (k + 1) as f64;
    let mut counts = vec![0usize; k + 1];
    for &p in pvalues {
        let scaled = p * atoms;
        let j = scaled.round();
        if !p.is_finite() || (scaled - j).abs() > 1e-9 || j < 1.0 || j > atoms {
            return Err(Error::OffGridValue { value: p, k });
        }
        counts[j as usize - 1] += 1;
    }
    Ok(counts)
}

/// Pearson chi-square of grid-atom counts against the uniform distribution.
pub fn uniformity_stat(pvalues: &[f64], k: usize) -> Result<f64> {
    if pvalues.is_empty() {
        return Err(Error::EmptyInput);
    }
    let counts = grid_counts(pvalues, k)?;
    Ok(chi_square_uniform(&counts))
}

pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}
