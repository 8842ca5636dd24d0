//! Annulus-geometry data: in-distribution points near the unit circle and
//! OOD points on a wider ring.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    AnnulusId,
    RingOod,
}

impl SyntheticKind {
    fn stream_tag(self) -> u64 {
        match self {
            SyntheticKind::AnnulusId => 0,
            SyntheticKind::RingOod => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub count: usize,
    pub radius_mean: f64,
    pub radius_sd: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn annulus_id(count: usize, seed: u64) -> Self {
        SyntheticSpec {
            kind: SyntheticKind::AnnulusId,
            count,
            radius_mean: 1.0,
            radius_sd: 0.1,
            seed,
        }
    }

    pub fn ring_ood(count: usize, radius_mean: f64, seed: u64) -> Self {
        SyntheticSpec {
            kind: SyntheticKind::RingOod,
            count,
            radius_mean,
            radius_sd: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_mean.is_finite() && self.radius_sd.is_finite() && self.radius_sd >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "radius distribution N({}, {}^2) is invalid",
                self.radius_mean, self.radius_sd
            )));
        }
        Ok(())
    }
}

/// `count` points `r (cos t, sin t)` with `t ~ U[0, 2pi)` and
/// `r ~ N(radius_mean, radius_sd^2)`.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Tensor>> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed).derive(spec.kind.stream_tag());
    Ok((0..spec.count)
        .map(|_| {
            let theta = rng.uniform(0.0, TAU);
            let r = spec.radius_mean + spec.radius_sd * rng.next_normal();
            Tensor::from_parts(vec![2], vec![r * theta.cos(), r * theta.sin()])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annulus_points_stay_inside() {
        let points = generate(&SyntheticSpec::annulus_id(10_000, 5)).unwrap();
        assert_eq!(points.len(), 10_000);
        let inside = points
            .iter()
            .filter(|p| (0.5..=1.5).contains(&p.l2_norm()))
            .count();
        assert!(inside >= 9_999);
    }

    #[test]
    fn ring_norms_near_three() {
        let points = generate(&SyntheticSpec::ring_ood(2000, 3.0, 5)).unwrap();
        let mean = points.iter().map(Tensor::l2_norm).sum::<f64>() / 2000.0;
        assert!((mean - 3.0).abs() < 0.01, "{mean}");
        assert!(points.iter().all(|p| (p.l2_norm() - 3.0).abs() < 0.6));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec::annulus_id(3, 99);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        assert_ne!(
            generate(&spec).unwrap(),
            generate(&SyntheticSpec { seed: 100, ..spec }).unwrap()
        );
    }

    #[test]
    fn negative_sd_rejected() {
        let spec = SyntheticSpec {
            radius_sd: -1.0,
            ..SyntheticSpec::annulus_id(3, 0)
        };
        assert!(generate(&spec).is_err());
    }
}
