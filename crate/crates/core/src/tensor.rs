use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of finite `f64` values.
///
/// Construction goes through [`Tensor::new`], so every value of this type
/// has `data.len() == shape.iter().product()` and no NaN or infinity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    /// One-dimensional tensor.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    /// Tensor with shape `[0]`.
    pub fn empty() -> Self {
        Tensor {
            shape: vec![0],
            data: Vec::new(),
        }
    }

    /// Builds a tensor from already-checked parts; finiteness is still
    /// asserted in debug builds.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    /// Returns `(x, y)` when this is a 2-vector.
    pub fn as_pair(&self) -> Option<(f64, f64)> {
        match (self.shape.as_slice(), self.data.as_slice()) {
            ([2], [x, y]) => Some((*x, *y)),
            _ => None,
        }
    }

    /// Returns `(rows, cols)` when this is a 2-D grid.
    pub fn as_grid(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [rows, cols] => Some((*rows, *cols)),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawTensor::deserialize(deserializer)?;
        Tensor::new(raw.shape, raw.data).map_err(serde::de::Error::custom)
    }
}

/// Proper-training / calibration / held-out partition of a dataset.
///
/// Disjointness is by record: each input record lands in exactly one list.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub proper_training: Vec<Tensor>,
    pub calibration: Vec<Tensor>,
    pub held_out: Vec<Tensor>,
}

impl DatasetSplit {
    /// Partitions `records` in order: the first `n_train` go to proper
    /// training, the next `n_cal` to calibration, the rest are held out.
    pub fn partition(mut records: Vec<Tensor>, n_train: usize, n_cal: usize) -> Result<Self> {
        if n_train + n_cal > records.len() {
            return Err(Error::InvalidConfig(format!(
                "split sizes {} + {} exceed {} records",
                n_train,
                n_cal,
                records.len()
            )));
        }
        let held_out = records.split_off(n_train + n_cal);
        let calibration = records.split_off(n_train);
        Ok(DatasetSplit {
            proper_training: records,
            calibration,
            held_out,
        })
    }

    /// The calibration list, or `EmptyCalibration` when it has no points.
    pub fn calibration_for_pvalues(&self) -> Result<&[Tensor]> {
        if self.calibration.is_empty() {
            Err(Error::EmptyCalibration)
        } else {
            Ok(&self.calibration)
        }
    }
}

/// Checked tensor construction.
pub fn validate_tensor(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_square() {
        let t = validate_tensor(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn short_data_is_shape_mismatch() {
        let err = validate_tensor(vec![2, 2], vec![1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(
            err,
            Error::ShapeMismatch {
                expected: 4,
                actual: 3,
                ..
            }
        ));
    }

    #[test]
    fn nan_is_rejected() {
        let err = validate_tensor(vec![1], vec![f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 0 }));
        let err = validate_tensor(vec![2], vec![0.0, f64::NEG_INFINITY]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
    }

    #[test]
    fn deserialize_validates() {
        let ok: Tensor = serde_json::from_str(r#"{"shape":[2],"data":[1.0,2.0]}"#).unwrap();
        assert_eq!(ok.as_pair(), Some((1.0, 2.0)));
        assert!(serde_json::from_str::<Tensor>(r#"{"shape":[3],"data":[1.0]}"#).is_err());
    }

    #[test]
    fn partition_is_disjoint_and_ordered() {
        let records: Vec<Tensor> = (0..6)
            .map(|i| Tensor::vector(vec![i as f64]).unwrap())
            .collect();
        let split = DatasetSplit::partition(records, 2, 3).unwrap();
        assert_eq!(split.proper_training.len(), 2);
        assert_eq!(split.calibration.len(), 3);
        assert_eq!(split.held_out.len(), 1);
        assert_eq!(split.calibration[0].data(), &[2.0]);
        assert_eq!(split.held_out[0].data(), &[5.0]);

        let empty = DatasetSplit::partition(vec![], 0, 0).unwrap();
        assert!(matches!(
            empty.calibration_for_pvalues(),
            Err(Error::EmptyCalibration)
        ));
    }
}
