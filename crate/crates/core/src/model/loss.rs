//! Frequency-weighted L1 reconstruction loss over Mel matrices:
//!
//!   L = (1 / (T F)) * sum_t sum_f w_f |pred_{t,f} - target_{t,f}|
//!
//! with per-band weights ramping linearly from 1.0 at the lowest band to 1.5
//! at the highest, nudging the optimizer toward high-frequency detail.

use crate::linalg::{Mat, Scalar};
use crate::mel::MelSpectrogram;

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights<T> {
    values: Vec<T>,
}

impl<T: Scalar> LossWeights<T> {
    /// w_f = 1.0 + 0.5 * (f - 1) / (F - 1); endpoints are exactly 1.0 and 1.5.
    pub fn ramp(bands: usize) -> Self {
        assert!(bands >= 1, "need at least one band");
        let values = if bands == 1 {
            vec![T::one()]
        } else {
            (0..bands)
                .map(|f| T::from_f64(1.0 + 0.5 * f as f64 / (bands - 1) as f64))
                .collect()
        };
        Self { values }
    }

    /// All-ones weights; reduces the loss to plain mean absolute error.
    pub fn uniform(bands: usize) -> Self {
        assert!(bands >= 1, "need at least one band");
        Self {
            values: vec![T::one(); bands],
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn bands(&self) -> usize {
        self.values.len()
    }
}

/// Weighted L1 over raw matrices; both operands must be T x F with F equal
/// to the weight count.
pub(crate) fn weighted_l1<T: Scalar>(pred: &Mat<T>, target: &Mat<T>, weights: &LossWeights<T>) -> T {
    assert_eq!(pred.rows(), target.rows());
    assert_eq!(pred.cols(), target.cols());
    assert_eq!(pred.cols(), weights.bands());
    let mut acc = T::zero();
    for t in 0..pred.rows() {
        let p = pred.row(t);
        let q = target.row(t);
        for f in 0..pred.cols() {
            acc += weights.values[f] * (p[f] - q[f]).abs();
        }
    }
    acc / T::from_f64((pred.rows() * pred.cols()) as f64)
}

/// Subgradient with respect to `pred`: entry (t, f) is
/// w_f * sign(pred - target) / (T F), with sign(0) = 0.
pub(crate) fn weighted_l1_grad<T: Scalar>(
    pred: &Mat<T>,
    target: &Mat<T>,
    weights: &LossWeights<T>,
) -> Mat<T> {
    assert_eq!(pred.rows(), target.rows());
    assert_eq!(pred.cols(), target.cols());
    assert_eq!(pred.cols(), weights.bands());
    let scale = T::one() / T::from_f64((pred.rows() * pred.cols()) as f64);
    let mut out = Mat::zeros(pred.rows(), pred.cols());
    for t in 0..pred.rows() {
        let p = pred.row(t);
        let q = target.row(t);
        let row = out.row_mut(t);
        for f in 0..p.len() {
            let diff = p[f] - q[f];
            let sign = if diff > T::zero() {
                T::one()
            } else if diff < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            row[f] = weights.values[f] * sign * scale;
        }
    }
    out
}

fn check_pair(pred: &MelSpectrogram, target: &MelSpectrogram) -> Result<(), ModelError> {
    if pred.frames() != target.frames() || pred.bands() != target.bands() {
        return Err(ModelError::Shape(format!(
            "spectrogram shapes differ: {}x{} vs {}x{}",
            pred.frames(),
            pred.bands(),
            target.frames(),
            target.bands()
        )));
    }
    if pred.normalization() != target.normalization() {
        return Err(ModelError::NormalizationMismatch);
    }
    Ok(())
}

fn spec_to_mat(spec: &MelSpectrogram) -> Mat<f64> {
    Mat::from_vec(
        spec.frames(),
        spec.bands(),
        spec.values().iter().map(|&v| v as f64).collect(),
    )
}

/// Frequency-weighted L1 between two spectrograms with matching shape and
/// normalization.
pub fn freq_weighted_l1(
    pred: &MelSpectrogram,
    target: &MelSpectrogram,
    weights: &LossWeights<f64>,
) -> Result<f64, ModelError> {
    check_pair(pred, target)?;
    if weights.bands() != pred.bands() {
        return Err(ModelError::dim("loss weights", pred.bands(), weights.bands()));
    }
    Ok(weighted_l1(
        &spec_to_mat(pred),
        &spec_to_mat(target),
        weights,
    ))
}

/// T x F subgradient of [`freq_weighted_l1`] with respect to `pred`.
pub fn freq_weighted_l1_grad(
    pred: &MelSpectrogram,
    target: &MelSpectrogram,
    weights: &LossWeights<f64>,
) -> Result<Mat<f64>, ModelError> {
    check_pair(pred, target)?;
    if weights.bands() != pred.bands() {
        return Err(ModelError::dim("loss weights", pred.bands(), weights.bands()));
    }
    Ok(weighted_l1_grad(
        &spec_to_mat(pred),
        &spec_to_mat(target),
        weights,
    ))
}
