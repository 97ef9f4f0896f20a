//! CIR anomaly scoring.
//!
//! The baseline detector measures the Mahalanobis distance between hand-picked
//! CIR features and the feature distribution of trusted line-of-sight
//! channels, then maps it through a decreasing sigmoid so the output can be
//! used directly as a trust value.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranging::{synthesize_cir, ChannelRealization, Cir, PathLossParams, ProfileRange};
use crate::trust::sigmoid::{SigmoidParams, LN_9};

pub const FEATURE_NAMES: [&str; 5] = [
    "total_energy",
    "first_path_ratio",
    "rise_time_samples",
    "rms_delay_spread_samples",
    "tap_kurtosis",
];
const FEATURE_COUNT: usize = FEATURE_NAMES.len();

/// Minimum number of trusted CIRs accepted by [`calibrate`].
pub const MIN_CALIBRATION_SAMPLES: usize = 30;

/// Leading-edge detection threshold relative to the strongest tap.
const LEADING_EDGE_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("CIR has no nonzero tap")]
    AllZeroCir,
    #[error("calibration needs at least {MIN_CALIBRATION_SAMPLES} CIRs, got {0}")]
    TooFewSamples(usize),
    #[error("an exchange carries 1 to 3 CIRs, got {0}")]
    BadCirCount(usize),
    #[error("invalid calibration model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirFeatures {
    pub total_energy: f64,
    /// Amplitude of the first detected path over the strongest tap.
    pub first_path_ratio: f64,
    /// 10 % to 90 % rise of the leading edge, in samples.
    pub rise_time_samples: f64,
    pub rms_delay_spread_samples: f64,
    /// Fourth standardized moment of the tap amplitudes.
    pub tap_kurtosis: f64,
}

impl CirFeatures {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.total_energy,
            self.first_path_ratio,
            self.rise_time_samples,
            self.rms_delay_spread_samples,
            self.tap_kurtosis,
        ]
    }
}

/// Fractional sample index where the edge rising into `peak` crosses `level`.
fn crossing(amps: &[f64], peak: usize, level: f64) -> f64 {
    let mut i = peak;
    while i > 0 && amps[i - 1] >= level {
        i -= 1;
    }
    if i == 0 {
        return 0.0;
    }
    let (lo, hi) = (amps[i - 1], amps[i]);
    (i - 1) as f64 + (level - lo) / (hi - lo)
}

pub fn extract_features(cir: &Cir) -> Result<CirFeatures, DetectorError> {
    let amps: Vec<f64> = cir.taps.iter().map(|t| t.abs()).collect();
    let max = amps.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(DetectorError::AllZeroCir);
    }

    let threshold = LEADING_EDGE_FRACTION * max;
    let first = amps
        .iter()
        .position(|a| *a >= threshold)
        .expect("the maximum exceeds the threshold");
    let mut peak = first;
    while peak + 1 < amps.len() && amps[peak + 1] >= amps[peak] {
        peak += 1;
    }
    let first_path_ratio = amps[peak] / max;
    let rise_time_samples =
        crossing(&amps, peak, 0.9 * amps[peak]) - crossing(&amps, peak, 0.1 * amps[peak]);

    let energies: Vec<f64> = amps.iter().map(|a| a * a).collect();
    let total_energy: f64 = energies.iter().sum();
    let mean_delay = energies
        .iter()
        .enumerate()
        .map(|(i, e)| i as f64 * e)
        .sum::<f64>()
        / total_energy;
    let spread = (energies
        .iter()
        .enumerate()
        .map(|(i, e)| (i as f64 - mean_delay).powi(2) * e)
        .sum::<f64>()
        / total_energy)
        .sqrt();

    let n = amps.len() as f64;
    let mean_amp = amps.iter().sum::<f64>() / n;
    let m2 = amps.iter().map(|a| (a - mean_amp).powi(2)).sum::<f64>() / n;
    let m4 = amps.iter().map(|a| (a - mean_amp).powi(4)).sum::<f64>() / n;
    // A flat CIR has no spread; use the lower bound of the kurtosis.
    let tap_kurtosis = if m2 > 0.0 { m4 / (m2 * m2) } else { 1.0 };

    Ok(CirFeatures {
        total_energy,
        first_path_ratio,
        rise_time_samples,
        rms_delay_spread_samples: spread,
        tap_kurtosis,
    })
}

/// Anything that maps the CIRs of one exchange to a trust value in [0, 1].
pub trait AnomalyDetector {
    fn score(&self, cirs: &[Cir]) -> Result<f64, DetectorError>;
}

/// Feature statistics of trusted channels.
///
/// Serialized as
/// `{"feature_names": [...], "means": [...], "covariance": [[...], ...], "distance_scale": s}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct CalibrationModel {
    feature_means: DVector<f64>,
    feature_covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    distance_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    feature_names: Vec<String>,
    means: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    distance_scale: f64,
}

impl TryFrom<ModelDocument> for CalibrationModel {
    type Error = DetectorError;

    fn try_from(doc: ModelDocument) -> Result<Self, Self::Error> {
        if doc.feature_names != FEATURE_NAMES {
            return Err(DetectorError::InvalidModel(format!(
                "feature_names must be {FEATURE_NAMES:?}"
            )));
        }
        if doc.means.len() != FEATURE_COUNT
            || doc.covariance.len() != FEATURE_COUNT
            || doc.covariance.iter().any(|row| row.len() != FEATURE_COUNT)
        {
            return Err(DetectorError::InvalidModel(format!(
                "means and covariance must be {FEATURE_COUNT}-dimensional"
            )));
        }
        let means = DVector::from_vec(doc.means);
        let cov = DMatrix::from_fn(FEATURE_COUNT, FEATURE_COUNT, |i, j| doc.covariance[i][j]);
        CalibrationModel::new(means, cov, doc.distance_scale)
    }
}

impl From<CalibrationModel> for ModelDocument {
    fn from(m: CalibrationModel) -> Self {
        ModelDocument {
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            means: m.feature_means.iter().cloned().collect(),
            covariance: m
                .feature_covariance
                .row_iter()
                .map(|r| r.iter().cloned().collect())
                .collect(),
            distance_scale: m.distance_scale,
        }
    }
}

impl CalibrationModel {
    pub fn new(
        feature_means: DVector<f64>,
        feature_covariance: DMatrix<f64>,
        distance_scale: f64,
    ) -> Result<Self, DetectorError> {
        if feature_means.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::InvalidModel("non-finite mean".into()));
        }
        if !(distance_scale > 0.0 && distance_scale.is_finite()) {
            return Err(DetectorError::InvalidModel(format!(
                "distance_scale must be positive, got {distance_scale}"
            )));
        }
        let symmetric = (0..FEATURE_COUNT).all(|i| {
            (0..FEATURE_COUNT).all(|j| {
                let (a, b) = (feature_covariance[(i, j)], feature_covariance[(j, i)]);
                (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
            })
        });
        if !symmetric {
            return Err(DetectorError::InvalidModel(
                "covariance is not symmetric".into(),
            ));
        }
        let precision = feature_covariance
            .clone()
            .cholesky()
            .ok_or_else(|| {
                DetectorError::InvalidModel("covariance is not positive definite".into())
            })?
            .inverse();
        Ok(Self {
            feature_means,
            feature_covariance,
            precision,
            distance_scale,
        })
    }

    pub fn feature_means(&self) -> &DVector<f64> {
        &self.feature_means
    }

    pub fn feature_covariance(&self) -> &DMatrix<f64> {
        &self.feature_covariance
    }

    pub fn distance_scale(&self) -> f64 {
        self.distance_scale
    }

    pub fn mahalanobis(&self, features: &CirFeatures) -> f64 {
        let diff = DVector::from_row_slice(&features.to_array()) - &self.feature_means;
        (diff.transpose() * &self.precision * &diff)[(0, 0)]
            .max(0.0)
            .sqrt()
    }

    /// Decreasing sigmoid of the distance: 0.5 at `distance_scale`, 0.9 at
    /// half of it, about 0.988 at zero.
    pub fn distance_to_score(&self, distance: f64) -> f64 {
        let params = SigmoidParams::new(self.distance_scale, 0.5 * self.distance_scale)
            .expect("distance_scale is positive");
        // Clamp the exponent so the score stays strictly inside (0, 1).
        let exponent = (-LN_9 * (distance - params.low()) / (params.high() - params.low()))
            .clamp(-700.0, 700.0);
        1.0 / (1.0 + exponent.exp())
    }

    pub fn score_cir(&self, cir: &Cir) -> Result<f64, DetectorError> {
        Ok(self.distance_to_score(self.mahalanobis(&extract_features(cir)?)))
    }
}

impl AnomalyDetector for CalibrationModel {
    /// Most pessimistic packet of the exchange.
    fn score(&self, cirs: &[Cir]) -> Result<f64, DetectorError> {
        if cirs.is_empty() || cirs.len() > 3 {
            return Err(DetectorError::BadCirCount(cirs.len()));
        }
        cirs.iter()
            .map(|c| self.score_cir(c))
            .try_fold(1.0f64, |acc, s| s.map(|s| acc.min(s)))
    }
}

/// Fits feature means and a ridge-regularized covariance to trusted CIRs.
///
/// `distance_scale` sits halfway between the nearest-rank 95th percentile of
/// the calibration distances and the next order statistic, so at least 95 %
/// of the calibration set scores strictly above 0.5.
pub fn calibrate(trusted_cirs: &[Cir]) -> Result<CalibrationModel, DetectorError> {
    let n = trusted_cirs.len();
    if n < MIN_CALIBRATION_SAMPLES {
        return Err(DetectorError::TooFewSamples(n));
    }
    let rows = trusted_cirs
        .iter()
        .map(|c| extract_features(c).map(|f| f.to_array()))
        .collect::<Result<Vec<_>, _>>()?;

    let mut mean = DVector::<f64>::zeros(FEATURE_COUNT);
    for r in &rows {
        mean += DVector::from_row_slice(r);
    }
    mean /= n as f64;
    let mut cov = DMatrix::<f64>::zeros(FEATURE_COUNT, FEATURE_COUNT);
    for r in &rows {
        let d = DVector::from_row_slice(r) - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n - 1) as f64;
    let ridge = 1e-6 * cov.diagonal().mean();
    let ridge = if ridge > 0.0 { ridge } else { 1e-12 };
    for i in 0..FEATURE_COUNT {
        cov[(i, i)] += ridge;
    }
    // Exact symmetry for the Cholesky check and the JSON round trip.
    let cov = (&cov + cov.transpose()) * 0.5;

    // Provisional scale only to reuse the distance code.
    let provisional = CalibrationModel::new(mean.clone(), cov.clone(), 1.0)?;
    let mut distances: Vec<f64> = rows
        .iter()
        .map(|r| {
            let d = DVector::from_row_slice(r) - &provisional.feature_means;
            (d.transpose() * &provisional.precision * &d)[(0, 0)]
                .max(0.0)
                .sqrt()
        })
        .collect();
    distances.sort_by(f64::total_cmp);
    let rank = (0.95 * n as f64).ceil() as usize - 1;
    let upper = distances.get(rank + 1).copied().unwrap_or(distances[rank]);
    let scale = 0.5 * (distances[rank] + upper);
    let scale = if scale > 0.0 {
        scale
    } else {
        f64::MIN_POSITIVE.sqrt()
    };

    CalibrationModel::new(mean, cov, scale)
}

/// Line-of-sight CIRs drawn from a spread of environments.
pub fn synthetic_trusted_set<R: Rng + ?Sized>(
    count: usize,
    environments: &ProfileRange,
    rng: &mut R,
) -> Vec<Cir> {
    (0..count)
        .map(|_| {
            let profile = environments.sample(rng);
            let distance = rng.random_range(1.0..10.0);
            let channel = ChannelRealization::line_of_sight(
                distance,
                &PathLossParams::default(),
                0.0,
                profile,
            );
            synthesize_cir(&channel, rng)
        })
        .collect()
}
