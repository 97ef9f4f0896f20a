use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slope constant that puts the 0.9 crossing at `high`.
pub const LN_9: f64 = 2.197_224_577_336_219_6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SigmoidError {
    #[error("low and high must differ (both {0})")]
    Degenerate(f64),
    #[error("tuning parameters must be finite, got ({0}, {1})")]
    NonFinite(f64, f64),
}

/// Tuning of one real-valued metric.
///
/// `low` maps to 0.5 and `high` to 0.9. Trust increases with the metric when
/// `high > low` and decreases when `high < low`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSigmoid", into = "RawSigmoid")]
pub struct SigmoidParams {
    low: f64,
    high: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSigmoid {
    low: f64,
    high: f64,
}

impl TryFrom<RawSigmoid> for SigmoidParams {
    type Error = SigmoidError;

    fn try_from(raw: RawSigmoid) -> Result<Self, Self::Error> {
        SigmoidParams::new(raw.low, raw.high)
    }
}

impl From<SigmoidParams> for RawSigmoid {
    fn from(p: SigmoidParams) -> Self {
        RawSigmoid {
            low: p.low,
            high: p.high,
        }
    }
}

impl SigmoidParams {
    pub fn new(low: f64, high: f64) -> Result<Self, SigmoidError> {
        if !low.is_finite() || !high.is_finite() {
            return Err(SigmoidError::NonFinite(low, high));
        }
        if low == high {
            return Err(SigmoidError::Degenerate(low));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn increasing(&self) -> bool {
        self.high > self.low
    }
}

/// `1 / (1 + exp(-ln9 (m - low) / (high - low)))`.
///
/// Infinite metrics saturate to 0 or 1.
pub fn sigmoid_indicator(m: f64, p: &SigmoidParams) -> f64 {
    debug_assert!(!m.is_nan(), "metric must not be NaN");
    let x = -LN_9 * (m - p.low) / (p.high - p.low);
    1.0 / (1.0 + x.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln9_constant() {
        assert_eq!(LN_9, 9f64.ln());
    }

    #[test]
    fn anchor_points() {
        let p = SigmoidParams::new(2.0, 5.0).unwrap();
        assert_eq!(sigmoid_indicator(2.0, &p), 0.5);
        assert!((sigmoid_indicator(5.0, &p) - 0.9).abs() < 1e-12);
        assert!(p.increasing());
    }

    #[test]
    fn temperature_orientation() {
        let p = SigmoidParams::new(85.0, 75.0).unwrap();
        assert!(!p.increasing());
        assert_eq!(sigmoid_indicator(85.0, &p), 0.5);
        assert!((sigmoid_indicator(75.0, &p) - 0.9).abs() < 1e-12);
        assert!(sigmoid_indicator(95.0, &p) < 0.5);
    }

    #[test]
    fn saturation() {
        let p = SigmoidParams::new(8.0, 3.0).unwrap();
        assert_eq!(sigmoid_indicator(f64::INFINITY, &p), 0.0);
        assert_eq!(sigmoid_indicator(f64::NEG_INFINITY, &p), 1.0);
    }

    #[test]
    fn degenerate_params_rejected() {
        assert_eq!(
            SigmoidParams::new(3.0, 3.0),
            Err(SigmoidError::Degenerate(3.0))
        );
        assert!(SigmoidParams::new(f64::NAN, 3.0).is_err());
        let parsed: Result<SigmoidParams, _> = serde_json::from_str(r#"{"low": 1, "high": 1}"#);
        assert!(parsed.is_err());
    }
}
