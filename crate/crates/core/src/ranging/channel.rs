//! Link-level channel description: path loss, packet error rate and the
//! per-tick channel condition.

use serde::{Deserialize, Serialize};

use super::cir::CirProfile;
use super::RangingError;

/// Log-distance path-loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathLossParams {
    /// Received power at the reference distance, dB.
    pub reference_power_db: f64,
    pub reference_distance_m: f64,
    pub exponent: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            reference_power_db: -60.0,
            reference_distance_m: 1.0,
            exponent: 2.0,
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.reference_distance_m > 0.0 && self.reference_distance_m.is_finite()) {
            return Err(format!(
                "reference_distance_m must be positive, got {}",
                self.reference_distance_m
            ));
        }
        if !(self.exponent > 0.0 && self.exponent.is_finite())
            || !self.reference_power_db.is_finite()
        {
            return Err("exponent must be positive and reference_power_db finite".into());
        }
        Ok(())
    }
}

/// Mean RSSI at `distance` meters: `P0 - 10 n log10(d / d0)`.
pub fn rssi_from_path(distance: f64, env: &PathLossParams) -> Result<f64, RangingError> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(RangingError::NonPositiveDistance(distance));
    }
    Ok(
        env.reference_power_db
            - 10.0 * env.exponent * (distance / env.reference_distance_m).log10(),
    )
}

/// Logistic packet-error curve in dB.
///
/// The odds of losing a packet change by a factor of ten every
/// `db_per_decade` dB and pass through `anchor_per` at `anchor_rssi_db`.
/// With the defaults (1 % at -92 dB, 1.5 dB per decade) PER reaches 50 % near
/// -95 dB and exceeds 99.99 % by -110 dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerCurve {
    pub anchor_rssi_db: f64,
    pub anchor_per: f64,
    pub db_per_decade: f64,
}

impl Default for PerCurve {
    fn default() -> Self {
        Self {
            anchor_rssi_db: -92.0,
            anchor_per: 0.01,
            db_per_decade: 1.5,
        }
    }
}

impl PerCurve {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.anchor_per > 0.0 && self.anchor_per < 1.0) {
            return Err(format!(
                "anchor_per must lie in (0,1), got {}",
                self.anchor_per
            ));
        }
        if !(self.db_per_decade > 0.0) || !self.anchor_rssi_db.is_finite() {
            return Err("db_per_decade must be positive and anchor_rssi_db finite".into());
        }
        Ok(())
    }
}

/// Probability that a single packet is lost at the given RSSI.
pub fn packet_error_prob(rssi: f64, curve: &PerCurve) -> f64 {
    let anchor_log_odds = (curve.anchor_per / (1.0 - curve.anchor_per)).log10();
    let log_odds = anchor_log_odds - (rssi - curve.anchor_rssi_db) / curve.db_per_decade;
    // Logistic in base 10, written so neither branch overflows.
    if log_odds >= 0.0 {
        1.0 / (1.0 + 10f64.powf(-log_odds))
    } else {
        let odds = 10f64.powf(log_odds);
        odds / (1.0 + odds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelCondition {
    Los,
    Nlos,
    ShrAttacked,
}

/// Link state for one anchor during one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub condition: ChannelCondition,
    pub true_distance: f64,
    pub path_loss_exponent: f64,
    pub rssi_mean: f64,
    pub rssi_sigma: f64,
    /// Distance reduction forced by an attacker, meters. Zero unless attacked.
    pub spoof_bias: f64,
    /// Extra propagation length of the first path when obstructed, meters.
    pub nlos_excess_delay: f64,
    pub cir_profile: CirProfile,
    /// Every packet on the link is lost.
    pub outage: bool,
}

impl ChannelRealization {
    pub fn line_of_sight(
        true_distance: f64,
        path_loss: &PathLossParams,
        rssi_sigma: f64,
        cir_profile: CirProfile,
    ) -> Self {
        // Co-located devices would give an unbounded RSSI; clamp to 1 cm.
        let d = true_distance.max(0.01);
        let rssi_mean = rssi_from_path(d, path_loss).expect("clamped distance is positive");
        Self {
            condition: ChannelCondition::Los,
            true_distance,
            path_loss_exponent: path_loss.exponent,
            rssi_mean,
            rssi_sigma,
            spoof_bias: 0.0,
            nlos_excess_delay: 0.0,
            cir_profile,
            outage: false,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.true_distance >= 0.0
            && self.nlos_excess_delay >= 0.0
            && self.rssi_sigma >= 0.0
            && (self.condition == ChannelCondition::ShrAttacked || self.spoof_bias == 0.0)
    }
}
