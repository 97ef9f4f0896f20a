//! Double-sided two-way ranging at timestamp level.
//!
//! One exchange consists of four packets:
//!
//! ```text
//!   node            anchor
//!   t_a  ---- a ---->  tau_a
//!   t_b  <--- b -----  tau_b     (anchor waits D_a)
//!   t_c  ---- c ---->  tau_c     (node waits D_n)
//!        <--- d -----            (report carrying tau_*)
//! ```
//!
//! Packet `d` only has to arrive; its loss fails the exchange.

pub mod channel;
pub mod cir;
pub mod timestamp;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Anchor, AnchorId, NodeState};

pub use channel::{
    packet_error_prob, rssi_from_path, ChannelCondition, ChannelRealization, PathLossParams,
    PerCurve,
};
pub use cir::{synthesize_cir, Cir, CirProfile, ProfileRange, CIR_LEN};
pub use timestamp::Seconds;

/// Meters per second.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RangingError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("exchange with anchor {0} did not complete")]
    ExchangeFailed(AnchorId),
    #[error("timestamps of exchange with anchor {0} are not strictly increasing")]
    NonMonotoneTimestamps(AnchorId),
}

/// Response delays and clock model of one exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeTiming {
    /// True time at which the node sends packet a, seconds.
    pub start: f64,
    /// Anchor response delay D_a, anchor clock seconds.
    pub anchor_delay: f64,
    /// Node response delay D_n, node clock seconds.
    pub node_delay: f64,
    pub anchor_clock_offset: f64,
    pub anchor_clock_drift: f64,
}

impl ExchangeTiming {
    pub fn new(start: f64, anchor_delay: f64, node_delay: f64) -> Self {
        Self {
            start,
            anchor_delay,
            node_delay,
            anchor_clock_offset: 0.0,
            anchor_clock_drift: 0.0,
        }
    }
}

/// Receiver-side noise and packet-loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioModel {
    /// Standard deviation of each reception timestamp, seconds.
    pub timestamp_sigma_s: f64,
    pub per: PerCurve,
}

impl Default for RadioModel {
    fn default() -> Self {
        Self {
            timestamp_sigma_s: 0.3e-9,
            per: PerCurve::default(),
        }
    }
}

impl RadioModel {
    pub fn noiseless() -> Self {
        Self {
            timestamp_sigma_s: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangingRecord {
    pub anchor_id: AnchorId,
    /// t_a, t_b, t_c in the node clock.
    pub node_timestamps: [Seconds; 3],
    /// tau_a, tau_b, tau_c in the anchor clock.
    pub anchor_timestamps: [Seconds; 3],
    /// dB.
    pub rssi: f64,
    /// CIRs of packets a, b, c. Empty when the exchange failed.
    pub cirs: Vec<Cir>,
    pub success: bool,
}

impl RangingRecord {
    fn timestamps_monotone(&self) -> bool {
        let [ta, tb, tc] = self.node_timestamps;
        let [ua, ub, uc] = self.anchor_timestamps;
        ta < tb && tb < tc && ua < ub && ub < uc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeEstimate {
    pub anchor_id: AnchorId,
    /// Meters. Finite, but negative values are possible under attack.
    pub range: f64,
    pub record: RangingRecord,
}

struct Clock {
    offset: f64,
    drift: f64,
}

impl Clock {
    fn reading(&self, true_time: Seconds) -> Seconds {
        Seconds::from(self.offset) + true_time * (1.0 + self.drift)
    }

    fn true_time(&self, reading: Seconds) -> Seconds {
        (reading - Seconds::from(self.offset)) / Seconds::from(1.0 + self.drift)
    }
}

/// Simulates one four-packet exchange between `node` and `anchor`.
///
/// The number of random draws is the same for every outcome, so a failed or
/// forced-out link does not shift the stream for later consumers.
pub fn simulate_exchange<R: Rng + ?Sized>(
    node: &NodeState,
    anchor: &Anchor,
    channel: &ChannelRealization,
    timing: &ExchangeTiming,
    radio: &RadioModel,
    rng: &mut R,
) -> RangingRecord {
    debug_assert!(timing.anchor_delay > 0.0 && timing.node_delay > 0.0);
    let node_clock = Clock {
        offset: node.clock_offset,
        drift: node.clock_drift,
    };
    let anchor_clock = Clock {
        offset: timing.anchor_clock_offset,
        drift: timing.anchor_clock_drift,
    };
    let tof = Seconds::from(channel.true_distance + channel.nlos_excess_delay - channel.spoof_bias)
        / Seconds::from(SPEED_OF_LIGHT);

    let mut rx_noise = || -> Seconds {
        let z: f64 = StandardNormal.sample(rng);
        Seconds::from(radio.timestamp_sigma_s * z)
    };
    let (noise_a, noise_b, noise_c) = (rx_noise(), rx_noise(), rx_noise());

    let sent_a = Seconds::from(timing.start);
    let t_a = node_clock.reading(sent_a);
    let tau_a = anchor_clock.reading(sent_a + tof) + noise_a;
    // The anchor schedules its reply from its own (noisy) receive timestamp.
    let tau_b = tau_a + Seconds::from(timing.anchor_delay);
    let sent_b = anchor_clock.true_time(tau_b);
    let t_b = node_clock.reading(sent_b + tof) + noise_b;
    let t_c = t_b + Seconds::from(timing.node_delay);
    let sent_c = node_clock.true_time(t_c);
    let tau_c = anchor_clock.reading(sent_c + tof) + noise_c;

    let rssi = if channel.rssi_sigma > 0.0 {
        Normal::new(channel.rssi_mean, channel.rssi_sigma)
            .expect("sigma is positive")
            .sample(rng)
    } else {
        channel.rssi_mean
    };
    let per = packet_error_prob(rssi, &radio.per);
    // Not `all`: every packet consumes its draw even after a loss.
    #[allow(clippy::unnecessary_fold)]
    let delivered = (0..4)
        .map(|_| rng.random::<f64>() >= per)
        .fold(true, |all, ok| all && ok);
    let cirs: Vec<Cir> = (0..3).map(|_| synthesize_cir(channel, rng)).collect();

    let success = delivered && !channel.outage;
    RangingRecord {
        anchor_id: anchor.id.clone(),
        node_timestamps: [t_a, t_b, t_c],
        anchor_timestamps: [tau_a, tau_b, tau_c],
        rssi,
        cirs: if success { cirs } else { Vec::new() },
        success,
    }
}

/// Asymmetric DS-TWR range estimate,
/// `c (R_a R_n - D_a D_n) / (R_a + D_a + R_n + D_n)`.
pub fn compute_range(record: &RangingRecord) -> Result<RangeEstimate, RangingError> {
    if !record.success {
        return Err(RangingError::ExchangeFailed(record.anchor_id.clone()));
    }
    if !record.timestamps_monotone() {
        return Err(RangingError::NonMonotoneTimestamps(
            record.anchor_id.clone(),
        ));
    }
    let [t_a, t_b, t_c] = record.node_timestamps;
    let [tau_a, tau_b, tau_c] = record.anchor_timestamps;
    let round_node = t_b - t_a;
    let reply_node = t_c - t_b;
    let reply_anchor = tau_b - tau_a;
    let round_anchor = tau_c - tau_b;
    let tof = (round_anchor * round_node - reply_anchor * reply_node)
        / (round_anchor + reply_anchor + round_node + reply_node);
    Ok(RangeEstimate {
        anchor_id: record.anchor_id.clone(),
        range: (tof * SPEED_OF_LIGHT).to_f64(),
        record: record.clone(),
    })
}
