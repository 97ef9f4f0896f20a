//! Synthetic channel impulse responses.
//!
//! Taps are magnitudes sampled at 1 ns. The receiver window places the
//! nominal line-of-sight path at [`LOS_FIRST_PATH_INDEX`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::channel::{ChannelCondition, ChannelRealization};
use super::SPEED_OF_LIGHT;

pub const CIR_LEN: usize = 64;
pub const CIR_SAMPLE_SPACING_NS: f64 = 1.0;
pub const LOS_FIRST_PATH_INDEX: usize = 8;

/// Offset of the first reflected tap behind the direct path.
const TAIL_START: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cir {
    pub taps: Vec<f64>,
    pub first_path_index: usize,
    pub sample_spacing_ns: f64,
}

impl Cir {
    pub fn from_taps(taps: Vec<f64>, first_path_index: usize) -> Self {
        Self {
            taps,
            first_path_index,
            sample_spacing_ns: CIR_SAMPLE_SPACING_NS,
        }
    }

    pub fn scaled(&self, factor: f64) -> Cir {
        Cir {
            taps: self.taps.iter().map(|t| t * factor).collect(),
            ..self.clone()
        }
    }
}

/// Multipath environment seen by a link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CirProfile {
    /// Amplitude of the direct path.
    pub first_path_gain: f64,
    /// Standard deviation of the Gaussian pulse, ns.
    pub pulse_width_ns: f64,
    /// Amplitude of the first reflected tap relative to the direct path.
    pub multipath_gain: f64,
    /// Exponential decay constant of the reflection tail, ns.
    pub multipath_decay_ns: f64,
    /// Standard deviation of the receiver noise per tap.
    pub noise_sigma: f64,
}

impl Default for CirProfile {
    fn default() -> Self {
        Self {
            first_path_gain: 1.0,
            pulse_width_ns: 0.7,
            multipath_gain: 0.2,
            multipath_decay_ns: 6.0,
            noise_sigma: 0.01,
        }
    }
}

impl CirProfile {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("first_path_gain", self.first_path_gain),
            ("pulse_width_ns", self.pulse_width_ns),
            ("multipath_decay_ns", self.multipath_decay_ns),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=0.5).contains(&self.multipath_gain) {
            return Err(format!(
                "multipath_gain must lie in [0, 0.5], got {}",
                self.multipath_gain
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma < 0.1) {
            return Err(format!(
                "noise_sigma must lie in [0, 0.1), got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

/// Box of line-of-sight environments, used to draw a trusted calibration
/// population that spans more than one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileRange {
    pub first_path_gain: (f64, f64),
    pub pulse_width_ns: (f64, f64),
    pub multipath_gain: (f64, f64),
    pub multipath_decay_ns: (f64, f64),
    pub noise_sigma: (f64, f64),
}

impl Default for ProfileRange {
    fn default() -> Self {
        Self {
            first_path_gain: (0.8, 1.2),
            pulse_width_ns: (0.55, 0.85),
            multipath_gain: (0.1, 0.3),
            multipath_decay_ns: (3.0, 9.0),
            noise_sigma: (0.005, 0.015),
        }
    }
}

impl ProfileRange {
    pub fn validate(&self) -> Result<(), String> {
        let bounds = [
            self.first_path_gain,
            self.pulse_width_ns,
            self.multipath_gain,
            self.multipath_decay_ns,
            self.noise_sigma,
        ];
        if bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err("every range must satisfy low <= high".into());
        }
        let corner = |pick: fn((f64, f64)) -> f64| CirProfile {
            first_path_gain: pick(self.first_path_gain),
            pulse_width_ns: pick(self.pulse_width_ns),
            multipath_gain: pick(self.multipath_gain),
            multipath_decay_ns: pick(self.multipath_decay_ns),
            noise_sigma: pick(self.noise_sigma),
        };
        corner(|b| b.0).validate()?;
        corner(|b| b.1).validate()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CirProfile {
        let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        CirProfile {
            first_path_gain: draw(self.first_path_gain),
            pulse_width_ns: draw(self.pulse_width_ns),
            multipath_gain: draw(self.multipath_gain),
            multipath_decay_ns: draw(self.multipath_decay_ns),
            noise_sigma: draw(self.noise_sigma),
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn add_pulse(taps: &mut [f64], center: usize, amplitude: f64, width_ns: f64) {
    let lo = center.saturating_sub(4);
    let hi = (center + 4).min(taps.len() - 1);
    for (i, tap) in taps.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let delta = (i as f64 - center as f64) * CIR_SAMPLE_SPACING_NS;
        *tap += amplitude * (-delta * delta / (2.0 * width_ns * width_ns)).exp();
    }
}

fn add_tail<R: Rng + ?Sized>(
    taps: &mut [f64],
    start: usize,
    amplitude: f64,
    decay_ns: f64,
    rng: &mut R,
) {
    for (k, tap) in taps.iter_mut().skip(start).enumerate() {
        let envelope = amplitude * (-(k as f64) * CIR_SAMPLE_SPACING_NS / decay_ns).exp();
        *tap += envelope * (1.0 + 0.3 * normal(rng)).abs();
    }
}

fn add_noise<R: Rng + ?Sized>(taps: &mut [f64], sigma: f64, rng: &mut R) {
    for tap in taps.iter_mut() {
        *tap = (*tap + sigma * normal(rng)).abs();
    }
}

/// Draws one CIR for the given channel.
///
/// - LOS: the direct path is the strongest tap, followed by an exponentially
///   decaying reflection tail.
/// - NLOS: the direct path is delayed and at least 6 dB below a later
///   reflected path that carries the peak.
/// - SHR attack: broadband interference of comparable energy on every tap,
///   so no clear leading edge stands out.
pub fn synthesize_cir<R: Rng + ?Sized>(channel: &ChannelRealization, rng: &mut R) -> Cir {
    let p = &channel.cir_profile;
    let mut taps = vec![0.0; CIR_LEN];
    let direct = p.first_path_gain * (1.0 + 0.05 * normal(rng));

    match channel.condition {
        ChannelCondition::Los => {
            let fp = LOS_FIRST_PATH_INDEX;
            add_pulse(&mut taps, fp, direct, p.pulse_width_ns);
            add_tail(
                &mut taps,
                fp + TAIL_START,
                direct * p.multipath_gain,
                p.multipath_decay_ns,
                rng,
            );
            add_noise(&mut taps, p.noise_sigma, rng);
            Cir::from_taps(taps, fp)
        }
        ChannelCondition::Nlos => {
            let excess_ns = channel.nlos_excess_delay / SPEED_OF_LIGHT * 1e9;
            let delay = (excess_ns.round() as usize).max(1) + rng.random_range(0..=2usize);
            let fp = LOS_FIRST_PATH_INDEX + delay;
            let attenuation = rng.random_range(0.2..0.35);
            let strongest = fp + rng.random_range(4..=6usize);
            add_pulse(&mut taps, fp, direct * attenuation, p.pulse_width_ns);
            add_pulse(&mut taps, strongest, direct, p.pulse_width_ns * 1.5);
            add_tail(
                &mut taps,
                strongest + TAIL_START,
                direct * (1.5 * p.multipath_gain).min(0.5),
                p.multipath_decay_ns * 1.5,
                rng,
            );
            add_noise(&mut taps, p.noise_sigma, rng);
            Cir::from_taps(taps, fp)
        }
        ChannelCondition::ShrAttacked => {
            let bias_ns = channel.spoof_bias / SPEED_OF_LIGHT * 1e9;
            let fp = LOS_FIRST_PATH_INDEX.saturating_sub(bias_ns.round().max(0.0) as usize);
            add_pulse(&mut taps, LOS_FIRST_PATH_INDEX, direct, p.pulse_width_ns);
            add_tail(
                &mut taps,
                LOS_FIRST_PATH_INDEX + TAIL_START,
                direct * p.multipath_gain,
                p.multipath_decay_ns,
                rng,
            );
            add_noise(&mut taps, 0.6 * direct, rng);
            Cir::from_taps(taps, fp)
        }
    }
}
