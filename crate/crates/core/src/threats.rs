//! Time-scheduled threats and battery discharge.
//!
//! Threats are applied functionally: the mutated channels and node state at a
//! tick depend only on the unthreatened state, the event list and the tick.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Anchor, AnchorId, NodeState, SimClock};
use crate::ranging::{ChannelCondition, ChannelRealization};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThreatError {
    #[error("threat targets unknown anchor {0}")]
    UnknownAnchorTarget(AnchorId),
    #[error("threat window starts at tick {start} after it ends at tick {end}")]
    InvertedWindow { start: u64, end: u64 },
    #[error("{kind} does not take parameter `{name}`")]
    UnknownParameter { kind: &'static str, name: String },
    #[error("{kind} parameter `{name}` = {value} is out of range")]
    BadParameter {
        kind: &'static str,
        name: &'static str,
        value: f64,
    },
    #[error("{0} needs at least one target anchor")]
    MissingTargets(&'static str),
    #[error("{0} acts on the node and takes no target anchors")]
    UnexpectedTargets(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("discharge curve needs at least two points")]
    TooShort,
    #[error("consumed charge must rise strictly from 0 to 1")]
    BadCharge,
    #[error("voltage must fall strictly along the curve")]
    NotDecreasing,
    #[error("curve must span 3360 mV down to 2800 mV")]
    Coverage,
}

/// A threat with its validated parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThreatKind {
    /// Attacker injects energy into the synchronization header and shortens
    /// the measured range by `spoof_bias_m`.
    ShrAttack {
        spoof_bias_m: f64,
    },
    NlosObstruction {
        excess_delay_m: f64,
        extra_loss_db: f64,
    },
    /// Received power falls linearly over the window, reaching `loss_db` at its end.
    WeakSignalDrift {
        loss_db: f64,
    },
    Overheat {
        heat_rate_c_per_s: f64,
    },
    BatteryDrainAccelerate {
        factor: f64,
    },
    AnchorOutage,
}

impl ThreatKind {
    pub fn name(&self) -> &'static str {
        match self {
            ThreatKind::ShrAttack { .. } => "shr_attack",
            ThreatKind::NlosObstruction { .. } => "nlos_obstruction",
            ThreatKind::WeakSignalDrift { .. } => "weak_signal_drift",
            ThreatKind::Overheat { .. } => "overheat",
            ThreatKind::BatteryDrainAccelerate { .. } => "battery_drain_accelerate",
            ThreatKind::AnchorOutage => "anchor_outage",
        }
    }

    fn node_level(&self) -> bool {
        matches!(
            self,
            ThreatKind::Overheat { .. } | ThreatKind::BatteryDrainAccelerate { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThreat", into = "RawThreat")]
pub struct ThreatEvent {
    pub kind: ThreatKind,
    /// Empty for node-level threats.
    pub targets: Vec<AnchorId>,
    /// Inclusive tick window.
    pub start_tick: u64,
    pub end_tick: u64,
}

/// File form: kind, targets and window plus kind-specific numeric parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawThreat {
    kind: String,
    #[serde(default)]
    targets: Vec<AnchorId>,
    window: [u64; 2],
    #[serde(flatten)]
    params: BTreeMap<String, f64>,
}

struct Params {
    kind: &'static str,
    map: BTreeMap<String, f64>,
}

impl Params {
    fn take(&mut self, name: &'static str, default: f64) -> f64 {
        self.map.remove(name).unwrap_or(default)
    }

    fn check(&self, name: &'static str, value: f64, ok: bool) -> Result<(), ThreatError> {
        if ok && value.is_finite() {
            Ok(())
        } else {
            Err(ThreatError::BadParameter {
                kind: self.kind,
                name,
                value,
            })
        }
    }

    fn finish(self) -> Result<(), ThreatError> {
        match self.map.into_keys().next() {
            Some(name) => Err(ThreatError::UnknownParameter {
                kind: self.kind,
                name,
            }),
            None => Ok(()),
        }
    }
}

pub const DEFAULT_SPOOF_BIAS_M: f64 = 1.0;
pub const DEFAULT_NLOS_EXCESS_DELAY_M: f64 = 0.3;
/// Typical obstacle loss.
pub const DEFAULT_NLOS_LOSS_DB: f64 = 5.0;
pub const DEFAULT_WEAK_SIGNAL_LOSS_DB: f64 = 10.0;
pub const DEFAULT_HEAT_RATE_C_PER_S: f64 = 0.5;
pub const DEFAULT_DRAIN_FACTOR: f64 = 2.0;

impl ThreatKind {
    fn parse(kind: &str, map: BTreeMap<String, f64>) -> Result<Self, String> {
        let name: &'static str = match kind {
            "shr_attack" => "shr_attack",
            "nlos_obstruction" => "nlos_obstruction",
            "weak_signal_drift" => "weak_signal_drift",
            "overheat" => "overheat",
            "battery_drain_accelerate" => "battery_drain_accelerate",
            "anchor_outage" => "anchor_outage",
            other => return Err(format!("unknown threat kind `{other}`")),
        };
        let mut p = Params { kind: name, map };
        let parsed = match name {
            "shr_attack" => {
                let b = p.take("spoof_bias_m", DEFAULT_SPOOF_BIAS_M);
                p.check("spoof_bias_m", b, b >= 0.0)
                    .map(|_| ThreatKind::ShrAttack { spoof_bias_m: b })
            }
            "nlos_obstruction" => {
                let d = p.take("excess_delay_m", DEFAULT_NLOS_EXCESS_DELAY_M);
                let l = p.take("extra_loss_db", DEFAULT_NLOS_LOSS_DB);
                p.check("excess_delay_m", d, d >= 0.0)
                    .and(p.check("extra_loss_db", l, l >= 0.0))
                    .map(|_| ThreatKind::NlosObstruction {
                        excess_delay_m: d,
                        extra_loss_db: l,
                    })
            }
            "weak_signal_drift" => {
                let l = p.take("loss_db", DEFAULT_WEAK_SIGNAL_LOSS_DB);
                p.check("loss_db", l, l >= 0.0)
                    .map(|_| ThreatKind::WeakSignalDrift { loss_db: l })
            }
            "overheat" => {
                let r = p.take("heat_rate_c_per_s", DEFAULT_HEAT_RATE_C_PER_S);
                p.check("heat_rate_c_per_s", r, r > 0.0)
                    .map(|_| ThreatKind::Overheat {
                        heat_rate_c_per_s: r,
                    })
            }
            "battery_drain_accelerate" => {
                let f = p.take("factor", DEFAULT_DRAIN_FACTOR);
                p.check("factor", f, f > 0.0)
                    .map(|_| ThreatKind::BatteryDrainAccelerate { factor: f })
            }
            _ => Ok(ThreatKind::AnchorOutage),
        };
        let parsed = parsed.map_err(|e| e.to_string())?;
        p.finish().map_err(|e| e.to_string())?;
        Ok(parsed)
    }

    fn params(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match *self {
            ThreatKind::ShrAttack { spoof_bias_m } => vec![("spoof_bias_m", spoof_bias_m)],
            ThreatKind::NlosObstruction {
                excess_delay_m,
                extra_loss_db,
            } => vec![
                ("excess_delay_m", excess_delay_m),
                ("extra_loss_db", extra_loss_db),
            ],
            ThreatKind::WeakSignalDrift { loss_db } => vec![("loss_db", loss_db)],
            ThreatKind::Overheat { heat_rate_c_per_s } => {
                vec![("heat_rate_c_per_s", heat_rate_c_per_s)]
            }
            ThreatKind::BatteryDrainAccelerate { factor } => vec![("factor", factor)],
            ThreatKind::AnchorOutage => vec![],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

impl TryFrom<RawThreat> for ThreatEvent {
    type Error = String;

    fn try_from(raw: RawThreat) -> Result<Self, Self::Error> {
        let kind = ThreatKind::parse(&raw.kind, raw.params)?;
        let event = ThreatEvent {
            kind,
            targets: raw.targets,
            start_tick: raw.window[0],
            end_tick: raw.window[1],
        };
        event.validate().map_err(|e| e.to_string())?;
        Ok(event)
    }
}

impl From<ThreatEvent> for RawThreat {
    fn from(e: ThreatEvent) -> Self {
        RawThreat {
            kind: e.kind.name().to_string(),
            params: e.kind.params(),
            targets: e.targets,
            window: [e.start_tick, e.end_tick],
        }
    }
}

impl ThreatEvent {
    pub fn new(
        kind: ThreatKind,
        targets: Vec<AnchorId>,
        start_tick: u64,
        end_tick: u64,
    ) -> Result<Self, ThreatError> {
        let event = Self {
            kind,
            targets,
            start_tick,
            end_tick,
        };
        event.validate()?;
        Ok(event)
    }

    /// Checks everything that does not depend on the anchor set.
    pub fn validate(&self) -> Result<(), ThreatError> {
        if self.start_tick > self.end_tick {
            return Err(ThreatError::InvertedWindow {
                start: self.start_tick,
                end: self.end_tick,
            });
        }
        match (self.kind.node_level(), self.targets.is_empty()) {
            (true, false) => Err(ThreatError::UnexpectedTargets(self.kind.name())),
            (false, true) => Err(ThreatError::MissingTargets(self.kind.name())),
            _ => Ok(()),
        }
    }

    pub fn active(&self, tick: u64) -> bool {
        (self.start_tick..=self.end_tick).contains(&tick)
    }
}

pub fn validate_targets(events: &[ThreatEvent], anchors: &[Anchor]) -> Result<(), ThreatError> {
    for event in events {
        event.validate()?;
        if let Some(unknown) = event
            .targets
            .iter()
            .find(|t| !anchors.iter().any(|a| &a.id == *t))
        {
            return Err(ThreatError::UnknownAnchorTarget(unknown.clone()));
        }
    }
    Ok(())
}

/// Temperature rise from one overheat event: linear while active, then
/// cooling back at the same rate.
fn overheat_offset(rate: f64, event: &ThreatEvent, clock: SimClock) -> f64 {
    let dt = clock.tick_interval;
    let tick = clock.tick_index;
    if tick <= event.start_tick {
        return 0.0;
    }
    let heating_ticks = tick.min(event.end_tick) - event.start_tick;
    let peak = rate * heating_ticks as f64 * dt;
    if tick <= event.end_tick {
        peak
    } else {
        (peak - rate * (tick - event.end_tick) as f64 * dt).max(0.0)
    }
}

/// Applies every event to the unthreatened channels and node state.
///
/// Identical events count once. Overlapping distinct events of one kind on
/// the same link take the strongest parameter; node-level effects add up
/// (heating) or multiply (drain).
pub fn apply_threats(
    base_channels: &BTreeMap<AnchorId, ChannelRealization>,
    node: &NodeState,
    events: &[ThreatEvent],
    clock: SimClock,
) -> (BTreeMap<AnchorId, ChannelRealization>, NodeState) {
    let mut unique: Vec<&ThreatEvent> = Vec::new();
    for e in events {
        if !unique.contains(&e) {
            unique.push(e);
        }
    }

    let mut channels = base_channels.clone();
    let mut node = node.clone();
    let mut heating = 0.0;
    for event in &unique {
        if let ThreatKind::Overheat { heat_rate_c_per_s } = event.kind {
            heating += overheat_offset(heat_rate_c_per_s, event, clock);
        }
    }
    node.temperature += heating;

    let tick = clock.tick_index;
    let active: Vec<&&ThreatEvent> = unique.iter().filter(|e| e.active(tick)).collect();
    for event in &active {
        if let ThreatKind::BatteryDrainAccelerate { factor } = event.kind {
            node.draw_multiplier *= factor;
        }
    }

    for (id, ch) in channels.iter_mut() {
        let base = &base_channels[id];
        let mut spoof: Option<f64> = None;
        let mut excess: Option<f64> = None;
        let mut obstacle_loss = 0.0f64;
        let mut drift_loss = 0.0f64;
        for event in active.iter().filter(|e| e.targets.contains(id)) {
            match event.kind {
                ThreatKind::ShrAttack { spoof_bias_m } => {
                    spoof = Some(spoof.map_or(spoof_bias_m, |s| s.max(spoof_bias_m)));
                }
                ThreatKind::NlosObstruction {
                    excess_delay_m,
                    extra_loss_db,
                } => {
                    excess = Some(excess.map_or(excess_delay_m, |e| e.max(excess_delay_m)));
                    obstacle_loss = obstacle_loss.max(extra_loss_db);
                }
                ThreatKind::WeakSignalDrift { loss_db } => {
                    let span = (event.end_tick - event.start_tick).max(1) as f64;
                    let progress = if event.end_tick == event.start_tick {
                        1.0
                    } else {
                        (tick - event.start_tick) as f64 / span
                    };
                    drift_loss = drift_loss.max(loss_db * progress);
                }
                ThreatKind::AnchorOutage => ch.outage = true,
                ThreatKind::Overheat { .. } | ThreatKind::BatteryDrainAccelerate { .. } => {}
            }
        }
        if let Some(excess) = excess {
            ch.condition = ChannelCondition::Nlos;
            ch.nlos_excess_delay = base.nlos_excess_delay + excess;
        }
        // An active header attack dominates the received CIR.
        if let Some(bias) = spoof {
            ch.condition = ChannelCondition::ShrAttacked;
            ch.spoof_bias = bias;
        }
        if obstacle_loss > 0.0 || drift_loss > 0.0 {
            ch.rssi_mean = base.rssi_mean - obstacle_loss - drift_loss;
        }
    }
    (channels, node)
}

/// Battery voltage as a function of consumed charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve", into = "RawCurve")]
pub struct DischargeCurve {
    /// (consumed charge in [0, 1], millivolts)
    points: Vec<(f64, f64)>,
    temperature_label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurve {
    points: Vec<[f64; 2]>,
    temperature_label: String,
}

impl TryFrom<RawCurve> for DischargeCurve {
    type Error = CurveError;

    fn try_from(raw: RawCurve) -> Result<Self, Self::Error> {
        DischargeCurve::new(
            raw.points.iter().map(|p| (p[0], p[1])).collect(),
            raw.temperature_label,
        )
    }
}

impl From<DischargeCurve> for RawCurve {
    fn from(c: DischargeCurve) -> Self {
        RawCurve {
            points: c.points.iter().map(|&(q, v)| [q, v]).collect(),
            temperature_label: c.temperature_label,
        }
    }
}

impl DischargeCurve {
    pub fn new(points: Vec<(f64, f64)>, temperature_label: String) -> Result<Self, CurveError> {
        if points.len() < 2 {
            return Err(CurveError::TooShort);
        }
        let (first, last) = (points[0], points[points.len() - 1]);
        if first.0 != 0.0 || last.0 != 1.0 {
            return Err(CurveError::BadCharge);
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(CurveError::BadCharge);
            }
            if !(w[1].1 < w[0].1) {
                return Err(CurveError::NotDecreasing);
            }
        }
        if first.1 < 3360.0 || last.1 > 2800.0 {
            return Err(CurveError::Coverage);
        }
        Ok(Self {
            points,
            temperature_label,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn temperature_label(&self) -> &str {
        &self.temperature_label
    }
}

impl Default for DischargeCurve {
    /// Approximate 18650 Li-ion cell at 45 °C. With the default 10 h runtime,
    /// 3360 mV leaves 60 min and 3092 mV leaves 15 min.
    fn default() -> Self {
        let points = vec![
            (0.0, 4150.0),
            (0.05, 4000.0),
            (0.2, 3850.0),
            (0.4, 3700.0),
            (0.6, 3600.0),
            (0.8, 3480.0),
            (0.9, 3360.0),
            (0.95, 3220.0),
            (0.975, 3092.0),
            (0.99, 2950.0),
            (1.0, 2800.0),
        ];
        Self::new(points, "45C".into()).expect("default curve is valid")
    }
}

/// Piecewise-linear interpolation, clamped to the curve ends.
pub fn battery_voltage(charge_consumed: f64, curve: &DischargeCurve) -> f64 {
    let pts = &curve.points;
    if charge_consumed <= pts[0].0 {
        return pts[0].1;
    }
    for w in pts.windows(2) {
        let ((q0, v0), (q1, v1)) = (w[0], w[1]);
        if charge_consumed <= q1 {
            return v0 + (v1 - v0) * (charge_consumed - q0) / (q1 - q0);
        }
    }
    pts[pts.len() - 1].1
}

/// Node energy model: a full charge lasts `full_runtime_s` at nominal draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryConfig {
    pub curve: DischargeCurve,
    pub full_runtime_s: f64,
    pub initial_consumed: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            curve: DischargeCurve::default(),
            full_runtime_s: 36_000.0,
            initial_consumed: 0.0,
        }
    }
}

impl BatteryConfig {
    /// Consumed charge after one more tick at `draw_multiplier` times the nominal draw.
    pub fn step(&self, consumed: f64, draw_multiplier: f64, dt: f64) -> f64 {
        (consumed + draw_multiplier * dt / self.full_runtime_s).min(1.0)
    }

    /// Minutes left at nominal draw.
    pub fn remaining_minutes(&self, consumed: f64) -> f64 {
        (1.0 - consumed).max(0.0) * self.full_runtime_s / 60.0
    }
}
