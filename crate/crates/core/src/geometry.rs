//! Shared domain types: positions, anchors, node state and the simulation clock.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("coordinate is not finite: ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
    #[error("duplicate anchor id `{0}`")]
    DuplicateAnchor(AnchorId),
}

/// A point in the local 2D frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position2D {
    pub x: f64,
    pub y: f64,
}

impl Position2D {
    pub fn new(x: f64, y: f64) -> Result<Self, GeometryError> {
        if x.is_finite() && y.is_finite() {
            Ok(Self { x, y })
        } else {
            Err(GeometryError::NonFinite { x, y })
        }
    }

    pub const fn origin() -> Self {
        Self { x: 0.0, y: 0.0 }
    }

    /// Linear interpolation, `t = 0` at `self` and `t = 1` at `other`.
    pub fn lerp(self, other: Position2D, t: f64) -> Position2D {
        Position2D {
            x: self.x + (other.x - self.x) * t,
            y: self.y + (other.y - self.y) * t,
        }
    }
}

impl TryFrom<[f64; 2]> for Position2D {
    type Error = GeometryError;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        Position2D::new(v[0], v[1])
    }
}

impl From<Position2D> for [f64; 2] {
    fn from(p: Position2D) -> Self {
        [p.x, p.y]
    }
}

impl fmt::Display for Position2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3})", self.x, self.y)
    }
}

/// Euclidean distance in meters.
pub fn distance(a: Position2D, b: Position2D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnchorId(pub String);

impl AnchorId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AnchorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AnchorId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: AnchorId,
    pub position: Position2D,
}

impl Anchor {
    pub fn new(id: impl Into<AnchorId>, position: Position2D) -> Self {
        Self {
            id: id.into(),
            position,
        }
    }
}

impl From<String> for AnchorId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Fails on the first repeated id.
pub fn ensure_unique_ids<'a>(
    ids: impl IntoIterator<Item = &'a AnchorId>,
) -> Result<(), GeometryError> {
    let mut seen = std::collections::BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(GeometryError::DuplicateAnchor(id.clone()));
        }
    }
    Ok(())
}

/// Physical state of the node at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub true_position: Position2D,
    /// Degrees Celsius.
    pub temperature: f64,
    /// Millivolts.
    pub battery_voltage: f64,
    /// Remaining charge as a fraction of full capacity.
    pub battery_charge: f64,
    /// Node clock reading at true time zero, seconds.
    pub clock_offset: f64,
    /// Fractional frequency error of the node clock (10 ppm = 1e-5).
    pub clock_drift: f64,
    /// Scale applied to the nominal energy draw during this tick.
    pub draw_multiplier: f64,
}

impl NodeState {
    /// An ideal node: 25 °C, full battery, perfect clock.
    pub fn ideal(true_position: Position2D) -> Self {
        Self {
            true_position,
            temperature: 25.0,
            battery_voltage: 4150.0,
            battery_charge: 1.0,
            clock_offset: 0.0,
            clock_drift: 0.0,
            draw_multiplier: 1.0,
        }
    }

    /// Checks the value invariants (charge in [0,1], positive voltage, finite temperature).
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.battery_charge)
            && self.battery_voltage > 0.0
            && self.temperature.is_finite()
            && self.clock_offset.is_finite()
            && self.clock_drift.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub tick_index: u64,
    /// Seconds between ticks, always positive.
    pub tick_interval: f64,
}

impl SimClock {
    pub fn new(tick_index: u64, tick_interval: f64) -> Option<Self> {
        (tick_interval > 0.0 && tick_interval.is_finite()).then_some(Self {
            tick_index,
            tick_interval,
        })
    }

    pub fn time(&self) -> f64 {
        self.tick_index as f64 * self.tick_interval
    }
}
