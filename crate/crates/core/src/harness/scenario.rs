//! Scenario files (TOML) and their validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::anomaly::CalibrationModel;
use crate::geometry::{ensure_unique_ids, Anchor, AnchorId, Position2D};
use crate::ranging::{CirProfile, PathLossParams, PerCurve, ProfileRange, RadioModel};
use crate::threats::{validate_targets, BatteryConfig, ThreatEvent};
use crate::trust::{AssessmentMode, SecuritySchemes, SigmoidParams, TrustConfig};

/// Scenarios shipped with the binary: (name, file contents).
pub const BUNDLED: [(&str, &str); 3] = [
    ("benign", include_str!("../../scenarios/benign.toml")),
    (
        "out_and_back",
        include_str!("../../scenarios/out_and_back.toml"),
    ),
    (
        "shr_attack",
        include_str!("../../scenarios/shr_attack.toml"),
    ),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Basic,
    Sequential,
    Both,
}

impl ModeSelection {
    pub fn modes(&self) -> Vec<AssessmentMode> {
        match self {
            ModeSelection::Basic => vec![AssessmentMode::Basic],
            ModeSelection::Sequential => vec![AssessmentMode::Sequential],
            ModeSelection::Both => vec![AssessmentMode::Basic, AssessmentMode::Sequential],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub id: AnchorId,
    pub position: Position2D,
    /// Position the anchor reports; differs from `position` for a
    /// misconfigured or malicious anchor.
    pub announced_position: Position2D,
    pub clock_offset_s: f64,
    pub clock_drift_ppm: f64,
}

impl AnchorSpec {
    pub fn true_anchor(&self) -> Anchor {
        Anchor::new(self.id.clone(), self.position)
    }

    pub fn announced_anchor(&self) -> Anchor {
        Anchor::new(self.id.clone(), self.announced_position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub tick: u64,
    pub position: Position2D,
}

/// Piecewise-linear node path; the node holds still before the first and
/// after the last waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory(Vec<Waypoint>);

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Self, String> {
        if waypoints.is_empty() {
            return Err("trajectory needs at least one waypoint".into());
        }
        if waypoints.windows(2).any(|w| w[1].tick <= w[0].tick) {
            return Err("trajectory ticks must be strictly increasing".into());
        }
        Ok(Self(waypoints))
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.0
    }

    pub fn position_at(&self, tick: u64) -> Position2D {
        let w = &self.0;
        if tick <= w[0].tick {
            return w[0].position;
        }
        for pair in w.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if tick <= b.tick {
                let t = (tick - a.tick) as f64 / (b.tick - a.tick) as f64;
                return a.position.lerp(b.position, t);
            }
        }
        w[w.len() - 1].position
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeSettings {
    pub temperature_c: f64,
    pub clock_offset_s: f64,
    pub clock_drift_ppm: f64,
}

impl Default for NodeSettings {
    fn default() -> Self {
        Self {
            temperature_c: 25.0,
            clock_offset_s: 0.0,
            clock_drift_ppm: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioSettings {
    pub timestamp_sigma_s: f64,
    pub rssi_sigma_db: f64,
    pub anchor_delay_s: f64,
    pub node_delay_s: f64,
    pub per: PerCurve,
    pub path_loss: PathLossParams,
    /// Multipath environment of every line-of-sight link.
    pub cir: CirProfile,
}

impl Default for RadioSettings {
    fn default() -> Self {
        Self {
            timestamp_sigma_s: RadioModel::default().timestamp_sigma_s,
            rssi_sigma_db: 1.0,
            anchor_delay_s: 250e-6,
            node_delay_s: 250e-6,
            per: PerCurve::default(),
            path_loss: PathLossParams::default(),
            cir: CirProfile::default(),
        }
    }
}

impl RadioSettings {
    pub fn model(&self) -> RadioModel {
        RadioModel {
            timestamp_sigma_s: self.timestamp_sigma_s,
            per: self.per,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.timestamp_sigma_s >= 0.0 && self.timestamp_sigma_s.is_finite()) {
            return Err("radio.timestamp_sigma_s must be non-negative".into());
        }
        if !(self.rssi_sigma_db >= 0.0 && self.rssi_sigma_db.is_finite()) {
            return Err("radio.rssi_sigma_db must be non-negative".into());
        }
        if !(self.anchor_delay_s > 0.0 && self.node_delay_s > 0.0) {
            return Err("radio response delays must be positive".into());
        }
        self.per.validate().map_err(|e| format!("radio.per: {e}"))?;
        self.path_loss
            .validate()
            .map_err(|e| format!("radio.path_loss: {e}"))?;
        self.cir.validate().map_err(|e| format!("radio.cir: {e}"))
    }
}

/// Where the anomaly detector's model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorSpec {
    /// Calibrate on synthetic line-of-sight CIRs at startup.
    Calibrate {
        samples: usize,
        seed: u64,
        environments: ProfileRange,
    },
    Model(CalibrationModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub description: String,
    pub tick_interval_s: f64,
    pub total_ticks: u64,
    pub seed: u64,
    pub mode: ModeSelection,
    pub anchors: Vec<AnchorSpec>,
    pub trajectory: Trajectory,
    pub node: NodeSettings,
    pub radio: RadioSettings,
    pub trust: TrustConfig,
    pub schemes: SecuritySchemes,
    pub detector: DetectorSpec,
    pub threats: Vec<ThreatEvent>,
    pub battery: BatteryConfig,
}

impl ScenarioConfig {
    pub fn announced_anchors(&self) -> Vec<Anchor> {
        self.anchors
            .iter()
            .map(AnchorSpec::announced_anchor)
            .collect()
    }
}

// File schema. Everything except name, seed, timing, anchors and trajectory
// has a default.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    description: String,
    tick_interval_s: f64,
    total_ticks: u64,
    seed: u64,
    #[serde(default = "default_mode")]
    mode: ModeSelection,
    anchors: Vec<AnchorEntry>,
    trajectory: Vec<Waypoint>,
    #[serde(default)]
    node: NodeSettings,
    #[serde(default)]
    radio: RadioSettings,
    #[serde(default)]
    trust: TrustSection,
    #[serde(default)]
    schemes: SecuritySchemes,
    #[serde(default)]
    detector: DetectorSection,
    #[serde(default)]
    threats: Vec<ThreatEvent>,
    #[serde(default)]
    battery: BatteryConfig,
}

fn default_mode() -> ModeSelection {
    ModeSelection::Both
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorEntry {
    id: AnchorId,
    position: Position2D,
    announced_position: Option<Position2D>,
    #[serde(default)]
    clock_offset_s: f64,
    #[serde(default)]
    clock_drift_ppm: f64,
}

/// Sigmoid pairs are validated after parsing so a degenerate pair is
/// reported as a validation error rather than a syntax error.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct Pair {
    low: f64,
    high: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrustSection {
    temp: Option<Pair>,
    bat: Option<Pair>,
    rssi: Option<Pair>,
    pdop: Option<Pair>,
    na: Option<Pair>,
    threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectorSection {
    calibration_samples: Option<usize>,
    calibration_seed: Option<u64>,
    environments: Option<ProfileRange>,
    /// JSON model document, relative to the scenario file.
    model_file: Option<PathBuf>,
    model: Option<CalibrationModel>,
}

pub const DEFAULT_CALIBRATION_SAMPLES: usize = 500;

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Reads a scenario from a path, or a bundled scenario by name when no such
/// file exists.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    if !path.exists() {
        if let Some(text) = path.to_str().and_then(bundled) {
            return parse_scenario(text, &path.display().to_string(), None);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text, &path.display().to_string(), path.parent())
}

/// `origin` labels errors; `base_dir` resolves `detector.model_file`.
pub fn parse_scenario(
    text: &str,
    origin: &str,
    base_dir: Option<&Path>,
) -> Result<ScenarioConfig, HarnessError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        HarnessError::Parse {
            origin: origin.to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let invalid = |message: String| HarnessError::Validation {
        origin: origin.to_string(),
        message,
    };

    if !(file.tick_interval_s > 0.0 && file.tick_interval_s.is_finite()) {
        return Err(invalid("tick_interval_s must be positive".into()));
    }
    if file.total_ticks == 0 {
        return Err(invalid("total_ticks must be at least 1".into()));
    }
    if file.anchors.is_empty() {
        return Err(invalid("at least one anchor is required".into()));
    }
    let anchors: Vec<AnchorSpec> = file
        .anchors
        .into_iter()
        .map(|a| AnchorSpec {
            announced_position: a.announced_position.unwrap_or(a.position),
            id: a.id,
            position: a.position,
            clock_offset_s: a.clock_offset_s,
            clock_drift_ppm: a.clock_drift_ppm,
        })
        .collect();
    let true_anchors: Vec<Anchor> = anchors.iter().map(AnchorSpec::true_anchor).collect();
    ensure_unique_ids(true_anchors.iter().map(|a| &a.id)).map_err(|e| invalid(e.to_string()))?;
    let clocks_ok = anchors
        .iter()
        .all(|a| a.clock_offset_s.is_finite() && a.clock_drift_ppm.abs() < 1e3);
    if !clocks_ok || file.node.clock_drift_ppm.abs() >= 1e3 || !file.node.clock_offset_s.is_finite()
    {
        return Err(invalid(
            "clock offsets must be finite and drifts below 1000 ppm".into(),
        ));
    }
    if !file.node.temperature_c.is_finite() {
        return Err(invalid("node.temperature_c must be finite".into()));
    }
    let trajectory = Trajectory::new(file.trajectory).map_err(invalid)?;
    file.radio.validate().map_err(invalid)?;
    validate_targets(&file.threats, &true_anchors).map_err(|e| invalid(e.to_string()))?;

    let battery = file.battery;
    if !(battery.full_runtime_s > 0.0) || !(0.0..=1.0).contains(&battery.initial_consumed) {
        return Err(invalid(
            "battery.full_runtime_s must be positive and initial_consumed in [0, 1]".into(),
        ));
    }

    let trust = resolve_trust(&file.trust).map_err(invalid)?;
    let detector = resolve_detector(file.detector, file.seed, base_dir, origin)?;

    Ok(ScenarioConfig {
        name: file.name,
        description: file.description,
        tick_interval_s: file.tick_interval_s,
        total_ticks: file.total_ticks,
        seed: file.seed,
        mode: file.mode,
        anchors,
        trajectory,
        node: file.node,
        radio: file.radio,
        trust,
        schemes: file.schemes,
        detector,
        threats: file.threats,
        battery,
    })
}

fn resolve_trust(section: &TrustSection) -> Result<TrustConfig, String> {
    let mut config = TrustConfig::default();
    let slots: [(&str, Option<Pair>, &mut SigmoidParams); 5] = [
        ("temp", section.temp, &mut config.temp),
        ("bat", section.bat, &mut config.bat),
        ("rssi", section.rssi, &mut config.rssi),
        ("pdop", section.pdop, &mut config.pdop),
        ("na", section.na, &mut config.na),
    ];
    for (name, pair, slot) in slots {
        if let Some(p) = pair {
            *slot = SigmoidParams::new(p.low, p.high).map_err(|e| format!("trust.{name}: {e}"))?;
        }
    }
    if let Some(t) = section.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(format!("trust.threshold must lie in [0, 1], got {t}"));
        }
        config.threshold = t;
    }
    Ok(config)
}

fn resolve_detector(
    section: DetectorSection,
    seed: u64,
    base_dir: Option<&Path>,
    origin: &str,
) -> Result<DetectorSpec, HarnessError> {
    let invalid = |message: &str| HarnessError::Validation {
        origin: origin.to_string(),
        message: message.to_string(),
    };
    let calibrating = section.calibration_samples.is_some()
        || section.calibration_seed.is_some()
        || section.environments.is_some();
    match (section.model, section.model_file) {
        (Some(_), Some(_)) => Err(invalid(
            "detector: give either model or model_file, not both",
        )),
        (Some(_), None) | (None, Some(_)) if calibrating => Err(invalid(
            "detector: calibration settings cannot be combined with a stored model",
        )),
        (Some(model), None) => Ok(DetectorSpec::Model(model)),
        (None, Some(rel)) => {
            let path = base_dir.map_or(rel.clone(), |d| d.join(&rel));
            let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let model: CalibrationModel =
                serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
                    origin: path.display().to_string(),
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                })?;
            Ok(DetectorSpec::Model(model))
        }
        (None, None) => {
            let samples = section
                .calibration_samples
                .unwrap_or(DEFAULT_CALIBRATION_SAMPLES);
            if samples < crate::anomaly::MIN_CALIBRATION_SAMPLES {
                return Err(invalid(
                    "detector.calibration_samples is below the minimum of 30",
                ));
            }
            let environments = section.environments.unwrap_or_default();
            environments
                .validate()
                .map_err(|e| invalid(&format!("detector.environments: {e}")))?;
            Ok(DetectorSpec::Calibrate {
                samples,
                seed: section.calibration_seed.unwrap_or(seed),
                environments,
            })
        }
    }
}
