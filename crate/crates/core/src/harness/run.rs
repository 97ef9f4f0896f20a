use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scenario::{DetectorSpec, ScenarioConfig};
use super::summary::{summarize, RunSummary};
use super::trace::{
    status_code, write_trace, AnchorCell, IndexColumns, IndicatorColumns, TraceRow,
};
use super::HarnessError;
use crate::anomaly::{calibrate, synthetic_trusted_set, CalibrationModel};
use crate::geometry::{distance, Anchor, AnchorId, NodeState, SimClock};
use crate::ranging::{simulate_exchange, ChannelRealization, ExchangeTiming, RangingRecord};
use crate::threats::{apply_threats, battery_voltage};
use crate::trust::{assess, Assessment, AssessmentMode, TickMeasurements};

const PPM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub mode: AssessmentMode,
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
}

pub fn build_detector(config: &ScenarioConfig) -> Result<CalibrationModel, HarnessError> {
    match &config.detector {
        DetectorSpec::Model(model) => Ok(model.clone()),
        DetectorSpec::Calibrate {
            samples,
            seed,
            environments,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let set = synthetic_trusted_set(*samples, environments, &mut rng);
            calibrate(&set).map_err(|e| HarnessError::Validation {
                origin: config.name.clone(),
                message: format!("detector calibration failed: {e}"),
            })
        }
    }
}

/// Physical state of one tick, shared by every assessment mode.
struct TickPhysics {
    node: NodeState,
    records: Vec<RangingRecord>,
}

fn simulate_tick(
    config: &ScenarioConfig,
    tick: u64,
    consumed: f64,
    rng: &mut ChaCha8Rng,
) -> TickPhysics {
    let clock = SimClock::new(tick, config.tick_interval_s).expect("interval validated");
    let position = config.trajectory.position_at(tick);
    let node = NodeState {
        true_position: position,
        temperature: config.node.temperature_c,
        battery_voltage: battery_voltage(consumed, &config.battery.curve),
        battery_charge: 1.0 - consumed,
        clock_offset: config.node.clock_offset_s,
        clock_drift: config.node.clock_drift_ppm * PPM,
        draw_multiplier: 1.0,
    };
    let radio = &config.radio;
    let base: BTreeMap<AnchorId, ChannelRealization> = config
        .anchors
        .iter()
        .map(|a| {
            let ch = ChannelRealization::line_of_sight(
                distance(position, a.position),
                &radio.path_loss,
                radio.rssi_sigma_db,
                radio.cir,
            );
            (a.id.clone(), ch)
        })
        .collect();
    let (channels, node) = apply_threats(&base, &node, &config.threats, clock);

    let model = radio.model();
    let records = config
        .anchors
        .iter()
        .map(|a| {
            // Each link gets its own stream so that its draws never shift
            // another link's.
            let mut link_rng = ChaCha8Rng::from_rng(&mut *rng);
            let timing = ExchangeTiming {
                anchor_clock_offset: a.clock_offset_s,
                anchor_clock_drift: a.clock_drift_ppm * PPM,
                ..ExchangeTiming::new(clock.time(), radio.anchor_delay_s, radio.node_delay_s)
            };
            simulate_exchange(
                &node,
                &a.true_anchor(),
                &channels[&a.id],
                &timing,
                &model,
                &mut link_rng,
            )
        })
        .collect();
    TickPhysics { node, records }
}

fn row(tick: u64, time_s: f64, physics: &TickPhysics, a: &Assessment) -> TraceRow {
    let ind = &a.indicators;
    let estimate = a
        .estimate
        .as_ref()
        .map(|e| e.position)
        .map_err(Clone::clone);
    TraceRow {
        mode: a.mode,
        tick,
        time_s,
        true_position: physics.node.true_position,
        estimate: estimate.as_ref().ok().copied(),
        loc_status: status_code(&estimate).to_string(),
        residual_m: a.estimate.as_ref().ok().map(|e| e.residual_norm),
        m_temp: a.metrics.temperature,
        m_bat: a.metrics.battery_voltage,
        m_pdop: a.metrics.pdop,
        m_na: a.metrics.na,
        indicators: IndicatorColumns {
            temp: ind.node.temp,
            bat: ind.node.bat,
            ml: ind.link_min.ml,
            rssi: ind.link_min.rssi,
            pdop: ind.system.pdop,
            na: ind.system.na,
            enc: ind.system.enc,
            auth: ind.system.auth,
            sr: ind.system.sr,
            da: ind.system.da,
        },
        indices: IndexColumns {
            rel: a.report.rel,
            res: a.report.res,
            sec: a.report.sec,
            privacy: a.report.privacy,
            overall: a.report.overall,
        },
        n_reachable: a.links.len(),
        anchors: physics
            .records
            .iter()
            .map(|r| {
                let link = a.links.get(&r.anchor_id);
                AnchorCell {
                    id: r.anchor_id.clone(),
                    range: a.ranges.get(&r.anchor_id).copied(),
                    rssi: r.rssi,
                    success: r.success,
                    t_ml: link.map(|l| l.ml),
                    t_rssi: link.map(|l| l.rssi),
                    selected: a.selected.contains(&r.anchor_id),
                }
            })
            .collect(),
    }
}

/// Runs every requested mode over the same simulated measurements.
pub fn run(config: &ScenarioConfig) -> Result<Vec<RunOutput>, HarnessError> {
    let detector = build_detector(config)?;
    let modes = config.mode.modes();
    let anchors: Vec<Anchor> = config.announced_anchors();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows: Vec<Vec<TraceRow>> = vec![Vec::new(); modes.len()];
    let mut consumed = config.battery.initial_consumed;

    for tick in 0..config.total_ticks {
        let physics = simulate_tick(config, tick, consumed, &mut rng);
        let measured = TickMeasurements {
            node: &physics.node,
            anchors: &anchors,
            records: &physics.records,
            schemes: config.schemes,
        };
        let time_s = tick as f64 * config.tick_interval_s;
        for (mode, out) in modes.iter().zip(rows.iter_mut()) {
            let assessment = assess(&measured, *mode, &config.trust, &detector);
            out.push(row(tick, time_s, &physics, &assessment));
        }
        consumed = config.battery.step(
            consumed,
            physics.node.draw_multiplier,
            config.tick_interval_s,
        );
    }

    modes
        .into_iter()
        .zip(rows)
        .map(|(mode, rows)| {
            let summary = summarize(&rows, config.trust.threshold)?;
            Ok(RunOutput {
                mode,
                rows,
                summary,
            })
        })
        .collect()
}

/// Writes `trace_<mode>.csv`, `summary_<mode>.json` and the resolved
/// scenario `scenario_resolved.json` into `dir`.
pub fn write_outputs(
    config: &ScenarioConfig,
    outputs: &[RunOutput],
    dir: &Path,
) -> Result<(), HarnessError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source: std::io::Error| HarnessError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let resolved = dir.join("scenario_resolved.json");
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    std::fs::write(&resolved, json + "\n").map_err(io(&resolved))?;
    for out in outputs {
        let trace = dir.join(format!("trace_{}.csv", out.mode.as_str()));
        let file = std::fs::File::create(&trace).map_err(io(&trace))?;
        write_trace(&out.rows, std::io::BufWriter::new(file))
            .map_err(|e| io(&trace)(std::io::Error::other(e)))?;
        let summary = dir.join(format!("summary_{}.json", out.mode.as_str()));
        let json = serde_json::to_string_pretty(&out.summary).expect("summary serializes");
        std::fs::write(&summary, json + "\n").map_err(io(&summary))?;
    }
    Ok(())
}
