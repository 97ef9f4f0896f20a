use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trace::TraceRow;
use super::HarnessError;
use crate::trust::AssessmentMode;

/// First tick at which each index fell below the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexCrossings {
    pub rel: Option<u64>,
    pub res: Option<u64>,
    pub sec: Option<u64>,
    pub privacy: Option<u64>,
    pub overall: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: AssessmentMode,
    pub ticks: usize,
    pub threshold: f64,
    /// Over ticks with a position estimate.
    pub rmse_m: Option<f64>,
    /// Over ticks with an estimate and `I >= threshold`.
    pub rmse_trusted_m: Option<f64>,
    /// Share of ticks with `I < threshold`.
    pub fraction_untrusted: f64,
    /// Mean security index over trusted ticks.
    pub mean_sec_trusted: Option<f64>,
    pub first_untrusted_tick: IndexCrossings,
    /// First tick at which each indicator fell below the threshold.
    pub first_indicator_crossing: BTreeMap<String, Option<u64>>,
    pub localization_failure_ticks: Vec<u64>,
}

fn rmse(errors: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, sq) = errors.fold((0usize, 0.0), |(n, s), e| (n + 1, s + e * e));
    (n > 0).then(|| (sq / n as f64).sqrt())
}

fn first_below(rows: &[TraceRow], threshold: f64, value: impl Fn(&TraceRow) -> f64) -> Option<u64> {
    rows.iter().find(|r| value(r) < threshold).map(|r| r.tick)
}

pub fn summarize(rows: &[TraceRow], threshold: f64) -> Result<RunSummary, HarnessError> {
    let first = rows.first().ok_or(HarnessError::EmptyTrace)?;
    let mode = first.mode;
    if rows.iter().any(|r| r.mode != mode) {
        return Err(HarnessError::Trace {
            message: "trace mixes assessment modes".into(),
        });
    }
    let trusted = |r: &&TraceRow| r.indices.overall >= threshold;
    let untrusted = rows
        .iter()
        .filter(|r| r.indices.overall < threshold)
        .count();
    let trusted_rows: Vec<&TraceRow> = rows.iter().filter(trusted).collect();
    let mean_sec_trusted = (!trusted_rows.is_empty()).then(|| {
        trusted_rows.iter().map(|r| r.indices.sec).sum::<f64>() / trusted_rows.len() as f64
    });

    let mut first_indicator_crossing = BTreeMap::new();
    for (k, (name, _)) in first.indicators.named().iter().enumerate() {
        let tick = first_below(rows, threshold, |r| r.indicators.named()[k].1);
        first_indicator_crossing.insert(name.to_string(), tick);
    }

    Ok(RunSummary {
        mode,
        ticks: rows.len(),
        threshold,
        rmse_m: rmse(rows.iter().filter_map(TraceRow::position_error)),
        rmse_trusted_m: rmse(trusted_rows.iter().filter_map(|r| r.position_error())),
        fraction_untrusted: untrusted as f64 / rows.len() as f64,
        mean_sec_trusted,
        first_untrusted_tick: IndexCrossings {
            rel: first_below(rows, threshold, |r| r.indices.rel),
            res: first_below(rows, threshold, |r| r.indices.res),
            sec: first_below(rows, threshold, |r| r.indices.sec),
            privacy: first_below(rows, threshold, |r| r.indices.privacy),
            overall: first_below(rows, threshold, |r| r.indices.overall),
        },
        first_indicator_crossing,
        localization_failure_ticks: rows
            .iter()
            .filter(|r| r.estimate.is_none())
            .map(|r| r.tick)
            .collect(),
    })
}
