//! Trace rows and their CSV form.
//!
//! Columns, in order: the fixed block in [`FIXED_COLUMNS`], then for every
//! anchor (scenario order) `<id>_range`, `<id>_rssi`, `<id>_success`,
//! `<id>_t_ml`, `<id>_t_rssi`, `<id>_selected`. Empty cells mean "not
//! available". Numbers use the shortest decimal form that reads back to the
//! same `f64`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::geometry::{AnchorId, Position2D};
use crate::localization::LocalizationError;
use crate::trust::AssessmentMode;

pub const FIXED_COLUMNS: [&str; 30] = [
    "mode",
    "tick",
    "time_s",
    "true_x",
    "true_y",
    "est_x",
    "est_y",
    "loc_status",
    "residual_m",
    "m_temp",
    "m_bat",
    "m_pdop",
    "m_na",
    "t_temp",
    "t_bat",
    "t_ml",
    "t_rssi",
    "t_pdop",
    "t_na",
    "t_enc",
    "t_auth",
    "t_sr",
    "t_da",
    "i_rel",
    "i_res",
    "i_sec",
    "i_priv",
    "i",
    "n_reachable",
    "n_selected",
];

const ANCHOR_SUFFIXES: [&str; 6] = ["range", "rssi", "success", "t_ml", "t_rssi", "selected"];

/// `ok` or the reason localization failed.
pub fn status_code(result: &Result<Position2D, LocalizationError>) -> &'static str {
    match result {
        Ok(_) => "ok",
        Err(LocalizationError::InsufficientAnchors(_)) => "insufficient_anchors",
        Err(LocalizationError::DegenerateGeometry) => "degenerate_geometry",
        Err(LocalizationError::UnknownAnchor(_)) => "unknown_anchor",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorColumns {
    pub temp: f64,
    pub bat: f64,
    pub ml: f64,
    pub rssi: f64,
    pub pdop: f64,
    pub na: f64,
    pub enc: f64,
    pub auth: f64,
    pub sr: f64,
    pub da: f64,
}

impl IndicatorColumns {
    pub fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("t_temp", self.temp),
            ("t_bat", self.bat),
            ("t_ml", self.ml),
            ("t_rssi", self.rssi),
            ("t_pdop", self.pdop),
            ("t_na", self.na),
            ("t_enc", self.enc),
            ("t_auth", self.auth),
            ("t_sr", self.sr),
            ("t_da", self.da),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexColumns {
    pub rel: f64,
    pub res: f64,
    pub sec: f64,
    pub privacy: f64,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorCell {
    pub id: AnchorId,
    pub range: Option<f64>,
    pub rssi: f64,
    pub success: bool,
    pub t_ml: Option<f64>,
    pub t_rssi: Option<f64>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub mode: AssessmentMode,
    pub tick: u64,
    pub time_s: f64,
    pub true_position: Position2D,
    pub estimate: Option<Position2D>,
    pub loc_status: String,
    pub residual_m: Option<f64>,
    pub m_temp: f64,
    pub m_bat: f64,
    pub m_pdop: Option<f64>,
    pub m_na: usize,
    pub indicators: IndicatorColumns,
    pub indices: IndexColumns,
    pub n_reachable: usize,
    pub anchors: Vec<AnchorCell>,
}

impl TraceRow {
    pub fn position_error(&self) -> Option<f64> {
        self.estimate
            .map(|e| crate::geometry::distance(e, self.true_position))
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

pub fn header(anchor_ids: &[AnchorId]) -> Vec<String> {
    let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|c| c.to_string()).collect();
    for id in anchor_ids {
        cols.extend(ANCHOR_SUFFIXES.iter().map(|s| format!("{id}_{s}")));
    }
    cols
}

fn record(row: &TraceRow) -> Vec<String> {
    let mut cells = vec![
        row.mode.as_str().to_string(),
        row.tick.to_string(),
        num(row.time_s),
        num(row.true_position.x),
        num(row.true_position.y),
        opt(row.estimate.map(|p| p.x)),
        opt(row.estimate.map(|p| p.y)),
        row.loc_status.clone(),
        opt(row.residual_m),
        num(row.m_temp),
        num(row.m_bat),
        opt(row.m_pdop),
        row.m_na.to_string(),
    ];
    cells.extend(row.indicators.named().iter().map(|(_, v)| num(*v)));
    let i = &row.indices;
    cells.extend([i.rel, i.res, i.sec, i.privacy, i.overall].map(num));
    cells.push(row.n_reachable.to_string());
    cells.push(
        row.anchors
            .iter()
            .filter(|a| a.selected)
            .count()
            .to_string(),
    );
    for a in &row.anchors {
        cells.extend([
            opt(a.range),
            num(a.rssi),
            flag(a.success),
            opt(a.t_ml),
            opt(a.t_rssi),
            flag(a.selected),
        ]);
    }
    cells
}

/// Writes one header row and one row per tick. Every row must list the
/// same anchors.
pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> csv::Result<()> {
    let ids: Vec<AnchorId> = rows
        .first()
        .map(|r| r.anchors.iter().map(|a| a.id.clone()).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(&ids))?;
    for row in rows {
        w.write_record(record(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_to_string(rows: &[TraceRow]) -> String {
    let mut buf = Vec::new();
    write_trace(rows, &mut buf).expect("writing to memory does not fail");
    String::from_utf8(buf).expect("trace is UTF-8")
}

fn bad(message: String) -> HarnessError {
    HarnessError::Trace { message }
}

struct Cells<'a> {
    record: &'a csv::StringRecord,
    line: u64,
}

impl Cells<'_> {
    fn get(&self, index: usize, name: &str) -> Result<&str, HarnessError> {
        self.record
            .get(index)
            .ok_or_else(|| bad(format!("line {}: missing column {name}", self.line)))
    }

    fn parse<T: std::str::FromStr>(&self, index: usize, name: &str) -> Result<T, HarnessError> {
        let cell = self.get(index, name)?;
        cell.parse().map_err(|_| {
            bad(format!(
                "line {}: column {name}: cannot parse `{cell}`",
                self.line
            ))
        })
    }

    fn opt(&self, index: usize, name: &str) -> Result<Option<f64>, HarnessError> {
        if self.get(index, name)?.is_empty() {
            Ok(None)
        } else {
            self.parse(index, name).map(Some)
        }
    }

    fn flag(&self, index: usize, name: &str) -> Result<bool, HarnessError> {
        match self.get(index, name)? {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(bad(format!(
                "line {}: column {name}: expected 0 or 1, got `{other}`",
                self.line
            ))),
        }
    }
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>, HarnessError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < FIXED_COLUMNS.len() || names[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(bad(
            "header does not start with the fixed trace columns".into()
        ));
    }
    let anchor_cols = &names[FIXED_COLUMNS.len()..];
    if !anchor_cols.len().is_multiple_of(ANCHOR_SUFFIXES.len()) {
        return Err(bad("per-anchor columns come in groups of six".into()));
    }
    let mut ids = Vec::new();
    for group in anchor_cols.chunks(ANCHOR_SUFFIXES.len()) {
        let id = group[0]
            .strip_suffix("_range")
            .ok_or_else(|| bad(format!("unexpected column {}", group[0])))?;
        for (col, suffix) in group.iter().zip(ANCHOR_SUFFIXES) {
            if *col != format!("{id}_{suffix}") {
                return Err(bad(format!("unexpected column {col}")));
            }
        }
        ids.push(AnchorId::new(id));
    }

    let mut rows = Vec::new();
    for result in reader.records() {
        let rec = result.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let c = Cells { record: &rec, line };
        let f = |i: usize| c.parse::<f64>(i, FIXED_COLUMNS[i]);
        let mode = match c.get(0, "mode")? {
            "basic" => AssessmentMode::Basic,
            "sequential" => AssessmentMode::Sequential,
            other => return Err(bad(format!("line {line}: unknown mode `{other}`"))),
        };
        let est = match (c.opt(5, "est_x")?, c.opt(6, "est_y")?) {
            (Some(x), Some(y)) => Some(Position2D { x, y }),
            _ => None,
        };
        let mut anchors = Vec::new();
        for (k, id) in ids.iter().enumerate() {
            let base = FIXED_COLUMNS.len() + k * ANCHOR_SUFFIXES.len();
            anchors.push(AnchorCell {
                id: id.clone(),
                range: c.opt(base, "range")?,
                rssi: c.parse(base + 1, "rssi")?,
                success: c.flag(base + 2, "success")?,
                t_ml: c.opt(base + 3, "t_ml")?,
                t_rssi: c.opt(base + 4, "t_rssi")?,
                selected: c.flag(base + 5, "selected")?,
            });
        }
        rows.push(TraceRow {
            mode,
            tick: c.parse(1, "tick")?,
            time_s: f(2)?,
            true_position: Position2D { x: f(3)?, y: f(4)? },
            estimate: est,
            loc_status: c.get(7, "loc_status")?.to_string(),
            residual_m: c.opt(8, "residual_m")?,
            m_temp: f(9)?,
            m_bat: f(10)?,
            m_pdop: c.opt(11, "m_pdop")?,
            m_na: c.parse(12, "m_na")?,
            indicators: IndicatorColumns {
                temp: f(13)?,
                bat: f(14)?,
                ml: f(15)?,
                rssi: f(16)?,
                pdop: f(17)?,
                na: f(18)?,
                enc: f(19)?,
                auth: f(20)?,
                sr: f(21)?,
                da: f(22)?,
            },
            indices: IndexColumns {
                rel: f(23)?,
                res: f(24)?,
                sec: f(25)?,
                privacy: f(26)?,
                overall: f(27)?,
            },
            n_reachable: c.parse(28, "n_reachable")?,
            anchors,
        });
    }
    Ok(rows)
}
