//! Trustworthiness indicators and indices.
//!
//! Metrics are mapped to indicators in [0, 1] (sigmoid for real-valued
//! metrics, 0/1 for binary ones). Indicators are combined with `min` into one
//! index per attribute and an overall index, so every index is governed by
//! its least trusted input.

pub mod assess;
pub mod sigmoid;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{AnomalyDetector, DetectorError};
use crate::geometry::{AnchorId, NodeState};
use crate::ranging::RangingRecord;

pub use assess::{assess, Assessment, TickMeasurements};
pub use sigmoid::{sigmoid_indicator, SigmoidParams, LN_9};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrustError {
    #[error("no successful link to aggregate")]
    EmptyLinkSet,
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssessmentMode {
    /// Every reachable anchor is used.
    Basic,
    /// Anchors with an untrusted link are dropped before localization.
    Sequential,
}

impl AssessmentMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AssessmentMode::Basic => "basic",
            AssessmentMode::Sequential => "sequential",
        }
    }
}

/// Sigmoid tuning of the real-valued metrics and the trust threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustConfig {
    /// Node temperature, °C.
    pub temp: SigmoidParams,
    /// Battery voltage, mV.
    pub bat: SigmoidParams,
    /// Received signal strength, dB.
    pub rssi: SigmoidParams,
    pub pdop: SigmoidParams,
    /// Number of anchors evaluated.
    pub na: SigmoidParams,
    pub threshold: f64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        let p = |low, high| SigmoidParams::new(low, high).expect("defaults are valid");
        Self {
            temp: p(85.0, 75.0),
            bat: p(3092.0, 3360.0),
            rssi: p(-92.0, -87.0),
            pdop: p(8.0, 3.0),
            na: p(3.0, 4.5),
            threshold: 0.5,
        }
    }
}

impl TrustConfig {
    pub fn metrics(&self) -> [(&'static str, SigmoidParams); 5] {
        [
            ("temp", self.temp),
            ("bat", self.bat),
            ("rssi", self.rssi),
            ("pdop", self.pdop),
            ("na", self.na),
        ]
    }
}

/// Whether each protection scheme is currently in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecuritySchemes {
    pub encryption: bool,
    pub authentication: bool,
    pub secure_ranging: bool,
    pub dynamic_addressing: bool,
}

impl Default for SecuritySchemes {
    fn default() -> Self {
        Self {
            encryption: true,
            authentication: true,
            secure_ranging: true,
            dynamic_addressing: true,
        }
    }
}

fn binary(enabled: bool) -> f64 {
    if enabled {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeIndicators {
    pub temp: f64,
    pub bat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkIndicators {
    pub ml: f64,
    pub rssi: f64,
}

impl LinkIndicators {
    pub fn min(&self) -> f64 {
        self.ml.min(self.rssi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemIndicators {
    pub pdop: f64,
    pub na: f64,
    pub enc: f64,
    pub auth: f64,
    pub sr: f64,
    pub da: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSet {
    pub node: NodeIndicators,
    pub links: BTreeMap<AnchorId, LinkIndicators>,
    pub system: SystemIndicators,
    /// Minimum over `links` of each link indicator.
    pub link_min: LinkIndicators,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub rel: f64,
    pub res: f64,
    pub sec: f64,
    pub privacy: f64,
    pub overall: f64,
    pub anchors_evaluated: Vec<AnchorId>,
    pub mode: AssessmentMode,
}

impl IndexReport {
    pub fn trusted(&self, threshold: f64) -> bool {
        self.overall >= threshold
    }
}

/// Minimum over the links.
pub fn aggregate_link(values: &BTreeMap<AnchorId, f64>) -> Result<f64, TrustError> {
    values
        .values()
        .copied()
        .reduce(f64::min)
        .ok_or(TrustError::EmptyLinkSet)
}

/// PDoP only carries information once a position can be computed; with
/// fewer than three anchors the indicator is 1 and the shortage is left to
/// the anchor-count indicator.
pub fn indicator_pdop(m_pdop: f64, anchors_evaluated: usize, params: &SigmoidParams) -> f64 {
    if anchors_evaluated >= 3 {
        sigmoid_indicator(m_pdop, params)
    } else {
        1.0
    }
}

pub fn link_indicators(
    record: &RangingRecord,
    config: &TrustConfig,
    detector: &dyn AnomalyDetector,
) -> Result<LinkIndicators, TrustError> {
    Ok(LinkIndicators {
        ml: detector.score(&record.cirs)?,
        rssi: sigmoid_indicator(record.rssi, &config.rssi),
    })
}

/// Per-tick inputs to the indicator mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<'a> {
    pub node: &'a NodeState,
    /// Records of the evaluated anchors. Failed exchanges are skipped.
    pub records: &'a [RangingRecord],
    pub schemes: SecuritySchemes,
    /// PDoP of the current estimate; `None` when it could not be computed.
    pub pdop: Option<f64>,
}

pub(crate) fn assemble(
    node: &NodeState,
    links: BTreeMap<AnchorId, LinkIndicators>,
    pdop: Option<f64>,
    schemes: SecuritySchemes,
    config: &TrustConfig,
) -> IndicatorSet {
    let count = links.len();
    let ml: BTreeMap<AnchorId, f64> = links.iter().map(|(k, v)| (k.clone(), v.ml)).collect();
    let rssi: BTreeMap<AnchorId, f64> = links.iter().map(|(k, v)| (k.clone(), v.rssi)).collect();
    // No link left means no trusted link.
    let link_min = LinkIndicators {
        ml: aggregate_link(&ml).unwrap_or(0.0),
        rssi: aggregate_link(&rssi).unwrap_or(0.0),
    };
    IndicatorSet {
        node: NodeIndicators {
            temp: sigmoid_indicator(node.temperature, &config.temp),
            bat: sigmoid_indicator(node.battery_voltage, &config.bat),
        },
        links,
        system: SystemIndicators {
            // A missing PDoP with enough anchors means singular geometry.
            pdop: indicator_pdop(pdop.unwrap_or(f64::INFINITY), count, &config.pdop),
            na: sigmoid_indicator(count as f64, &config.na),
            enc: binary(schemes.encryption),
            auth: binary(schemes.authentication),
            sr: binary(schemes.secure_ranging),
            da: binary(schemes.dynamic_addressing),
        },
        link_min,
    }
}

pub fn evaluate_indicators(
    snapshot: &Snapshot<'_>,
    config: &TrustConfig,
    detector: &dyn AnomalyDetector,
) -> Result<IndicatorSet, TrustError> {
    let mut links = BTreeMap::new();
    for record in snapshot.records.iter().filter(|r| r.success) {
        links.insert(
            record.anchor_id.clone(),
            link_indicators(record, config, detector)?,
        );
    }
    if links.is_empty() {
        return Err(TrustError::EmptyLinkSet);
    }
    Ok(assemble(
        snapshot.node,
        links,
        snapshot.pdop,
        snapshot.schemes,
        config,
    ))
}

/// Index formulas:
///
/// - reliability: temp, ml*, pdop, secure ranging, bat, rssi*, na
/// - resilience: na
/// - security: enc, da, auth, secure ranging, ml*
/// - privacy: da
/// - overall: min of the four
pub fn compute_indices(ind: &IndicatorSet, mode: AssessmentMode) -> IndexReport {
    let min = |vals: &[f64]| vals.iter().copied().fold(1.0f64, f64::min);
    let s = &ind.system;
    let rel = min(&[
        ind.node.temp,
        ind.link_min.ml,
        s.pdop,
        s.sr,
        ind.node.bat,
        ind.link_min.rssi,
        s.na,
    ]);
    let res = s.na;
    let sec = min(&[s.enc, s.da, s.auth, s.sr, ind.link_min.ml]);
    let privacy = s.da;
    IndexReport {
        rel,
        res,
        sec,
        privacy,
        overall: min(&[rel, res, sec, privacy]),
        anchors_evaluated: ind.links.keys().cloned().collect(),
        mode,
    }
}

/// Anchors used for evaluation. `reachable` are the anchors with a completed
/// exchange; the sequential method keeps those whose weakest link indicator
/// reaches `threshold`.
pub fn select_anchors(
    mode: AssessmentMode,
    reachable: &[AnchorId],
    link_indicators: &BTreeMap<AnchorId, LinkIndicators>,
    threshold: f64,
) -> Vec<AnchorId> {
    match mode {
        AssessmentMode::Basic => reachable.to_vec(),
        AssessmentMode::Sequential => reachable
            .iter()
            .filter(|id| {
                link_indicators
                    .get(*id)
                    .is_some_and(|l| l.min() >= threshold)
            })
            .cloned()
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Position2D;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<AnchorId> {
        (1..=n).map(|i| AnchorId::new(format!("A{i}"))).collect()
    }

    fn all_ones() -> IndicatorSet {
        IndicatorSet {
            node: NodeIndicators {
                temp: 1.0,
                bat: 1.0,
            },
            links: ids(4)
                .into_iter()
                .map(|id| (id, LinkIndicators { ml: 1.0, rssi: 1.0 }))
                .collect(),
            system: SystemIndicators {
                pdop: 1.0,
                na: 1.0,
                enc: 1.0,
                auth: 1.0,
                sr: 1.0,
                da: 1.0,
            },
            link_min: LinkIndicators { ml: 1.0, rssi: 1.0 },
        }
    }

    struct Fixed(f64);

    impl AnomalyDetector for Fixed {
        fn score(&self, _: &[crate::ranging::Cir]) -> Result<f64, DetectorError> {
            Ok(self.0)
        }
    }

    #[test]
    fn default_tuning() {
        let c = TrustConfig::default();
        assert_eq!((c.temp.low(), c.temp.high()), (85.0, 75.0));
        assert_eq!((c.bat.low(), c.bat.high()), (3092.0, 3360.0));
        assert_eq!((c.rssi.low(), c.rssi.high()), (-92.0, -87.0));
        assert_eq!((c.pdop.low(), c.pdop.high()), (8.0, 3.0));
        assert_eq!((c.na.low(), c.na.high()), (3.0, 4.5));
        assert_eq!(c.threshold, 0.5);
    }

    #[test]
    fn link_aggregation() {
        let m = |v: &[f64]| -> BTreeMap<AnchorId, f64> {
            ids(v.len()).into_iter().zip(v.iter().copied()).collect()
        };
        assert_eq!(aggregate_link(&m(&[0.9, 0.4, 0.8])), Ok(0.4));
        assert_eq!(aggregate_link(&m(&[0.7])), Ok(0.7));
        assert_eq!(aggregate_link(&m(&[0.5, 0.5, 0.5])), Ok(0.5));
        assert_eq!(
            aggregate_link(&BTreeMap::new()),
            Err(TrustError::EmptyLinkSet)
        );
    }

    #[test]
    fn pdop_indicator() {
        let p = TrustConfig::default().pdop;
        assert_eq!(indicator_pdop(8.0, 4, &p), 0.5);
        assert!((indicator_pdop(3.0, 4, &p) - 0.9).abs() < 1e-12);
        assert_eq!(indicator_pdop(50.0, 2, &p), 1.0);
        assert_eq!(indicator_pdop(f64::INFINITY, 3, &p), 0.0);
    }

    #[test]
    fn indices_examples() {
        let r = compute_indices(&all_ones(), AssessmentMode::Basic);
        assert_eq!([r.rel, r.res, r.sec, r.privacy, r.overall], [1.0; 5]);

        let mut low_ml = all_ones();
        low_ml.link_min.ml = 0.2;
        let r = compute_indices(&low_ml, AssessmentMode::Basic);
        assert_eq!((r.rel, r.sec, r.overall), (0.2, 0.2, 0.2));
        assert_eq!((r.res, r.privacy), (1.0, 1.0));

        let mut no_da = all_ones();
        no_da.system.da = 0.0;
        let r = compute_indices(&no_da, AssessmentMode::Basic);
        assert_eq!((r.privacy, r.sec, r.overall), (0.0, 0.0, 0.0));
        assert_eq!(r.anchors_evaluated, ids(4));
    }

    #[test]
    fn selection() {
        let all = ids(8);
        let links: BTreeMap<AnchorId, LinkIndicators> = all
            .iter()
            .map(|id| (id.clone(), LinkIndicators { ml: 0.9, rssi: 0.9 }))
            .collect();
        assert_eq!(
            select_anchors(AssessmentMode::Basic, &all, &links, 0.5),
            all
        );

        let four = ids(4);
        let mut links: BTreeMap<AnchorId, LinkIndicators> = four
            .iter()
            .map(|id| (id.clone(), LinkIndicators { ml: 0.9, rssi: 0.9 }))
            .collect();
        links.get_mut(&four[2]).unwrap().ml = 0.3;
        let kept = select_anchors(AssessmentMode::Sequential, &four, &links, 0.5);
        assert_eq!(
            kept,
            vec![four[0].clone(), four[1].clone(), four[3].clone()]
        );

        for l in links.values_mut() {
            l.rssi = 0.2;
        }
        assert!(select_anchors(AssessmentMode::Sequential, &four, &links, 0.5).is_empty());
    }

    fn record(id: &str, rssi: f64, success: bool) -> RangingRecord {
        RangingRecord {
            anchor_id: id.into(),
            node_timestamps: Default::default(),
            anchor_timestamps: Default::default(),
            rssi,
            cirs: Vec::new(),
            success,
        }
    }

    #[test]
    fn evaluate_examples() {
        let config = TrustConfig::default();
        let mut node = NodeState::ideal(Position2D::origin());
        node.battery_voltage = 3092.0;
        let records: Vec<RangingRecord> = vec![
            record("A1", -70.0, true),
            record("A2", -70.0, true),
            record("A3", -70.0, true),
            record("A4", -70.0, false),
        ];
        let snap = Snapshot {
            node: &node,
            records: &records,
            schemes: SecuritySchemes::default(),
            pdop: Some(1.2),
        };
        let ind = evaluate_indicators(&snap, &config, &Fixed(0.8)).unwrap();
        assert_eq!(ind.node.bat, 0.5);
        let s = ind.system;
        assert_eq!([s.enc, s.auth, s.sr, s.da], [1.0; 4]);
        // Failed A4 is excluded, so three anchors count.
        assert_eq!(ind.links.len(), 3);
        assert_eq!(s.na, 0.5);
        assert_eq!(ind.link_min.ml, 0.8);

        let off = Snapshot {
            schemes: SecuritySchemes {
                encryption: false,
                ..SecuritySchemes::default()
            },
            ..snap.clone()
        };
        assert_eq!(
            evaluate_indicators(&off, &config, &Fixed(0.8))
                .unwrap()
                .system
                .enc,
            0.0
        );

        let failed = [record("A1", -70.0, false)];
        let empty = Snapshot {
            records: &failed,
            ..snap
        };
        assert_eq!(
            evaluate_indicators(&empty, &config, &Fixed(0.8)),
            Err(TrustError::EmptyLinkSet)
        );
    }

    #[test]
    fn anchor_count_tuning() {
        let na = TrustConfig::default().na;
        assert_eq!(sigmoid_indicator(3.0, &na), 0.5);
        assert!((sigmoid_indicator(4.5, &na) - 0.9).abs() < 1e-12);
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0..=1.0f64
    }

    fn indicator_set() -> impl Strategy<Value = IndicatorSet> {
        (prop::array::uniform10(unit()), unit()).prop_map(|(v, _)| IndicatorSet {
            node: NodeIndicators {
                temp: v[0],
                bat: v[1],
            },
            links: BTreeMap::new(),
            system: SystemIndicators {
                pdop: v[2],
                na: v[3],
                enc: v[4],
                auth: v[5],
                sr: v[6],
                da: v[7],
            },
            link_min: LinkIndicators {
                ml: v[8],
                rssi: v[9],
            },
        })
    }

    fn set_field(ind: &mut IndicatorSet, which: usize, value: f64) {
        let slot = match which {
            0 => &mut ind.node.temp,
            1 => &mut ind.node.bat,
            2 => &mut ind.system.pdop,
            3 => &mut ind.system.na,
            4 => &mut ind.system.enc,
            5 => &mut ind.system.auth,
            6 => &mut ind.system.sr,
            7 => &mut ind.system.da,
            8 => &mut ind.link_min.ml,
            _ => &mut ind.link_min.rssi,
        };
        *slot = value;
    }

    fn values(r: &IndexReport) -> [f64; 5] {
        [r.rel, r.res, r.sec, r.privacy, r.overall]
    }

    proptest! {
        #[test]
        fn index_algebra(ind in indicator_set()) {
            let r = compute_indices(&ind, AssessmentMode::Basic);
            for v in values(&r) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(r.overall, r.rel.min(r.res).min(r.sec).min(r.privacy));
            prop_assert_eq!(r.res, ind.system.na);
            prop_assert_eq!(r.privacy, ind.system.da);
            prop_assert!(r.rel <= ind.node.temp && r.rel <= ind.link_min.rssi && r.rel <= ind.system.pdop);
            prop_assert!(r.sec <= ind.system.enc && r.sec <= ind.link_min.ml);
        }

        #[test]
        fn raising_an_indicator_never_lowers_an_index(
            ind in indicator_set(), which in 0usize..10, bump in unit()
        ) {
            let before = compute_indices(&ind, AssessmentMode::Basic);
            let mut raised = ind.clone();
            let old = match which {
                0 => ind.node.temp, 1 => ind.node.bat, 2 => ind.system.pdop, 3 => ind.system.na,
                4 => ind.system.enc, 5 => ind.system.auth, 6 => ind.system.sr, 7 => ind.system.da,
                8 => ind.link_min.ml, _ => ind.link_min.rssi,
            };
            set_field(&mut raised, which, old + (1.0 - old) * bump);
            let after = compute_indices(&raised, AssessmentMode::Basic);
            for (b, a) in values(&before).iter().zip(values(&after)) {
                prop_assert!(a >= *b);
            }
        }
    }
}
