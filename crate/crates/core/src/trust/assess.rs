use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    assemble, compute_indices, link_indicators, select_anchors, sigmoid_indicator, AssessmentMode,
    IndexReport, IndicatorSet, LinkIndicators, SecuritySchemes, TrustConfig,
};
use crate::anomaly::AnomalyDetector;
use crate::geometry::{Anchor, AnchorId, NodeState};
use crate::localization::{locate, pdop, LocalizationError, PositionEstimate};
use crate::ranging::{compute_range, RangeEstimate, RangingRecord};

/// Everything measured during one tick.
#[derive(Debug, Clone, Copy)]
pub struct TickMeasurements<'a> {
    pub node: &'a NodeState,
    /// Positions as announced by the anchors.
    pub anchors: &'a [Anchor],
    /// One record per attempted exchange.
    pub records: &'a [RangingRecord],
    pub schemes: SecuritySchemes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when fewer than three anchors were evaluated or the geometry is singular.
    pub pdop: Option<f64>,
    pub na: usize,
    pub temperature: f64,
    pub battery_voltage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub mode: AssessmentMode,
    pub estimate: Result<PositionEstimate, LocalizationError>,
    pub metrics: Metrics,
    /// Link indicators of every reachable anchor, selected or not.
    pub links: BTreeMap<AnchorId, LinkIndicators>,
    /// Range of every reachable anchor.
    pub ranges: BTreeMap<AnchorId, f64>,
    pub selected: Vec<AnchorId>,
    pub indicators: IndicatorSet,
    pub report: IndexReport,
}

/// Selects anchors, localizes with them and scores the result.
///
/// An exchange counts as reachable when it completed and produced a usable
/// range. Indicators and indices are computed over the selected anchors
/// only; if none is left the link indicators are 0. A link whose CIRs
/// cannot be scored gets `T_ml = 0`.
pub fn assess(
    tick: &TickMeasurements<'_>,
    mode: AssessmentMode,
    config: &TrustConfig,
    detector: &dyn AnomalyDetector,
) -> Assessment {
    let mut estimates: BTreeMap<AnchorId, RangeEstimate> = BTreeMap::new();
    let mut links = BTreeMap::new();
    let mut reachable = Vec::new();
    for record in tick.records.iter().filter(|r| r.success) {
        let Ok(estimate) = compute_range(record) else {
            continue;
        };
        // A CIR the detector cannot score is not trusted.
        let link = link_indicators(record, config, detector).unwrap_or(LinkIndicators {
            ml: 0.0,
            rssi: sigmoid_indicator(record.rssi, &config.rssi),
        });
        links.insert(record.anchor_id.clone(), link);
        reachable.push(record.anchor_id.clone());
        estimates.insert(record.anchor_id.clone(), estimate);
    }

    let selected = select_anchors(mode, &reachable, &links, config.threshold);
    let used: Vec<RangeEstimate> = selected.iter().map(|id| estimates[id].clone()).collect();
    let estimate = locate(&used, tick.anchors);

    let selected_anchors: Vec<Anchor> = selected
        .iter()
        .filter_map(|id| tick.anchors.iter().find(|a| &a.id == id).cloned())
        .collect();
    let m_pdop = match &estimate {
        Ok(e) if selected.len() >= 3 => pdop(e.position, &selected_anchors).ok(),
        _ => None,
    };

    let selected_links: BTreeMap<AnchorId, LinkIndicators> =
        selected.iter().map(|id| (id.clone(), links[id])).collect();
    let indicators = assemble(tick.node, selected_links, m_pdop, tick.schemes, config);
    let report = compute_indices(&indicators, mode);

    Assessment {
        mode,
        estimate,
        metrics: Metrics {
            pdop: m_pdop,
            na: selected.len(),
            temperature: tick.node.temperature,
            battery_voltage: tick.node.battery_voltage,
        },
        ranges: estimates.into_iter().map(|(k, v)| (k, v.range)).collect(),
        links,
        selected,
        indicators,
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::DetectorError;
    use crate::geometry::Position2D;
    use crate::ranging::{
        simulate_exchange, ChannelRealization, Cir, CirProfile, ExchangeTiming, PathLossParams,
        RadioModel,
    };
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scores a link by its first CIR's first-path index: the spoofed anchor
    /// gets a low score.
    struct ByFirstPath;

    impl AnomalyDetector for ByFirstPath {
        fn score(&self, cirs: &[Cir]) -> Result<f64, DetectorError> {
            Ok(if cirs[0].first_path_index < 8 {
                0.1
            } else {
                0.9
            })
        }
    }

    struct Fixed(f64);

    impl AnomalyDetector for Fixed {
        fn score(&self, _: &[Cir]) -> Result<f64, DetectorError> {
            Ok(self.0)
        }
    }

    fn square(side: f64) -> Vec<Anchor> {
        [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Anchor::new(format!("A{}", i + 1), Position2D { x, y }))
            .collect()
    }

    fn records(
        node: &NodeState,
        anchors: &[Anchor],
        spoof: &[(usize, f64)],
        seed: u64,
    ) -> Vec<RangingRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = PathLossParams::default();
        let radio = RadioModel::noiseless();
        anchors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let d = crate::geometry::distance(node.true_position, a.position);
                let mut ch = ChannelRealization::line_of_sight(d, &env, 0.0, CirProfile::default());
                if let Some((_, bias)) = spoof.iter().find(|(j, _)| *j == i) {
                    ch.spoof_bias = *bias;
                    ch.condition = crate::ranging::ChannelCondition::ShrAttacked;
                }
                let timing = ExchangeTiming::new(1.0, 200e-6, 200e-6);
                simulate_exchange(node, a, &ch, &timing, &radio, &mut rng)
            })
            .collect()
    }

    #[test]
    fn clean_square_is_trusted() {
        let anchors = square(6.0);
        let node = NodeState::ideal(Position2D { x: 3.0, y: 3.0 });
        let recs = records(&node, &anchors, &[], 1);
        let tick = TickMeasurements {
            node: &node,
            anchors: &anchors,
            records: &recs,
            schemes: SecuritySchemes::default(),
        };
        for mode in [AssessmentMode::Basic, AssessmentMode::Sequential] {
            let a = assess(&tick, mode, &TrustConfig::default(), &Fixed(0.9));
            let p = a.estimate.as_ref().unwrap().position;
            assert!((p.x - 3.0).abs() < 1e-6 && (p.y - 3.0).abs() < 1e-6);
            assert_eq!(a.selected.len(), 4);
            assert!((a.metrics.pdop.unwrap() - 1.0).abs() < 1e-9);
            assert!(a.report.overall >= 0.5);
        }
    }

    #[test]
    fn sequential_drops_spoofed_anchor() {
        let anchors: Vec<Anchor> = square(6.0)
            .into_iter()
            .chain([Anchor::new("A5", Position2D { x: 3.0, y: -2.0 })])
            .collect();
        let node = NodeState::ideal(Position2D { x: 2.0, y: 3.5 });
        let recs = records(&node, &anchors, &[(1, 1.5)], 2);
        let tick = TickMeasurements {
            node: &node,
            anchors: &anchors,
            records: &recs,
            schemes: SecuritySchemes::default(),
        };
        let config = TrustConfig::default();
        let basic = assess(&tick, AssessmentMode::Basic, &config, &ByFirstPath);
        let seq = assess(&tick, AssessmentMode::Sequential, &config, &ByFirstPath);
        assert_eq!(basic.selected.len(), 5);
        assert!(basic.report.sec < 0.5);
        assert!(!seq.selected.contains(&AnchorId::new("A2")));
        assert_eq!(seq.selected.len(), 4);
        assert!((seq.indicators.link_min.ml - 0.9).abs() < 1e-12);
        let err = |a: &Assessment| {
            crate::geometry::distance(a.estimate.as_ref().unwrap().position, node.true_position)
        };
        assert!(err(&seq) < 1e-6);
        assert!(err(&basic) > 0.1);
    }

    #[test]
    fn no_reachable_anchor() {
        let anchors = square(6.0);
        let node = NodeState::ideal(Position2D { x: 3.0, y: 3.0 });
        let mut recs = records(&node, &anchors, &[], 3);
        for r in &mut recs {
            r.success = false;
            r.cirs.clear();
        }
        let tick = TickMeasurements {
            node: &node,
            anchors: &anchors,
            records: &recs,
            schemes: SecuritySchemes::default(),
        };
        let a = assess(
            &tick,
            AssessmentMode::Basic,
            &TrustConfig::default(),
            &Fixed(0.9),
        );
        assert_eq!(a.estimate, Err(LocalizationError::InsufficientAnchors(0)));
        assert_eq!(a.report.overall, 0.0);
        assert_eq!(a.indicators.system.pdop, 1.0);
        assert!(a.indicators.system.na < 0.5);
    }

    #[test]
    fn collinear_selection_gives_zero_pdop_indicator() {
        let anchors: Vec<Anchor> = (0..3)
            .map(|i| {
                Anchor::new(
                    format!("A{i}"),
                    Position2D {
                        x: 3.0 * i as f64,
                        y: 0.0,
                    },
                )
            })
            .collect();
        let node = NodeState::ideal(Position2D { x: 2.0, y: 2.0 });
        let recs = records(&node, &anchors, &[], 4);
        let tick = TickMeasurements {
            node: &node,
            anchors: &anchors,
            records: &recs,
            schemes: SecuritySchemes::default(),
        };
        let a = assess(
            &tick,
            AssessmentMode::Basic,
            &TrustConfig::default(),
            &Fixed(0.9),
        );
        assert_eq!(a.estimate, Err(LocalizationError::DegenerateGeometry));
        assert_eq!(a.metrics.pdop, None);
        assert_eq!(a.indicators.system.pdop, 0.0);
    }

    /// Link scores as a function of the anchor index.
    struct Table(Vec<f64>);

    impl AnomalyDetector for Table {
        fn score(&self, cirs: &[Cir]) -> Result<f64, DetectorError> {
            // Anchor index is smuggled through the tap count.
            Ok(self.0[cirs[0].taps.len() - 1])
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sequential_link_minima_dominate_basic(
            scores in prop::collection::vec(0.0..1.0f64, 5),
            seed in any::<u64>(),
        ) {
            let anchors: Vec<Anchor> = square(8.0)
                .into_iter()
                .chain([Anchor::new("A5", Position2D { x: 4.0, y: 9.0 })])
                .collect();
            let node = NodeState::ideal(Position2D { x: 3.0, y: 5.0 });
            let mut recs = records(&node, &anchors, &[], seed);
            for (i, r) in recs.iter_mut().enumerate() {
                r.cirs = vec![Cir::from_taps(vec![1.0; i + 1], 0)];
            }
            let tick = TickMeasurements {
                node: &node,
                anchors: &anchors,
                records: &recs,
                schemes: SecuritySchemes::default(),
            };
            let config = TrustConfig::default();
            let det = Table(scores.clone());
            let basic = assess(&tick, AssessmentMode::Basic, &config, &det);
            let seq = assess(&tick, AssessmentMode::Sequential, &config, &det);
            if !seq.selected.is_empty() {
                prop_assert!(seq.indicators.link_min.ml >= basic.indicators.link_min.ml);
                prop_assert!(seq.indicators.link_min.rssi >= basic.indicators.link_min.rssi);
                prop_assert!(seq.indicators.link_min.ml >= config.threshold);
            }
            for id in &seq.selected {
                prop_assert!(seq.links[id].min() >= config.threshold);
            }
            // A trusted tick never rests on an untrusted selected link.
            if basic.report.overall >= config.threshold {
                for id in &basic.selected {
                    prop_assert!(basic.links[id].min() >= config.threshold);
                }
            }
        }
    }
}
