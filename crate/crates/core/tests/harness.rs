use uwb_trust::harness::scenario::bundled;
use uwb_trust::harness::trace::trace_to_string;
use uwb_trust::harness::{
    build_detector, load_scenario, parse_scenario, read_trace, run, summarize, HarnessError,
    ModeSelection, ScenarioConfig,
};

fn benign() -> ScenarioConfig {
    parse_scenario(bundled("benign").unwrap(), "benign", None).unwrap()
}

#[test]
fn benign_is_accurate_and_trusted() {
    for out in run(&benign()).unwrap() {
        let s = &out.summary;
        assert!(s.rmse_m.unwrap() < 0.15, "{:?}", s.rmse_m);
        assert_eq!(s.fraction_untrusted, 0.0);
        assert!(s.localization_failure_ticks.is_empty());
    }
}

#[test]
fn both_modes_share_measurements() {
    let mut config = parse_scenario(bundled("shr_attack").unwrap(), "shr_attack", None).unwrap();
    config.total_ticks = 50;
    let out = run(&config).unwrap();
    assert_eq!(out.len(), 2);
    let (basic, seq) = (&out[0].rows, &out[1].rows);
    for (b, s) in basic.iter().zip(seq) {
        assert_eq!(b.true_position, s.true_position);
        assert_eq!(b.m_temp, s.m_temp);
        assert_eq!(b.m_bat, s.m_bat);
        for (x, y) in b.anchors.iter().zip(&s.anchors) {
            assert_eq!((x.rssi, x.success, x.t_ml), (y.rssi, y.success, y.t_ml));
        }
    }
    // Same physics, different selection.
    assert!(basic.iter().zip(seq).any(|(b, s)| b.estimate != s.estimate));
}

#[test]
fn single_mode_matches_its_half_of_both() {
    let mut config = benign();
    let both = run(&config).unwrap();
    config.mode = ModeSelection::Sequential;
    let seq = run(&config).unwrap();
    assert_eq!(seq.len(), 1);
    assert_eq!(
        trace_to_string(&seq[0].rows),
        trace_to_string(&both[1].rows)
    );
}

#[test]
fn events_after_the_run_change_nothing() {
    let plain = run(&benign()).unwrap();
    let text = format!(
        "{}\n[[threats]]\nkind = \"anchor_outage\"\ntargets = [\"A1\"]\nwindow = [100, 150]\n\n\
         [[threats]]\nkind = \"overheat\"\nwindow = [500, 600]\n",
        bundled("benign").unwrap()
    );
    let late = run(&parse_scenario(&text, "late", None).unwrap()).unwrap();
    for (a, b) in plain.iter().zip(&late) {
        assert_eq!(trace_to_string(&a.rows), trace_to_string(&b.rows));
    }
}

#[test]
fn outage_removes_the_anchor() {
    let text = format!(
        "{}\n[[threats]]\nkind = \"anchor_outage\"\ntargets = [\"A1\"]\nwindow = [10, 19]\n",
        bundled("benign").unwrap()
    );
    let out = run(&parse_scenario(&text, "outage", None).unwrap()).unwrap();
    for row in &out[0].rows {
        let down = (10..=19).contains(&row.tick);
        assert_eq!(row.anchors[0].success, !down);
        assert_eq!(row.n_reachable, if down { 3 } else { 4 });
    }
}

#[test]
fn summary_survives_the_csv_round_trip() {
    for out in run(&benign()).unwrap() {
        let text = trace_to_string(&out.rows);
        let rows = read_trace(text.as_bytes()).unwrap();
        assert_eq!(rows, out.rows);
        assert_eq!(summarize(&rows, 0.5).unwrap(), out.summary);
    }
}

#[test]
fn stored_model_reproduces_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let model = build_detector(&benign()).unwrap();
    std::fs::write(
        dir.path().join("model.json"),
        serde_json::to_string(&model).unwrap(),
    )
    .unwrap();
    let text = bundled("benign").unwrap().replace(
        "calibration_samples = 500\ncalibration_seed = 7",
        "model_file = \"model.json\"",
    );
    let path = dir.path().join("stored.toml");
    std::fs::write(&path, text).unwrap();
    let stored = run(&load_scenario(&path).unwrap()).unwrap();
    let calibrated = run(&benign()).unwrap();
    for (a, b) in stored.iter().zip(&calibrated) {
        assert_eq!(trace_to_string(&a.rows), trace_to_string(&b.rows));
    }
}

#[test]
fn load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = load_scenario(&dir.path().join("nope.toml")).unwrap_err();
    assert!(matches!(missing, HarnessError::Io { .. }));
    assert_eq!(missing.exit_code(), 3);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nseed = 1\ntick_interval_s = = 0.1\n").unwrap();
    match load_scenario(&bad).unwrap_err() {
        HarnessError::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("expected a parse error, got {e}"),
    }

    let unknown_target = format!(
        "{}\n[[threats]]\nkind = \"shr_attack\"\ntargets = [\"A9\"]\nwindow = [0, 5]\n",
        bundled("benign").unwrap()
    );
    let e = parse_scenario(&unknown_target, "t", None).unwrap_err();
    assert!(matches!(e, HarnessError::Validation { .. }), "{e}");
    assert_eq!(e.exit_code(), 2);

    // Bundled names resolve when no such file exists.
    assert_eq!(load_scenario("benign".as_ref()).unwrap(), benign());
}
