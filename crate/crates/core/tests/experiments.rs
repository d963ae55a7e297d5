use metrolatch::experiments::{
    run_latch_experiment, run_shil_demo, run_sync_demo, sweep_arnold_tongue, FlipMethod, InitialPhases, LatchProtocol,
    SegmentKind, ShilOptions, SweepSpec, SyncOptions, Verdict,
};
use metrolatch::model::Mobility;
use metrolatch::phase::BitValue;
use metrolatch::Error;

fn failed(r: &metrolatch::experiments::ExperimentReport) -> Vec<String> {
    r.checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect()
}

#[test]
fn sync_locks_in_phase_on_a_rolling_platform() {
    let r = run_sync_demo(&SyncOptions::default()).unwrap();
    assert!(r.passed(), "{:?}", failed(&r));
    let end = r.lock("end").unwrap();
    assert!(end.locked && end.mean_offset.abs() < 0.3, "{end:?}");
    assert_eq!(r.segment_kinds().last(), Some(&SegmentKind::Bit0));
}

#[test]
fn anchored_pair_drifts_at_the_detuning() {
    let r = run_sync_demo(&SyncOptions {
        mobility: Some(Mobility::Fixed),
        ..Default::default()
    })
    .unwrap();
    assert_eq!(r.scenario, "sync_fixed");
    assert!(r.check("never_locks").unwrap().passed);
    assert!(r.check("drift_matches_detuning").unwrap().passed, "{:?}", failed(&r));
}

#[test]
fn symmetric_anti_phase_start_is_flagged() {
    let r = run_sync_demo(&SyncOptions {
        detuning_split: 0.0,
        initial: InitialPhases::AntiPhase,
        duration: 60.0,
        ..Default::default()
    })
    .unwrap();
    assert!(r.notes.iter().any(|n| n.contains("anti-phase")));
    let end = r.lock("end").unwrap();
    assert!(
        end.locked && (end.mean_offset.abs() - std::f64::consts::PI).abs() < 1e-3,
        "{end:?}"
    );
}

#[test]
fn shil_needs_a_rolling_platform() {
    let free = run_shil_demo(&ShilOptions::default()).unwrap();
    assert!(free.passed(), "{:?}", failed(&free));
    let fixed = run_shil_demo(&ShilOptions {
        mobility: Some(Mobility::Fixed),
        ..Default::default()
    })
    .unwrap();
    assert!(fixed.passed(), "{:?}", failed(&fixed));
    assert!(free.lissajous[0].value.aspect < 0.25);
    assert!(fixed.lissajous[0].value.aspect > 0.5);
}

#[test]
fn shil_lock_is_lost_far_outside_the_tongue() {
    let r = run_shil_demo(&ShilOptions {
        fast_detuning: 0.2,
        ..Default::default()
    })
    .unwrap();
    assert!(!r.lock("end").unwrap().locked);
    assert!(!r.check("locked_2_to_1").unwrap().passed);
}

#[test]
fn latch_stores_and_flips_a_bit() {
    let r = run_latch_experiment(&LatchProtocol {
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    assert!(r.passed(), "{:?}", failed(&r));
    let mut kinds = r.segment_kinds();
    kinds.dedup();
    assert_eq!(kinds.first(), Some(&SegmentKind::Drift));
    let locked: Vec<_> = kinds
        .iter()
        .filter(|k| matches!(k, SegmentKind::Bit0 | SegmentKind::Bit1))
        .collect();
    assert_eq!(locked.first(), Some(&&SegmentKind::Bit0));
    assert_eq!(locked.last(), Some(&&SegmentKind::Bit1));
    assert!(r.recovery_cycles.unwrap() <= 20.0);
    let bits: Vec<BitValue> = r.bits.iter().map(|b| b.reading.value).collect();
    assert_eq!(bits.first(), Some(&BitValue::Zero));
    assert_eq!(bits.last(), Some(&BitValue::One));
}

#[test]
fn mirror_flip_recovers_quickly() {
    let r = run_latch_experiment(&LatchProtocol {
        seed: 2,
        flip_method: FlipMethod::Mirror,
        t_perturb: None,
        ..Default::default()
    })
    .unwrap();
    assert!(r.passed(), "{:?}", failed(&r));
    assert_eq!(r.bits.last().map(|b| b.reading.value), Some(BitValue::One));
}

#[test]
fn protocol_times_must_be_ordered() {
    let bad = LatchProtocol {
        t_flip: Some(30.0),
        ..Default::default()
    };
    assert!(matches!(
        run_latch_experiment(&bad),
        Err(Error::InvalidParameter { .. })
    ));
}

#[test]
fn sweep_corners() {
    let grid = sweep_arnold_tongue(&SweepSpec {
        detunings: vec![-0.02, 0.0, 0.02],
        masses: vec![0.1, 1e6],
        duration: 60.0,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(grid.cells[0][1].verdict, Verdict::Locked);
    assert_eq!(grid.cells[1][0].verdict, Verdict::Unlocked);
    assert_eq!(grid.cells[1][2].verdict, Verdict::Unlocked);
    assert!(grid.lock_width(0) >= grid.lock_width(1));
}

#[test]
fn empty_sweep_is_rejected() {
    let spec = SweepSpec {
        masses: vec![],
        ..Default::default()
    };
    assert!(sweep_arnold_tongue(&spec).is_err());
}
