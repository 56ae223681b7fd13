use std::sync::Arc;

use super::*;
use crate::model::{parse_model, CompiledModel};

fn sim(text: &str) -> Simulator {
    sim_with(text, SimOptions::default())
}

fn sim_with(text: &str, opts: SimOptions) -> Simulator {
    let m = parse_model(text).unwrap();
    Simulator::new(Arc::new(CompiledModel::new(&m).unwrap()), opts)
}

const PUMP_BACKUP: &str = r#"{
  "name": "pump_backup",
  "components": [
    {"name": "pump", "states": ["STANDBY", "RUNNING", "FAILED"], "transitions": [
      {"kind": "demand", "source": "STANDBY", "trigger": "start", "outcomes": [
        {"target": "RUNNING", "probability": 0.9},
        {"target": "FAILED", "probability": 0.1, "emits": ["backup_start"]}]}]},
    {"name": "backup", "states": ["STANDBY", "RUNNING", "FAILED"], "transitions": [
      {"kind": "demand", "source": "STANDBY", "trigger": "backup_start", "outcomes": [
        {"target": "RUNNING", "probability": 0.99},
        {"target": "FAILED", "probability": 0.01}]}]}
  ],
  "end_states": [
    {"name": "MELT", "predicate": "pump == FAILED && backup == FAILED", "severity": "fail"},
    {"name": "OK", "severity": "ok", "nominal": true}
  ],
  "initial": {"components": {"pump": "STANDBY", "backup": "STANDBY"}},
  "mission_time": 10
}"#;

const TANK: &str = r#"{
  "name": "tank",
  "components": [{"name": "drain", "states": ["OPEN", "CLOSED"]}],
  "continuous_vars": [{"name": "x", "initial": 10,
     "derivative": [{"when": "drain == OPEN", "rate": "-2"}, {"rate": "0"}]}],
  "end_states": [
    {"name": "EMPTY", "predicate": "x <= 0", "severity": "fail"},
    {"name": "OK", "severity": "ok", "nominal": true}
  ],
  "initial": {"components": {"drain": "OPEN"}},
  "mission_time": 10
}"#;

fn hazard_model(modifier: &str, rate: f64) -> String {
    format!(
        r#"{{
      "name": "hz",
      "components": [{{"name": "pump", "states": ["RUNNING", "FAILED"], "transitions": [
        {{"kind": "timed", "source": "RUNNING", "target": "FAILED",
          "distribution": {{"type": "exponential", "rate": {rate}}}, "rate_modifier": "{modifier}"}}]}}],
      "continuous_vars": [{{"name": "level", "initial": 10, "derivative": [{{"rate": "-1"}}]}}],
      "end_states": [
        {{"name": "LOST", "predicate": "pump == FAILED", "severity": "fail"}},
        {{"name": "OK", "severity": "ok", "nominal": true}}
      ],
      "initial": {{"components": {{"pump": "RUNNING"}}}},
      "mission_time": 1000
    }}"#
    )
}

fn run_choosing(sim: &Simulator, s: &mut SimState, choose: impl Fn(&BranchPoint) -> usize) -> usize {
    loop {
        match sim.run(s).unwrap() {
            Stop::Ended(e) => return e,
            Stop::Branch(bp) => sim.apply_branch_index(s, choose(&bp)).unwrap(),
        }
    }
}

#[test]
fn init_sets_clock_and_states() {
    let sim = sim(&hazard_model("1", 0.1));
    let s = sim.init(42);
    assert_eq!(s.clock(), 0.0);
    assert_eq!(sim.model().state_name(0, s.states()[0]), "RUNNING");
    assert_eq!(s, sim.init(42));
}

#[test]
fn tank_drains_at_five() {
    let sim = sim(TANK);
    let mut s = sim.init(1);
    let end = run_choosing(&sim, &mut s, |_| 0);
    assert_eq!(sim.model().end_states[end].name, "EMPTY");
    assert!((s.clock() - 5.0).abs() <= DEFAULT_STEP, "{}", s.clock());
    assert!(s.trace().iter().any(|e| e.kind == TraceKind::ThresholdCrossing));
}

#[test]
fn pump_demand_is_a_two_way_branch() {
    let sim = sim(PUMP_BACKUP);
    let mut s = sim.init(0);
    let Stop::Branch(bp) = sim.run(&mut s).unwrap() else { panic!() };
    assert_eq!(bp.branches.len(), 2);
    assert_eq!(bp.source, "pump/STANDBY/start");
    let total: f64 = bp.branches.iter().map(|b| b.probability).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn apply_branch_outcomes() {
    let sim = sim(PUMP_BACKUP);
    let pump = 0;
    let backup = 1;

    let mut s = sim.init(0);
    sim.run(&mut s).unwrap();
    sim.apply_branch_index(&mut s, 0).unwrap();
    assert_eq!(sim.model().state_name(pump, s.states()[pump]), "RUNNING");
    let last = s.trace().iter().rev().find(|e| e.kind == TraceKind::BranchTaken).unwrap();
    assert_eq!(last.prob, Some(0.9));

    let mut s = sim.init(0);
    sim.run(&mut s).unwrap();
    sim.apply_branch_index(&mut s, 1).unwrap();
    assert_eq!(sim.model().state_name(pump, s.states()[pump]), "FAILED");
    let Stop::Branch(bp) = sim.run(&mut s).unwrap() else { panic!("backup demand expected") };
    assert_eq!(bp.source, "backup/STANDBY/backup_start");
    sim.apply_branch_index(&mut s, 1).unwrap();
    assert_eq!(sim.model().state_name(backup, s.states()[backup]), "FAILED");
    assert_eq!(sim.run(&mut s).unwrap(), Stop::Ended(0));
    assert!((s.path_probability() - 0.001).abs() < 1e-15);
}

#[test]
fn stale_branch_is_rejected() {
    let sim = sim(PUMP_BACKUP);
    let mut s = sim.init(0);
    let Stop::Branch(first) = sim.run(&mut s).unwrap() else { panic!() };
    sim.apply_branch(&mut s, &first.branches[1]).unwrap();
    sim.run(&mut s).unwrap();
    let err = sim.apply_branch(&mut s, &first.branches[0]).unwrap_err();
    assert!(matches!(err, SimError::StaleBranch { .. }));

    let mut done = sim.init(0);
    run_choosing(&sim, &mut done, |_| 0);
    assert_eq!(sim.apply_branch(&mut done, &first.branches[0]), Err(SimError::NoPendingBranch));
    assert_eq!(sim.step(&mut done), Err(SimError::AlreadyEnded));
}

#[test]
fn guard_fires_at_ramp_crossing() {
    let text = r#"{
      "name": "fuse",
      "components": [{"name": "fuse", "states": ["INTACT", "BLOWN"], "transitions": [
        {"kind": "conditional", "source": "INTACT", "guard": "current >= 8", "target": "BLOWN"}]}],
      "continuous_vars": [{"name": "current", "initial": 0,
        "derivative": [{"when": "fuse == INTACT", "rate": "1"}, {"rate": "-current"}]}],
      "end_states": [{"name": "OK", "severity": "ok", "nominal": true}],
      "initial": {"components": {"fuse": "INTACT"}},
      "mission_time": 10
    }"#;
    let sim = sim(text);
    let mut s = sim.init(0);
    run_choosing(&sim, &mut s, |_| 0);
    let fired = s.trace().iter().find(|e| e.kind == TraceKind::Transition).unwrap();
    assert!((fired.time - 8.0).abs() <= DEFAULT_STEP, "{}", fired.time);
    // after blowing, the derivative clause switches to decay
    assert!(s.vars()[0] < 8.0 * (-1.9f64).exp());
}

#[test]
fn zero_derivative_has_no_crossing() {
    let sim = sim(&TANK.replace("\"-2\"", "\"0\""));
    let mut s = sim.init(0);
    assert_eq!(sim.integrate(&mut s, 3.0).unwrap(), None);
    assert_eq!(s.vars()[0], 10.0);
    assert_eq!(s.clock(), 3.0);
}

#[test]
fn simultaneous_crossings_follow_declaration_order() {
    for (first, second) in [("A", "B"), ("B", "A")] {
        let text = TANK.replace(
            r#"{"name": "EMPTY", "predicate": "x <= 0", "severity": "fail"},"#,
            &format!(
                r#"{{"name": "{first}", "predicate": "x < 4.5", "severity": "fail"}},
                   {{"name": "{second}", "predicate": "2 * x < 9", "severity": "fail"}},"#
            ),
        );
        let sim = sim(&text);
        let mut s = sim.init(0);
        let end = run_choosing(&sim, &mut s, |_| 0);
        assert_eq!(sim.model().end_states[end].name, first);
    }
}

#[test]
fn firing_time_inverse_cdf() {
    let u = (-1.0f64).exp();
    let w = sample_firing_time(&Distribution::Weibull { scale: 100.0, shape: 2.0 }, u).unwrap();
    assert!((w - 100.0).abs() < 1e-9);
    let e = sample_firing_time(&Distribution::Exponential { rate: 0.5 }, u).unwrap();
    assert!((e - 2.0).abs() < 1e-12);
    assert_eq!(sample_firing_time(&Distribution::Fixed { time: 7.0 }, 0.3).unwrap(), 7.0);
    assert_eq!(sample_firing_time(&Distribution::Fixed { time: 7.0 }, 1.0), Err(SimError::InvalidUniform(1.0)));
    assert!(sample_firing_time(&Distribution::Exponential { rate: 1.0 }, 0.0).is_err());
}

fn firing_times(text: &str, n: u64) -> Vec<f64> {
    let sim = sim(text);
    (0..n)
        .map(|i| {
            let mut s = sim.init_stream(7, i);
            run_choosing(&sim, &mut s, |_| 0);
            s.trace().iter().find(|e| e.kind == TraceKind::Transition).unwrap().time
        })
        .collect()
}

#[test]
fn doubled_modifier_halves_mean_firing_time() {
    let lambda = 0.5;
    let times = firing_times(&hazard_model("2", lambda), 4000);
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let expected = 1.0 / (2.0 * lambda);
    // exponential: sd equals the mean
    assert!((mean - expected).abs() < 3.0 * expected / n.sqrt(), "{mean}");
}

#[test]
fn unit_modifier_reduces_to_plain_exponential() {
    let lambda = 0.5;
    let times = firing_times(&hazard_model("1", lambda), 4000);
    for x in [0.5, 1.0, 2.0, 4.0] {
        let p = (-lambda * x).exp();
        let emp = times.iter().filter(|&&t| t > x).count() as f64 / times.len() as f64;
        let sd = (p * (1.0 - p) / times.len() as f64).sqrt();
        assert!((emp - p).abs() < 3.0 * sd + DEFAULT_STEP * lambda, "S({x}) {emp} vs {p}");
    }
}

#[test]
fn negative_modifier_is_an_error() {
    let sim = sim(&hazard_model("level - 20", 0.1));
    let mut s = sim.init(0);
    let err = sim.run(&mut s).unwrap_err();
    assert!(matches!(err, SimError::NegativeModifier { .. }), "{err}");
}

#[test]
fn accumulate_hazard_reports_threshold() {
    let sim = sim(&hazard_model("1", 1.0));
    let mut s = sim.init(3);
    let mut fired = false;
    for _ in 0..10_000 {
        if sim.accumulate_hazard(&mut s, 0.05).unwrap() {
            fired = true;
            break;
        }
    }
    assert!(fired);
}

#[test]
fn fixed_timer_fires_and_rearms() {
    let text = r#"{
      "name": "blink",
      "components": [{"name": "lamp", "states": ["ON", "OFF"], "transitions": [
        {"kind": "timed", "source": "ON", "target": "OFF", "distribution": {"type": "fixed", "time": 1}},
        {"kind": "timed", "source": "OFF", "target": "ON", "distribution": {"type": "fixed", "time": 2}}]}],
      "end_states": [{"name": "OK", "severity": "ok", "nominal": true}],
      "initial": {"components": {"lamp": "ON"}},
      "mission_time": 7.5
    }"#;
    let sim = sim(text);
    let mut s = sim.init(0);
    run_choosing(&sim, &mut s, |_| 0);
    let times: Vec<f64> = s
        .trace()
        .iter()
        .filter(|e| e.kind == TraceKind::Transition)
        .map(|e| e.time)
        .collect();
    assert_eq!(times, vec![1.0, 3.0, 4.0, 6.0, 7.0]);
    assert_eq!(s.clock(), 7.5);
}

#[test]
fn discretized_branchable_timer() {
    let text = r#"{
      "name": "wear",
      "components": [{"name": "seal", "states": ["OK", "LEAK"], "transitions": [
        {"kind": "timed", "source": "OK", "target": "LEAK", "branchable": true,
         "distribution": {"type": "exponential", "rate": 0.1}},
        {"kind": "timed", "source": "LEAK", "target": "OK",
         "distribution": {"type": "exponential", "rate": 5}}]}],
      "end_states": [
        {"name": "LEAKED", "predicate": "seal == LEAK", "severity": "fail"},
        {"name": "FINE", "severity": "ok", "nominal": true}],
      "initial": {"components": {"seal": "OK"}},
      "mission_time": 10
    }"#;
    let opts = SimOptions { timed: TimedMode::Discretized, ..SimOptions::default() };
    let sim = sim_with(text, opts);
    let mut s = sim.init(0);
    let Stop::Branch(bp) = sim.run(&mut s).unwrap() else { panic!() };
    assert_eq!(bp.branches.len(), 4);
    let fire = 1.0 - (-1.0f64).exp();
    let total: f64 = bp.branches.iter().map(|b| b.probability).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!((bp.branches[3].probability - (1.0 - fire)).abs() < 1e-12);
    // conditional median of the firing time given it fires within 10 h
    let BranchEffect::FireAt { time, .. } = bp.branches[1].effect else { panic!() };
    assert!(((1.0 - (-0.1 * time).exp()) - 0.5 * fire).abs() < 1e-12);

    sim.apply_branch_index(&mut s, 1).unwrap();
    assert_eq!(sim.run(&mut s).unwrap(), Stop::Ended(0));
    assert!((s.clock() - time).abs() < 1e-12);

    let mut s = sim.init(0);
    sim.run(&mut s).unwrap();
    sim.apply_branch_index(&mut s, 3).unwrap();
    assert_eq!(sim.run(&mut s).unwrap(), Stop::Ended(1));
}

#[test]
fn snapshot_restore_is_exact() {
    let sim = sim(&hazard_model("1 + step(level > 5)", 0.2));
    let mut a = sim.init(11);
    sim.step(&mut a).unwrap();
    sim.step(&mut a).unwrap();
    let snap = sim.snapshot(&a);
    let mut b = sim.restore(&snap).unwrap();
    assert_eq!(a, b);
    run_choosing(&sim, &mut a, |_| 0);
    run_choosing(&sim, &mut b, |_| 0);
    assert_eq!(a.trace(), b.trace());
}

#[test]
fn sibling_order_does_not_leak() {
    let sim = sim(PUMP_BACKUP);
    let mut s = sim.init(5);
    sim.run(&mut s).unwrap();
    let snap = sim.snapshot(&s);
    let explore = |idx: usize| {
        let mut s = sim.restore(&snap).unwrap();
        sim.apply_branch_index(&mut s, idx).unwrap();
        run_choosing(&sim, &mut s, |_| 0);
        s.trace().to_vec()
    };
    let (a0, a1) = (explore(0), explore(1));
    let (b1, b0) = (explore(1), explore(0));
    assert_eq!(a0, b0);
    assert_eq!(a1, b1);
}

#[test]
fn corrupted_snapshots_are_rejected() {
    let sim = sim(PUMP_BACKUP);
    let s = sim.init(0);
    let mut bytes = sim.snapshot(&s).into_bytes();
    let last = bytes.len() - 3;
    bytes[last] ^= 0x20;
    assert!(matches!(
        sim.restore(&Snapshot::from_bytes(bytes.clone())),
        Err(SimError::CorruptSnapshot(_))
    ));
    bytes[8] = 99;
    assert!(matches!(
        sim.restore(&Snapshot::from_bytes(bytes)),
        Err(SimError::SnapshotVersion { found: 99, .. })
    ));
    assert!(sim.restore(&Snapshot::from_bytes(b"garbage".to_vec())).is_err());
}

#[test]
fn path_probability_is_recomputable_from_trace() {
    let sim = sim(PUMP_BACKUP);
    let mut s = sim.init(0);
    run_choosing(&sim, &mut s, |bp| bp.branches.len() - 1);
    let json = serde_json::to_string(s.trace()).unwrap();
    let trace: Vec<TraceEvent> = serde_json::from_str(&json).unwrap();
    assert_eq!(path_probability(&trace), 0.1 * 0.01);
}
