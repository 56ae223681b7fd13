//! Earth-observation satellite case study: a baseline design and two
//! fixes for corrupted downlink data (a ground alarm watched by an
//! operator, and an onboard quality-control unit).

mod plan;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{
    CompiledModel, ComponentSpec, Distribution, EndStateSpec, Expression, InitialSpec, ModelError, OutcomeSpec,
    SystemModel, TransitionSpec,
};
use crate::risk::{assess, compare_designs, ComparisonCriterion, DesignComparison, RiskReport};
use crate::scheduler::{explore, ExplorationConfig, ExploreError, Mode};

pub use plan::{build_plan, Variant};

/// Parts whose loss the satellite cannot recover from.
pub const CRITICAL: [&str; 4] = ["software", "computer", "rcs", "bus"];

pub const HARDWARE: [&str; 8] = ["receiver", "transmitter", "antenna", "computer", "rcs", "bus", "software", "memory"];

pub const CYCLE: [&str; 5] = ["RECEIVE_COMMAND", "COLLECT_DATA", "PROCESS_DATA", "DOWNLINK_DATA", "STANDBY"];

pub const END_STATES: [&str; 4] = ["fail", "degraded", "safe_recovered", "ok"];

/// Components each mode needs.
pub fn mode_requirements(mode: &str) -> &'static [&'static str] {
    match mode {
        "RECEIVE_COMMAND" => &["receiver", "antenna", "computer", "rcs", "bus", "software"],
        "COLLECT_DATA" => &["rcs", "computer", "bus", "software"],
        "PROCESS_DATA" => &["bus", "computer", "software"],
        "DOWNLINK_DATA" => &["transmitter", "antenna", "computer", "bus", "software", "rcs"],
        "STANDBY" => &["software", "computer"],
        "SAFE" => &["transmitter", "antenna", "computer", "software"],
        _ => &[],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SatelliteParams {
    pub cycles: u32,
    /// Hours spent in each cycle mode.
    pub mode_duration: f64,
    /// Per-demand failure probabilities.
    pub p_receiver: f64,
    pub p_antenna: f64,
    pub p_transmitter: f64,
    pub p_computer: f64,
    pub p_rcs: f64,
    pub p_bus: f64,
    pub p_software: f64,
    pub p_memory: f64,
    /// Chance that a downlink pass corrupts the data.
    pub p_corrupt: f64,
    /// Hours from corruption to degraded operation.
    pub corrupt_delay: f64,
    /// Alarm detection probability.
    pub d_a: f64,
    /// Operator compliance probability.
    pub h: f64,
    /// Hours for the safe-mode command to reach the satellite.
    pub ground_delay: f64,
    /// Quality-control detection probability.
    pub d_q: f64,
}

impl Default for SatelliteParams {
    fn default() -> Self {
        SatelliteParams {
            cycles: 20,
            mode_duration: 0.25,
            p_receiver: 2e-4,
            p_antenna: 1e-4,
            p_transmitter: 2e-4,
            p_computer: 1e-4,
            p_rcs: 1e-4,
            p_bus: 1e-4,
            p_software: 3e-4,
            p_memory: 2e-4,
            p_corrupt: 0.05,
            corrupt_delay: 0.125,
            d_a: 0.90,
            h: 0.98,
            ground_delay: 0.0625,
            d_q: 0.80,
        }
    }
}

impl SatelliteParams {
    fn failure(&self, part: &str) -> f64 {
        match part {
            "receiver" => self.p_receiver,
            "antenna" => self.p_antenna,
            "transmitter" => self.p_transmitter,
            "computer" => self.p_computer,
            "rcs" => self.p_rcs,
            "bus" => self.p_bus,
            "software" => self.p_software,
            "memory" => self.p_memory,
            _ => 0.0,
        }
    }

    /// Event on which `part` is exercised.
    fn stress_events(part: &str) -> &'static [&'static str] {
        match part {
            "receiver" | "antenna" => &["start", "enter_receive"],
            "rcs" | "bus" | "memory" => &["enter_collect"],
            "computer" | "software" => &["enter_process"],
            "transmitter" => &["enter_downlink"],
            _ => &[],
        }
    }
}

fn expr(text: &str) -> Expression {
    Expression::parse(text).expect("builder expressions parse")
}

fn any_down(parts: &[&str]) -> String {
    parts.iter().map(|p| format!("{p} == DOWN")).collect::<Vec<_>>().join(" || ")
}

fn all_up(parts: &[&str]) -> String {
    parts.iter().map(|p| format!("{p} == UP")).collect::<Vec<_>>().join(" && ")
}

fn outcome(target: &str, probability: f64, emits: &[&str]) -> OutcomeSpec {
    OutcomeSpec { target: target.into(), probability, emits: emits.iter().map(|e| e.to_string()).collect() }
}

fn demand(source: &str, trigger: &str, outcomes: Vec<OutcomeSpec>) -> TransitionSpec {
    TransitionSpec::Demand { source: source.into(), trigger: trigger.into(), outcomes }
}

fn fixed(source: &str, target: &str, time: f64, emits: &[&str]) -> TransitionSpec {
    TransitionSpec::Timed {
        source: source.into(),
        target: target.into(),
        distribution: Distribution::Fixed { time },
        rate_modifier: None,
        branchable: false,
        emits: emits.iter().map(|e| e.to_string()).collect(),
    }
}

fn guard(source: &str, guard: &str, target: &str) -> TransitionSpec {
    TransitionSpec::Conditional { source: source.into(), guard: expr(guard), target: target.into(), emits: vec![] }
}

fn component(name: &str, states: &[&str], transitions: Vec<TransitionSpec>) -> ComponentSpec {
    ComponentSpec { name: name.into(), states: states.iter().map(|s| s.to_string()).collect(), transitions }
}

fn part(name: &str, p: &SatelliteParams) -> ComponentSpec {
    let q = p.failure(name);
    let transitions = SatelliteParams::stress_events(name)
        .iter()
        .map(|ev| demand("UP", ev, vec![outcome("UP", 1.0 - q, &[]), outcome("DOWN", q, &[])]))
        .collect();
    component(name, &["UP", "DOWN"], transitions)
}

fn mode(p: &SatelliteParams, commandable: bool) -> ComponentSpec {
    let d = p.mode_duration;
    let mut t = vec![
        fixed("RECEIVE_COMMAND", "COLLECT_DATA", d, &["enter_collect"]),
        fixed("COLLECT_DATA", "PROCESS_DATA", d, &["enter_process"]),
        fixed("PROCESS_DATA", "DOWNLINK_DATA", d, &["enter_downlink"]),
        fixed("DOWNLINK_DATA", "STANDBY", d, &[]),
        fixed("STANDBY", "RECEIVE_COMMAND", d, &["enter_receive"]),
    ];
    for m in CYCLE {
        if m == "COLLECT_DATA" {
            t.push(guard(m, &any_down(&CRITICAL), "FAIL"));
            t.push(guard(m, "memory == DOWN", "SAFE"));
        } else {
            t.push(guard(m, &any_down(mode_requirements(m)), "SAFE"));
        }
    }
    t.push(guard("SAFE", &any_down(&CRITICAL), "FAIL"));
    for m in CYCLE.iter().filter(|_| commandable) {
        t.push(demand(m, "go_safe", vec![outcome("SAFE", 1.0, &[])]));
    }
    let mut states: Vec<&str> = CYCLE.to_vec();
    states.extend(["SAFE", "FAIL"]);
    component("mode", &states, t)
}

fn link(p: &SatelliteParams) -> ComponentSpec {
    component(
        "link",
        &["NOMINAL", "CORRUPT", "DEGRADED"],
        vec![
            demand(
                "NOMINAL",
                "enter_downlink",
                vec![outcome("NOMINAL", 1.0 - p.p_corrupt, &[]), outcome("CORRUPT", p.p_corrupt, &["bad_data"])],
            ),
            fixed("CORRUPT", "DEGRADED", p.corrupt_delay, &[]),
        ],
    )
}

fn end_states() -> Vec<EndStateSpec> {
    let end = |name: &str, predicate: Option<String>| EndStateSpec {
        name: name.into(),
        predicate: predicate.map(|p| expr(&p)),
        severity: name.into(),
        nominal: false,
    };
    let mut ends = vec![
        end("fail", Some("mode == FAIL".into())),
        end("degraded", Some("link == DEGRADED && mode != FAIL && mode != SAFE".into())),
        end("safe_recovered", Some(format!("mode == SAFE && {}", all_up(&CRITICAL)))),
        end("ok", None),
    ];
    ends[3].nominal = true;
    ends
}

fn assemble(name: &str, p: &SatelliteParams, extra: Vec<ComponentSpec>) -> SystemModel {
    let mut components: Vec<ComponentSpec> = HARDWARE.iter().map(|n| part(n, p)).collect();
    components.push(mode(p, !extra.is_empty()));
    components.push(link(p));
    components.extend(extra);
    let initial = components
        .iter()
        .map(|c| (c.name.clone(), c.states[0].clone()))
        .collect();
    SystemModel {
        name: name.into(),
        components,
        continuous_vars: vec![],
        end_states: end_states(),
        initial: InitialSpec { components: initial, vars: Default::default() },
        mission_time: p.cycles as f64 * CYCLE.len() as f64 * p.mode_duration,
    }
}

pub fn build_baseline() -> SystemModel {
    build_baseline_with(&SatelliteParams::default())
}

pub fn build_baseline_with(p: &SatelliteParams) -> SystemModel {
    assemble("satellite_baseline", p, vec![])
}

pub fn build_option_alarm() -> SystemModel {
    build_option_alarm_with(&SatelliteParams::default())
}

/// Ground alarm on bad downlink data, acted on by an operator who commands
/// safe mode after the ground delay.
pub fn build_option_alarm_with(p: &SatelliteParams) -> SystemModel {
    let alarm = component(
        "alarm",
        &["DETECT", "ACTIVATED", "NOT_ACTIVATED"],
        vec![demand(
            "DETECT",
            "bad_data",
            vec![outcome("ACTIVATED", p.d_a, &["alarm_on"]), outcome("NOT_ACTIVATED", 1.0 - p.d_a, &[])],
        )],
    );
    let human = component(
        "human",
        &["OBSERVE", "SEND_TO_SM", "NO_SM"],
        vec![
            demand("OBSERVE", "alarm_on", vec![outcome("SEND_TO_SM", p.h, &[]), outcome("NO_SM", 1.0 - p.h, &[])]),
            fixed("SEND_TO_SM", "OBSERVE", p.ground_delay, &["go_safe"]),
        ],
    );
    assemble("satellite_option_alarm", p, vec![alarm, human])
}

pub fn build_option_qc() -> SystemModel {
    build_option_qc_with(&SatelliteParams::default())
}

/// Onboard quality control that commands safe mode as soon as it sees
/// bad downlink data.
pub fn build_option_qc_with(p: &SatelliteParams) -> SystemModel {
    let qc = component(
        "qc",
        &["CHECK", "DETECTED", "MISSED"],
        vec![demand(
            "CHECK",
            "bad_data",
            vec![outcome("DETECTED", p.d_q, &["go_safe"]), outcome("MISSED", 1.0 - p.d_q, &[])],
        )],
    );
    assemble("satellite_option_qc", p, vec![qc])
}

pub fn build(variant: Variant, p: &SatelliteParams) -> SystemModel {
    match variant {
        Variant::Baseline => build_baseline_with(p),
        Variant::OptionAlarm => build_option_alarm_with(p),
        Variant::OptionQc => build_option_qc_with(p),
    }
}

/// File names of a variant's model and plan under the catalog directory.
pub fn file_names(variant: Variant) -> (String, String) {
    let stem = variant.as_str();
    (format!("{stem}.model.json"), format!("{stem}.plan.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaseStudyConfig {
    pub params: SatelliteParams,
    pub seed: u64,
    /// Guided stories per design.
    pub n_sequences: usize,
    pub top_k: usize,
    /// Run the guided comparison as well as the exact one.
    pub guided: bool,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        CaseStudyConfig { params: SatelliteParams::default(), seed: 2024, n_sequences: 5000, top_k: 5, guided: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudy {
    pub systematic: DesignComparison,
    pub guided: Option<DesignComparison>,
}

#[derive(Debug, thiserror::Error)]
pub enum CaseStudyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Risk(#[from] crate::risk::RiskError),
}

pub fn criterion() -> ComparisonCriterion {
    ComparisonCriterion { class: "degraded".into(), secondary: vec!["fail".into()] }
}

/// Explores the three designs exactly and, optionally, with guided
/// stories, and compares them on the degraded class.
pub fn run_case_study(cfg: &CaseStudyConfig) -> Result<CaseStudy, CaseStudyError> {
    let run = |mode: Mode| -> Result<DesignComparison, CaseStudyError> {
        let mut alts: Vec<(String, RiskReport)> = Vec::new();
        for v in Variant::ALL {
            let model = Arc::new(CompiledModel::new(&build(v, &cfg.params))?);
            let plan = build_plan(v);
            let n_sequences = if mode == Mode::Systematic { usize::MAX } else { cfg.n_sequences };
            let ex = ExplorationConfig { mode, seed: cfg.seed, n_sequences, ..Default::default() };
            let r = explore(&model, Some(&plan), &ex)?;
            alts.push((v.as_str().to_string(), assess(&r, cfg.top_k)));
        }
        Ok(compare_designs(&alts, &criterion())?)
    };
    let systematic = run(Mode::Systematic)?;
    let guided = if cfg.guided { Some(run(Mode::Guided)?) } else { None };
    Ok(CaseStudy { systematic, guided })
}
