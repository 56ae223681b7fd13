use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::planner::{
    AbstractFsm, ComponentTree, FsmTransition, FuncEvent, FunctionalityTree, Gate, PlanFile, TreeNode,
};

use super::mode_requirements;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    OptionAlarm,
    OptionQc,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::OptionAlarm, Variant::OptionQc];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::OptionAlarm => "option_alarm",
            Variant::OptionQc => "option_qc",
        }
    }
}

fn leaf(component: &str, up: &[&str]) -> TreeNode {
    TreeNode::Leaf { component: component.into(), up_states: up.iter().map(|s| s.to_string()).collect() }
}

fn and(name: &str, children: Vec<TreeNode>) -> TreeNode {
    TreeNode::Gate { name: name.into(), gate: Gate::And, children }
}

fn component_tree() -> ComponentTree {
    let up = |c: &str| leaf(c, &["UP"]);
    ComponentTree::new(and(
        "satellite",
        vec![
            and("communication", vec![up("receiver"), up("transmitter"), up("antenna")]),
            and("avionics", vec![up("computer"), up("software"), up("bus"), up("rcs")]),
            up("memory"),
            leaf("link", &["NOMINAL"]),
            leaf("mode", &["SAFE"]),
        ],
    ))
}

fn cf_matrix() -> BTreeMap<String, Vec<String>> {
    let reqs = |mode: &str| mode_requirements(mode).iter().map(|s| s.to_string()).collect::<Vec<_>>();
    BTreeMap::from([
        ("uplink".to_string(), reqs("RECEIVE_COMMAND")),
        ("collection".to_string(), reqs("COLLECT_DATA")),
        ("storage".to_string(), vec!["memory".to_string()]),
        ("processing".to_string(), reqs("PROCESS_DATA")),
        ("downlink".to_string(), reqs("DOWNLINK_DATA")),
        ("standby".to_string(), reqs("STANDBY")),
        ("data_quality".to_string(), vec!["link".to_string()]),
        ("safe_hold".to_string(), vec!["mode".to_string()]),
    ])
}

fn fsm(variant: Variant) -> AbstractFsm {
    let edge = |from: &str, to: &str, ev: FuncEvent| FsmTransition { from: from.into(), to: to.into(), event: ev };
    let mut transitions = vec![
        edge("Nominal", "Degraded", FuncEvent::lost("data_quality")),
        edge("Nominal", "Safe", FuncEvent::lost("storage")),
        edge("Nominal", "Safe", FuncEvent::lost("uplink")),
        edge("Nominal", "Safe", FuncEvent::lost("downlink")),
        edge("Nominal", "Fail", FuncEvent::lost("collection")),
    ];
    if variant != Variant::Baseline {
        transitions.push(edge("Degraded", "Safe", FuncEvent::gained("safe_hold")));
    }
    AbstractFsm {
        states: ["Nominal", "Degraded", "Safe", "Fail"].map(String::from).to_vec(),
        initial: "Nominal".into(),
        goals: BTreeMap::from([
            ("Nominal".to_string(), "ok".to_string()),
            ("Degraded".to_string(), "degraded".to_string()),
            ("Safe".to_string(), "safe_recovered".to_string()),
            ("Fail".to_string(), "fail".to_string()),
        ]),
        transitions,
    }
}

/// Trees, matrix, FSM and generated scenarios for a design. The degraded
/// scenario carries extra importance.
pub fn build_plan(variant: Variant) -> PlanFile {
    let mut plan = PlanFile {
        component_tree: component_tree(),
        functionality_tree: FunctionalityTree {
            name: "observation".into(),
            children: cf_matrix()
                .keys()
                .map(|f| FunctionalityTree { name: f.clone(), children: vec![] })
                .collect(),
        },
        cf_matrix: cf_matrix(),
        fsm: fsm(variant),
        scenarios: vec![],
        provenance: BTreeMap::new(),
    };
    plan.regenerate(4).expect("satellite FSM is well formed");
    for s in &mut plan.scenarios {
        if s.target == "degraded" {
            s.importance = 10.0;
        }
    }
    plan
}
