use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::PlannerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Change {
    Lost,
    Gained,
}

/// A functionality becoming unavailable (`lost:f`) or available again
/// (`gained:f`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FuncEvent {
    pub change: Change,
    pub func: String,
}

impl FuncEvent {
    pub fn lost(func: &str) -> Self {
        FuncEvent { change: Change::Lost, func: func.to_string() }
    }

    pub fn gained(func: &str) -> Self {
        FuncEvent { change: Change::Gained, func: func.to_string() }
    }
}

impl fmt::Display for FuncEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.change {
            Change::Lost => "lost",
            Change::Gained => "gained",
        };
        write!(f, "{tag}:{}", self.func)
    }
}

impl FromStr for FuncEvent {
    type Err = PlannerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PlannerError::Schema(format!("`{s}` is not of the form lost:<name> or gained:<name>"));
        let (tag, func) = s.split_once(':').ok_or_else(bad)?;
        let change = match tag {
            "lost" => Change::Lost,
            "gained" => Change::Gained,
            _ => return Err(bad()),
        };
        if func.is_empty() {
            return Err(bad());
        }
        Ok(FuncEvent { change, func: func.to_string() })
    }
}

impl Serialize for FuncEvent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FuncEvent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsmTransition {
    pub from: String,
    pub to: String,
    pub event: FuncEvent,
}

/// Abstract system states linked by functionality-change events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractFsm {
    pub states: Vec<String>,
    pub initial: String,
    /// Goal state -> model end state it stands for.
    pub goals: BTreeMap<String, String>,
    pub transitions: Vec<FsmTransition>,
}

impl AbstractFsm {
    pub fn check(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let mut seen = BTreeSet::new();
        for s in &self.states {
            if !seen.insert(s.as_str()) {
                errors.push(format!("duplicate FSM state `{s}`"));
            }
        }
        if !seen.contains(self.initial.as_str()) {
            errors.push(format!("initial state `{}` is not declared", self.initial));
        }
        if self.goals.is_empty() {
            errors.push("the FSM declares no goal states".to_string());
        }
        for g in self.goals.keys() {
            if !seen.contains(g.as_str()) {
                errors.push(format!("goal state `{g}` is not declared"));
            }
        }
        let mut labels = BTreeSet::new();
        for t in &self.transitions {
            for s in [&t.from, &t.to] {
                if !seen.contains(s.as_str()) {
                    errors.push(format!("transition references undeclared state `{s}`"));
                }
            }
            if !labels.insert((t.from.as_str(), &t.event)) {
                errors.push(format!("state `{}` has two transitions labelled `{}`", t.from, t.event));
            }
        }
        errors
    }
}

fn default_importance() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanScenario {
    pub events: Vec<FuncEvent>,
    /// End state the scenario leads to.
    pub target: String,
    #[serde(default = "default_importance", skip_serializing_if = "is_one")]
    pub importance: f64,
}

impl PlanScenario {
    pub fn new(events: Vec<FuncEvent>, target: &str) -> Self {
        PlanScenario { events, target: target.to_string(), importance: 1.0 }
    }

    pub fn contains(&self, ev: &FuncEvent) -> bool {
        self.events.contains(ev)
    }
}

impl fmt::Display for PlanScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let events: Vec<String> = self.events.iter().map(|e| e.to_string()).collect();
        write!(f, "[{}] -> {}", events.join(", "), self.target)?;
        if self.importance != 1.0 {
            write!(f, " (importance {})", self.importance)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Plan {
    pub scenarios: Vec<PlanScenario>,
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPlan {
    pub plan: Plan,
    pub warnings: Vec<String>,
}

/// Enumerates every simple path of at most `max_len` transitions from the
/// initial state to each goal state. Paths may pass through other goals.
pub fn generate_plan(
    fsm: &AbstractFsm,
    functionalities: &BTreeSet<String>,
    max_len: usize,
) -> Result<GeneratedPlan, PlannerError> {
    let errors = fsm.check();
    if !errors.is_empty() {
        return Err(PlannerError::Invalid(errors));
    }
    let mut warnings = Vec::new();
    let unknown: BTreeSet<&str> = fsm
        .transitions
        .iter()
        .map(|t| t.event.func.as_str())
        .filter(|f| !functionalities.contains(*f))
        .collect();
    for f in unknown {
        warnings.push(format!("FSM label references unknown functionality `{f}`"));
    }

    let mut scenarios = Vec::new();
    let mut path: Vec<&FsmTransition> = Vec::new();
    let mut visited = vec![fsm.initial.as_str()];
    walk(fsm, &fsm.initial, max_len, &mut path, &mut visited, &mut scenarios);
    scenarios.sort_by(|a: &PlanScenario, b| (&a.target, &a.events).cmp(&(&b.target, &b.events)));

    for (goal, end) in &fsm.goals {
        let reached = scenarios.iter().any(|s| &s.target == end);
        if !reached {
            warnings.push(format!(
                "goal `{goal}` is unreachable within {max_len} transitions"
            ));
        }
    }
    let provenance = BTreeMap::from([
        ("generator".to_string(), "simple-path enumeration".to_string()),
        ("max_len".to_string(), max_len.to_string()),
    ]);
    Ok(GeneratedPlan { plan: Plan { scenarios, provenance }, warnings })
}

fn walk<'a>(
    fsm: &'a AbstractFsm,
    at: &'a str,
    budget: usize,
    path: &mut Vec<&'a FsmTransition>,
    visited: &mut Vec<&'a str>,
    out: &mut Vec<PlanScenario>,
) {
    if let Some(end) = fsm.goals.get(at) {
        out.push(PlanScenario::new(path.iter().map(|t| t.event.clone()).collect(), end));
    }
    if budget == 0 {
        return;
    }
    for t in fsm.transitions.iter().filter(|t| t.from == at) {
        if visited.contains(&t.to.as_str()) {
            continue;
        }
        path.push(t);
        visited.push(&t.to);
        walk(fsm, &t.to, budget - 1, path, visited, out);
        visited.pop();
        path.pop();
    }
}
