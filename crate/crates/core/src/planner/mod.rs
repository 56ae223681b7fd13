//! Abstract knowledge about the system: which components each
//! functionality needs, how functionality changes move the system between
//! abstract states, and the scenarios that follow from that.
//!
//! A plan file is one JSON document with keys `component_tree`,
//! `functionality_tree`, `cf_matrix`, `fsm` and `scenarios`.

mod fsm;
mod matching;
mod tree;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CompiledModel;
use crate::simulator::{TraceEvent, TraceKind};

pub use fsm::{generate_plan, AbstractFsm, Change, FsmTransition, FuncEvent, GeneratedPlan, Plan, PlanScenario};
pub use matching::{match_event, peek_importance, peek_importance_with, refine_plan, Cursors, RefinementReport, StoryAbstract, UnseenSequence};
pub use tree::{evaluate_tree, minimal_failure_sets, ComponentTree, Gate, Status, TreeNode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("no status given for component `{0}`")]
    MissingComponent(String),
    #[error("functionality `{func}` requires unknown node `{node}`")]
    DanglingNode { func: String, node: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("plan file does not match the expected structure: {0}")]
    Schema(String),
    #[error("invalid plan:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// Nested functionalities; leaves are atomic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalityTree {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<FunctionalityTree>,
}

impl FunctionalityTree {
    pub fn names(&self) -> Vec<&str> {
        let mut out = vec![self.name.as_str()];
        for c in &self.children {
            out.extend(c.names());
        }
        out
    }
}

/// Functionality -> names of the component-tree nodes it requires.
pub type CfMatrix = BTreeMap<String, Vec<String>>;

/// Availability of every functionality in the matrix under `sv`.
pub fn functionality_status(
    m: &CfMatrix,
    t: &ComponentTree,
    sv: &BTreeMap<String, Status>,
) -> Result<BTreeMap<String, bool>, PlannerError> {
    let mut resolved = Vec::with_capacity(m.len());
    for (func, nodes) in m {
        let found = nodes
            .iter()
            .map(|n| t.find(n).ok_or_else(|| PlannerError::DanglingNode { func: func.clone(), node: n.clone() }))
            .collect::<Result<Vec<_>, _>>()?;
        resolved.push((func, found));
    }
    let mut out = BTreeMap::new();
    for (func, nodes) in resolved {
        let mut available = true;
        for node in nodes {
            available &= node.evaluate(&|c| sv.get(c).copied())?.is_up();
        }
        out.insert(func.clone(), available);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub component_tree: ComponentTree,
    pub functionality_tree: FunctionalityTree,
    pub cf_matrix: CfMatrix,
    pub fsm: AbstractFsm,
    #[serde(default)]
    pub scenarios: Vec<PlanScenario>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

impl PlanFile {
    pub fn parse(text: &str) -> Result<PlanFile, PlannerError> {
        let p: PlanFile = serde_json::from_str(text).map_err(|e| PlannerError::Schema(e.to_string()))?;
        let errors = p.check();
        if errors.is_empty() {
            Ok(p)
        } else {
            Err(PlannerError::Invalid(errors))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn check(&self) -> Vec<String> {
        let mut errors = self.component_tree.check();
        let mut funcs = BTreeSet::new();
        for f in self.functionality_tree.names() {
            if !funcs.insert(f) {
                errors.push(format!("duplicate functionality `{f}`"));
            }
        }
        for (func, nodes) in &self.cf_matrix {
            if !funcs.contains(func.as_str()) {
                errors.push(format!("matrix row `{func}` is not in the functionality tree"));
            }
            for n in nodes {
                if self.component_tree.find(n).is_none() {
                    errors.push(format!("functionality `{func}` requires unknown node `{n}`"));
                }
            }
        }
        errors.extend(self.fsm.check());
        for (i, s) in self.scenarios.iter().enumerate() {
            if !(s.importance.is_finite() && s.importance > 0.0) {
                errors.push(format!("scenario {i} has non-positive importance {}", s.importance));
            }
        }
        errors
    }

    pub fn functionalities(&self) -> BTreeSet<String> {
        self.cf_matrix.keys().cloned().collect()
    }

    pub fn plan(&self) -> Plan {
        Plan { scenarios: self.scenarios.clone(), provenance: self.provenance.clone() }
    }

    /// Replaces the scenarios with freshly generated ones, keeping the
    /// importance of any scenario that already existed.
    pub fn regenerate(&mut self, max_len: usize) -> Result<Vec<String>, PlannerError> {
        let generated = generate_plan(&self.fsm, &self.functionalities(), max_len)?;
        let mut scenarios = generated.plan.scenarios;
        for s in &mut scenarios {
            if let Some(old) = self.scenarios.iter().find(|o| o.events == s.events && o.target == s.target) {
                s.importance = old.importance;
            }
        }
        self.scenarios = scenarios;
        self.provenance = generated.plan.provenance;
        Ok(generated.warnings)
    }
}

pub fn plan_load(path: &Path) -> Result<PlanFile, PlannerError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PlannerError::Io { path: path.display().to_string(), message: e.to_string() })?;
    PlanFile::parse(&text)
}

pub fn plan_store(plan: &PlanFile, path: &Path) -> Result<(), PlannerError> {
    std::fs::write(path, plan.to_json() + "\n")
        .map_err(|e| PlannerError::Io { path: path.display().to_string(), message: e.to_string() })
}

#[derive(Debug, Clone)]
enum BoundNode {
    Leaf { comp: usize, up: Vec<bool> },
    Gate { gate: Gate, children: Vec<usize> },
}

/// A plan's trees and matrix resolved against a model, evaluating
/// functionality availability directly from simulator state vectors.
#[derive(Debug, Clone)]
pub struct Abstraction {
    nodes: Vec<BoundNode>,
    funcs: Vec<(String, Vec<usize>)>,
}

impl Abstraction {
    pub fn new(plan: &PlanFile, model: &CompiledModel) -> Result<Abstraction, PlannerError> {
        let mut nodes = Vec::new();
        let mut names: Vec<(String, usize)> = Vec::new();
        let mut errors = Vec::new();
        flatten(&plan.component_tree.root, model, &mut nodes, &mut names, &mut errors);
        if !errors.is_empty() {
            return Err(PlannerError::Invalid(errors));
        }
        let mut funcs = Vec::new();
        for (func, reqs) in &plan.cf_matrix {
            let idx = reqs
                .iter()
                .map(|n| {
                    names
                        .iter()
                        .find(|(name, _)| name == n)
                        .map(|(_, i)| *i)
                        .ok_or_else(|| PlannerError::DanglingNode { func: func.clone(), node: n.clone() })
                })
                .collect::<Result<Vec<_>, _>>()?;
            funcs.push((func.clone(), idx));
        }
        Ok(Abstraction { nodes, funcs })
    }

    pub fn functionalities(&self) -> impl Iterator<Item = &str> {
        self.funcs.iter().map(|(f, _)| f.as_str())
    }

    fn up(&self, node: usize, states: &[usize]) -> bool {
        match &self.nodes[node] {
            BoundNode::Leaf { comp, up } => up[states[*comp]],
            BoundNode::Gate { gate: Gate::And, children } => children.iter().all(|&c| self.up(c, states)),
            BoundNode::Gate { gate: Gate::Or, children } => children.iter().any(|&c| self.up(c, states)),
        }
    }

    /// Availability per functionality, in matrix order.
    pub fn status(&self, states: &[usize]) -> Vec<bool> {
        self.funcs
            .iter()
            .map(|(_, req)| req.iter().all(|&n| self.up(n, states)))
            .collect()
    }

    pub fn diff(&self, before: &[bool], after: &[bool]) -> Vec<FuncEvent> {
        self.funcs
            .iter()
            .zip(before.iter().zip(after))
            .filter(|(_, (b, a))| b != a)
            .map(|((f, _), (_, &a))| if a { FuncEvent::gained(f) } else { FuncEvent::lost(f) })
            .collect()
    }

    /// Functionality changes caused by moving `comp` to `target`.
    pub fn events_of_change(&self, states: &[usize], comp: usize, target: usize) -> Vec<FuncEvent> {
        let before = self.status(states);
        let mut after_states = states.to_vec();
        after_states[comp] = target;
        self.diff(&before, &self.status(&after_states))
    }

    pub fn abstract_trace(&self, initial: &[usize], trace: &[TraceEvent]) -> Vec<FuncEvent> {
        let mut t = Tracker::new(self, initial);
        t.advance(self, trace)
    }
}

fn flatten(
    node: &TreeNode,
    model: &CompiledModel,
    nodes: &mut Vec<BoundNode>,
    names: &mut Vec<(String, usize)>,
    errors: &mut Vec<String>,
) -> usize {
    let me = nodes.len();
    nodes.push(BoundNode::Gate { gate: Gate::And, children: vec![] });
    names.push((node.name().to_string(), me));
    match node {
        TreeNode::Leaf { component, up_states } => match model.comp_index(component) {
            None => errors.push(format!("component tree leaf `{component}` is not a model component")),
            Some(c) => {
                let states = &model.components[c].states;
                for u in up_states {
                    if !states.contains(u) {
                        errors.push(format!("`{u}` is not a state of component `{component}`"));
                    }
                }
                let up = states.iter().map(|s| up_states.contains(s)).collect();
                nodes[me] = BoundNode::Leaf { comp: c, up };
            }
        },
        TreeNode::Gate { gate, children, .. } => {
            let kids = children.iter().map(|c| flatten(c, model, nodes, names, errors)).collect();
            nodes[me] = BoundNode::Gate { gate: *gate, children: kids };
        }
    }
    me
}

/// Follows a story's trace and reports functionality changes as they
/// happen.
#[derive(Debug, Clone)]
pub struct Tracker {
    states: Vec<usize>,
    status: Vec<bool>,
    consumed: usize,
}

impl Tracker {
    pub fn new(abs: &Abstraction, initial: &[usize]) -> Tracker {
        Tracker { states: initial.to_vec(), status: abs.status(initial), consumed: 0 }
    }

    /// Processes trace events not seen yet.
    pub fn advance(&mut self, abs: &Abstraction, trace: &[TraceEvent]) -> Vec<FuncEvent> {
        let mut out = Vec::new();
        for e in &trace[self.consumed.min(trace.len())..] {
            if let (TraceKind::Transition, Some(ch)) = (e.kind, e.change) {
                self.states[ch.comp] = ch.to;
                let status = abs.status(&self.states);
                out.extend(abs.diff(&self.status, &status));
                self.status = status;
            }
        }
        self.consumed = trace.len();
        out
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }
}
