use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{FuncEvent, Plan, PlanScenario};

/// Per-scenario progress: the number of leading events already observed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursors {
    pos: Vec<usize>,
}

impl Cursors {
    pub fn new(plan: &Plan) -> Cursors {
        Cursors { pos: vec![0; plan.scenarios.len()] }
    }

    pub fn position(&self, scenario: usize) -> usize {
        self.pos[scenario]
    }

    pub fn is_complete(&self, plan: &Plan, scenario: usize) -> bool {
        self.pos[scenario] >= plan.scenarios[scenario].events.len()
    }
}

/// Advances every scenario expecting `ev` next and returns the highest
/// importance among them, or 1 when none expects it.
pub fn match_event(plan: &Plan, cursors: &mut Cursors, ev: &FuncEvent) -> f64 {
    let mut best: Option<f64> = None;
    for (i, s) in plan.scenarios.iter().enumerate() {
        if s.events.get(cursors.pos[i]) == Some(ev) {
            cursors.pos[i] += 1;
            best = Some(best.map_or(s.importance, |b: f64| b.max(s.importance)));
        }
    }
    best.unwrap_or(1.0)
}

/// Importance of a prospective sequence of events without moving the
/// cursors: the maximum over its matched events, or 1 when none match.
pub fn peek_importance(plan: &Plan, cursors: &Cursors, events: &[FuncEvent]) -> f64 {
    peek_importance_with(plan, cursors, events, |_, imp| imp)
}

/// As [`peek_importance`], with the importance of each matched scenario
/// passed through `adjust(scenario, importance)`.
pub fn peek_importance_with(
    plan: &Plan,
    cursors: &Cursors,
    events: &[FuncEvent],
    adjust: impl Fn(&PlanScenario, f64) -> f64,
) -> f64 {
    let mut pos = cursors.pos.clone();
    let mut best: Option<f64> = None;
    for ev in events {
        for (i, s) in plan.scenarios.iter().enumerate() {
            if s.events.get(pos[i]) == Some(ev) {
                pos[i] += 1;
                let imp = adjust(s, s.importance);
                best = Some(best.map_or(imp, |b: f64| b.max(imp)));
            }
        }
    }
    best.unwrap_or(1.0)
}

/// A finished story reduced to functionality changes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StoryAbstract {
    pub events: Vec<FuncEvent>,
    pub end_state: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenSequence {
    pub events: Vec<FuncEvent>,
    pub end_state: String,
    /// Number of stories that followed it.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RefinementReport {
    pub stories: usize,
    /// Scenarios no story completed while ending in their target.
    pub never_realized: Vec<PlanScenario>,
    /// Observed sequences that no scenario for the same end state starts.
    pub unseen: Vec<UnseenSequence>,
}

impl RefinementReport {
    pub fn is_empty(&self) -> bool {
        self.never_realized.is_empty() && self.unseen.is_empty()
    }
}

impl fmt::Display for RefinementReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "plan refinement over {} stories", self.stories)?;
        writeln!(f, "never realized: {}", self.never_realized.len())?;
        for s in &self.never_realized {
            writeln!(f, "  {s}")?;
        }
        writeln!(f, "unseen: {}", self.unseen.len())?;
        for u in &self.unseen {
            let events: Vec<String> = u.events.iter().map(|e| e.to_string()).collect();
            writeln!(f, "  [{}] -> {} ({} stories)", events.join(", "), u.end_state, u.count)?;
        }
        Ok(())
    }
}

fn realizes(s: &PlanScenario, story: &StoryAbstract) -> bool {
    if s.target != story.end_state {
        return false;
    }
    let mut next = 0;
    for ev in &story.events {
        if s.events.get(next) == Some(ev) {
            next += 1;
        }
    }
    next == s.events.len()
}

/// Compares a plan with what the stories actually did. Never modifies the
/// plan.
pub fn refine_plan(plan: &Plan, stories: &[StoryAbstract]) -> RefinementReport {
    let never_realized = plan
        .scenarios
        .iter()
        .filter(|s| !stories.iter().any(|st| realizes(s, st)))
        .cloned()
        .collect();
    let mut unseen: BTreeMap<&StoryAbstract, usize> = BTreeMap::new();
    for st in stories {
        let planned = plan
            .scenarios
            .iter()
            .any(|s| s.target == st.end_state && st.events.starts_with(&s.events));
        if !planned {
            *unseen.entry(st).or_default() += 1;
        }
    }
    RefinementReport {
        stories: stories.len(),
        never_realized,
        unseen: unseen
            .into_iter()
            .map(|(st, count)| UnseenSequence { events: st.events.clone(), end_state: st.end_state.clone(), count })
            .collect(),
    }
}
