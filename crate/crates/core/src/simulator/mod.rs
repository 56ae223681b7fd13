//! Hybrid discrete/continuous execution of a compiled model.
//!
//! A [`SimState`] is advanced one [`step`](Simulator::step) at a time. Each
//! step does exactly one of: end the story, fire a hazard-driven or guarded
//! transition, process one pending discrete event, or integrate the
//! continuous variables up to the next event or crossing. Demand
//! transitions with two or more outcomes stop at a [`BranchPoint`] that the
//! caller resolves with [`apply_branch`](Simulator::apply_branch).

mod integrate;
mod snapshot;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CompiledModel, Distribution, EvalCtx, EvalError, TransitionKind};

pub use integrate::Crossing;
pub use snapshot::{Snapshot, SNAPSHOT_VERSION};

/// Default RK4 step, in hours.
pub const DEFAULT_STEP: f64 = 0.01;

/// Conditional firing-time quantiles used for branchable timed transitions
/// in discretized mode.
pub const DISCRETIZATION_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

const ZERO_TIME_STEP_LIMIT: u32 = 100_000;

/// How stochastic timed transitions behave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimedMode {
    /// Firing times are drawn from the seeded generator.
    #[default]
    Sampled,
    /// Only fixed-time and branchable transitions fire; branchable ones
    /// become branch points over quantile bins.
    Discretized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub h: f64,
    pub timed: TimedMode,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { h: DEFAULT_STEP, timed: TimedMode::Sampled }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("evaluating {context} at t={time}: {source}")]
    Eval { context: String, time: f64, source: EvalError },
    #[error("rate modifier of {transition} is negative ({value}) at t={time}")]
    NegativeModifier { transition: String, value: f64, time: f64 },
    #[error("non-finite value for {what} at t={time}")]
    NonFinite { what: String, time: f64 },
    #[error("integration step underflow at t={time}")]
    StepUnderflow { time: f64 },
    #[error("no progress after {limit} zero-time steps at t={time}")]
    ZenoLimit { limit: u32, time: f64 },
    #[error("the story has already ended")]
    AlreadyEnded,
    #[error("no branch point is pending")]
    NoPendingBranch,
    #[error("branch {index} of point {point} does not belong to the pending branch point")]
    StaleBranch { point: u64, index: usize },
    #[error("uniform variate {0} outside (0, 1)")]
    InvalidUniform(f64),
    #[error("snapshot version {found} is not supported (expected {expected})")]
    SnapshotVersion { found: u32, expected: u32 },
    #[error("corrupted snapshot: {0}")]
    CorruptSnapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Transition,
    ThresholdCrossing,
    BranchTaken,
    EndState,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Transition => "transition",
            TraceKind::ThresholdCrossing => "threshold_crossing",
            TraceKind::BranchTaken => "branch_taken",
            TraceKind::EndState => "end_state",
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Component state change recorded with a `transition` trace event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub comp: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: TraceKind,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change: Option<StateChange>,
}

/// What applying a branch does to the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BranchEffect {
    /// Demand outcome: `comp` moves to `target` now.
    Outcome { comp: usize, trans: usize, outcome: usize, target: usize },
    /// Discretized timed transition scheduled to fire at `time`.
    FireAt { comp: usize, trans: usize, target: usize, time: f64 },
    /// Discretized timed transition that does not fire within the mission.
    NoFire { comp: usize, trans: usize },
}

impl BranchEffect {
    /// The component state change the branch eventually causes, if any.
    pub fn change(&self) -> Option<(usize, usize)> {
        match *self {
            BranchEffect::Outcome { comp, target, .. } | BranchEffect::FireAt { comp, target, .. } => {
                Some((comp, target))
            }
            BranchEffect::NoFire { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Id of the owning branch point.
    pub point: u64,
    pub index: usize,
    pub label: String,
    pub probability: f64,
    pub effect: BranchEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub id: u64,
    pub at_time: f64,
    /// Identifier of the transition being resolved.
    pub source: String,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum PendingKind {
    Raise { event: usize },
    Demand { comp: usize, event: usize },
    Timed { comp: usize, trans: usize },
    Discretize { comp: usize, trans: usize },
}

impl PendingKind {
    fn timer_of(&self) -> Option<usize> {
        match *self {
            PendingKind::Timed { comp, .. } | PendingKind::Discretize { comp, .. } => Some(comp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    time: f64,
    seq: u64,
    kind: PendingKind,
}

/// Integrated-hazard timer of a rate-modified timed transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Hazard {
    comp: usize,
    trans: usize,
    armed_at: f64,
    acc: f64,
    threshold: f64,
}

/// Complete, self-contained simulation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    clock: f64,
    states: Vec<usize>,
    vars: Vec<f64>,
    pending: Vec<Pending>,
    hazards: Vec<Hazard>,
    rng: ChaCha8Rng,
    trace: Vec<TraceEvent>,
    seq: u64,
    branch: Option<BranchPoint>,
    ended: Option<usize>,
    stalled: u32,
}

impl SimState {
    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Component states as indices into each component's state list.
    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn vars(&self) -> &[f64] {
        &self.vars
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn ended(&self) -> Option<usize> {
        self.ended
    }

    pub fn pending_branch(&self) -> Option<&BranchPoint> {
        self.branch.as_ref()
    }

    /// Product of the probabilities of all branches taken so far.
    pub fn path_probability(&self) -> f64 {
        path_probability(&self.trace)
    }

    /// Scheduled discrete events as `(time, description)`, soonest first.
    pub fn pending_events(&self) -> Vec<(f64, String)> {
        self.pending.iter().map(|p| (p.time, format!("{:?}", p.kind))).collect()
    }

    fn ctx(&self) -> EvalCtx<'_> {
        EvalCtx { t: self.clock, vars: &self.vars, states: &self.states }
    }

    fn push(&mut self, time: f64, kind: PendingKind) {
        let seq = self.seq;
        self.seq += 1;
        let at = self
            .pending
            .partition_point(|p| (p.time, p.seq) < (time, seq));
        self.pending.insert(at, Pending { time, seq, kind });
    }

    fn record(&mut self, kind: TraceKind, detail: String, prob: Option<f64>, change: Option<StateChange>) {
        self.trace.push(TraceEvent { time: self.clock, kind, detail, prob, change });
    }

    fn draw_uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }
}

/// Recomputes a story probability from its trace.
pub fn path_probability(trace: &[TraceEvent]) -> f64 {
    trace
        .iter()
        .filter(|e| e.kind == TraceKind::BranchTaken)
        .filter_map(|e| e.prob)
        .product()
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Advanced,
    AtBranchPoint(BranchPoint),
    /// Index of the end state reached.
    Ended(usize),
}

/// Result of running until something needs the caller.
#[derive(Debug, Clone, PartialEq)]
pub enum Stop {
    Branch(BranchPoint),
    Ended(usize),
}

/// Inverse-survival sampling: `u` is the survival probability of the
/// returned holding time.
pub fn sample_firing_time(dist: &Distribution, u: f64) -> Result<f64, SimError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(SimError::InvalidUniform(u));
    }
    Ok(match *dist {
        Distribution::Exponential { rate } => -u.ln() / rate,
        Distribution::Weibull { scale, shape } => scale * (-u.ln()).powf(1.0 / shape),
        Distribution::Fixed { time } => time,
    })
}

#[derive(Debug, Clone)]
pub struct Simulator {
    model: Arc<CompiledModel>,
    opts: SimOptions,
}

impl Simulator {
    pub fn new(model: Arc<CompiledModel>, opts: SimOptions) -> Self {
        Simulator { model, opts }
    }

    pub fn model(&self) -> &CompiledModel {
        &self.model
    }

    pub fn model_arc(&self) -> &Arc<CompiledModel> {
        &self.model
    }

    pub fn options(&self) -> SimOptions {
        self.opts
    }

    pub fn init(&self, seed: u64) -> SimState {
        self.init_stream(seed, 0)
    }

    /// Initial state whose generator uses stream `stream` of `seed`.
    pub fn init_stream(&self, seed: u64, stream: u64) -> SimState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let m = &self.model;
        let mut s = SimState {
            clock: 0.0,
            states: m.initial_states.clone(),
            vars: m.initial_vars.clone(),
            pending: Vec::new(),
            hazards: Vec::new(),
            rng,
            trace: Vec::new(),
            seq: 0,
            branch: None,
            ended: None,
            stalled: 0,
        };
        s.push(0.0, PendingKind::Raise { event: 0 });
        for c in 0..m.components.len() {
            self.arm(&mut s, c);
        }
        s
    }

    /// Runs until a branch point or an end state.
    pub fn run(&self, s: &mut SimState) -> Result<Stop, SimError> {
        loop {
            match self.step(s)? {
                StepOutcome::Advanced => {}
                StepOutcome::AtBranchPoint(bp) => return Ok(Stop::Branch(bp)),
                StepOutcome::Ended(e) => return Ok(Stop::Ended(e)),
            }
        }
    }

    pub fn step(&self, s: &mut SimState) -> Result<StepOutcome, SimError> {
        if s.ended.is_some() {
            return Err(SimError::AlreadyEnded);
        }
        if let Some(bp) = &s.branch {
            return Ok(StepOutcome::AtBranchPoint(bp.clone()));
        }
        let before = s.clock;
        let m = Arc::clone(&self.model);

        for (i, e) in m.end_states.iter().enumerate() {
            if let Some(p) = &e.predicate {
                let hit = p.truth(&s.ctx()).map_err(|err| eval_err(&format!("end state {}", e.name), s.clock, err))?;
                if hit {
                    return Ok(self.finish(s, i));
                }
            }
        }

        if let Some(j) = s.hazards.iter().position(|h| h.acc >= h.threshold) {
            let h = s.hazards.remove(j);
            self.fire_timed(s, h.comp, h.trans);
            return self.advanced(s, before);
        }

        for (c, comp) in m.components.iter().enumerate() {
            for t in &comp.transitions {
                if t.source != s.states[c] {
                    continue;
                }
                if let TransitionKind::Conditional { guard, target, emits } = &t.kind {
                    let hit = guard.truth(&s.ctx()).map_err(|err| eval_err(&t.id, s.clock, err))?;
                    if hit {
                        self.change(s, c, *target, &t.id, emits);
                        return self.advanced(s, before);
                    }
                }
            }
        }

        if s.clock >= m.mission_time {
            return Ok(self.finish(s, m.nominal_end));
        }

        if s.pending.first().is_some_and(|p| p.time <= s.clock) {
            let p = s.pending.remove(0);
            match p.kind {
                PendingKind::Raise { event } => {
                    let mut last = usize::MAX;
                    for &(c, _) in &m.demands_by_event[event] {
                        if c != last {
                            s.push(s.clock, PendingKind::Demand { comp: c, event });
                            last = c;
                        }
                    }
                }
                PendingKind::Demand { comp, event } => {
                    if let Some(bp) = self.resolve_demand(s, comp, event) {
                        return Ok(StepOutcome::AtBranchPoint(bp));
                    }
                }
                PendingKind::Timed { comp, trans } => self.fire_timed(s, comp, trans),
                PendingKind::Discretize { comp, trans } => {
                    if let Some(bp) = self.discretize(s, comp, trans) {
                        return Ok(StepOutcome::AtBranchPoint(bp));
                    }
                }
            }
            return self.advanced(s, before);
        }

        let next = s.pending.first().map_or(f64::INFINITY, |p| p.time);
        self.integrate(s, next.min(m.mission_time))?;
        self.advanced(s, before)
    }

    pub fn apply_branch(&self, s: &mut SimState, b: &Branch) -> Result<(), SimError> {
        let bp = s.branch.as_ref().ok_or(SimError::NoPendingBranch)?;
        if bp.id != b.point || bp.branches.get(b.index) != Some(b) {
            return Err(SimError::StaleBranch { point: b.point, index: b.index });
        }
        let bp = s.branch.take().expect("checked above");
        s.record(
            TraceKind::BranchTaken,
            format!("{}={}", bp.source, b.label),
            Some(b.probability),
            None,
        );
        match b.effect {
            BranchEffect::Outcome { comp, trans, outcome, target } => {
                let t = &self.model.components[comp].transitions[trans];
                let TransitionKind::Demand { outcomes, .. } = &t.kind else {
                    unreachable!("outcome branch on a demand transition")
                };
                let emits = outcomes[outcome].emits.clone();
                self.change(s, comp, target, &t.id.clone(), &emits);
            }
            BranchEffect::FireAt { comp, trans, time, .. } => {
                s.push(time, PendingKind::Timed { comp, trans })
            }
            BranchEffect::NoFire { .. } => {}
        }
        Ok(())
    }

    /// Applies branch `index` of the pending branch point.
    pub fn apply_branch_index(&self, s: &mut SimState, index: usize) -> Result<(), SimError> {
        let bp = s.branch.as_ref().ok_or(SimError::NoPendingBranch)?;
        let b = bp
            .branches
            .get(index)
            .cloned()
            .ok_or(SimError::StaleBranch { point: bp.id, index })?;
        self.apply_branch(s, &b)
    }

    pub fn snapshot(&self, s: &SimState) -> Snapshot {
        Snapshot::capture(s)
    }

    /// Restores a snapshot taken from a state of this simulator's model.
    pub fn restore(&self, snap: &Snapshot) -> Result<SimState, SimError> {
        let s = snap.restore()?;
        let m = &self.model;
        let shape_ok = s.states.len() == m.components.len()
            && s.vars.len() == m.vars.len()
            && s.states.iter().zip(&m.components).all(|(&st, c)| st < c.states.len());
        if !shape_ok {
            return Err(SimError::CorruptSnapshot("state does not match the model".into()));
        }
        Ok(s)
    }

    fn advanced(&self, s: &mut SimState, before: f64) -> Result<StepOutcome, SimError> {
        if s.clock > before {
            s.stalled = 0;
        } else {
            s.stalled += 1;
            if s.stalled > ZERO_TIME_STEP_LIMIT {
                return Err(SimError::ZenoLimit { limit: ZERO_TIME_STEP_LIMIT, time: s.clock });
            }
        }
        Ok(StepOutcome::Advanced)
    }

    fn finish(&self, s: &mut SimState, end: usize) -> StepOutcome {
        s.ended = Some(end);
        s.pending.clear();
        s.hazards.clear();
        let name = self.model.end_states[end].name.clone();
        s.record(TraceKind::EndState, name, None, None);
        StepOutcome::Ended(end)
    }

    fn resolve_demand(&self, s: &mut SimState, comp: usize, event: usize) -> Option<BranchPoint> {
        let m = &self.model;
        let (ti, t) = m.components[comp].transitions.iter().enumerate().find(|(_, t)| {
            t.source == s.states[comp]
                && matches!(t.kind, TransitionKind::Demand { trigger, .. } if trigger == event)
        })?;
        let TransitionKind::Demand { outcomes, .. } = &t.kind else { unreachable!() };
        if outcomes.len() == 1 {
            self.change(s, comp, outcomes[0].target, &t.id, &outcomes[0].emits);
            return None;
        }
        let id = s.seq;
        s.seq += 1;
        let branches = outcomes
            .iter()
            .enumerate()
            .map(|(k, o)| Branch {
                point: id,
                index: k,
                label: m.state_name(comp, o.target).to_string(),
                probability: o.probability,
                effect: BranchEffect::Outcome { comp, trans: ti, outcome: k, target: o.target },
            })
            .collect();
        let bp = BranchPoint { id, at_time: s.clock, source: t.id.clone(), branches };
        s.branch = Some(bp.clone());
        Some(bp)
    }

    fn discretize(&self, s: &mut SimState, comp: usize, trans: usize) -> Option<BranchPoint> {
        let t = &self.model.components[comp].transitions[trans];
        let TransitionKind::Timed { target, distribution, .. } = &t.kind else { unreachable!() };
        let fire = distribution.cdf(self.model.mission_time - s.clock);
        if fire <= 0.0 {
            return None;
        }
        let id = s.seq;
        s.seq += 1;
        let mut branches: Vec<Branch> = DISCRETIZATION_QUANTILES
            .iter()
            .enumerate()
            .map(|(k, q)| Branch {
                point: id,
                index: k,
                label: format!("fire@q{q}"),
                probability: fire / DISCRETIZATION_QUANTILES.len() as f64,
                effect: BranchEffect::FireAt {
                    comp,
                    trans,
                    target: *target,
                    time: s.clock + distribution.quantile(q * fire),
                },
            })
            .collect();
        branches.push(Branch {
            point: id,
            index: branches.len(),
            label: "no_fire".into(),
            probability: 1.0 - fire,
            effect: BranchEffect::NoFire { comp, trans },
        });
        let bp = BranchPoint { id, at_time: s.clock, source: t.id.clone(), branches };
        s.branch = Some(bp.clone());
        Some(bp)
    }

    fn fire_timed(&self, s: &mut SimState, comp: usize, trans: usize) {
        let t = &self.model.components[comp].transitions[trans];
        let TransitionKind::Timed { target, emits, .. } = &t.kind else { unreachable!() };
        self.change(s, comp, *target, &t.id, emits);
    }

    /// Moves `comp` to `target`, re-arms its timers and raises `emits`.
    fn change(&self, s: &mut SimState, comp: usize, target: usize, id: &str, emits: &[usize]) {
        let m = &self.model;
        let from = s.states[comp];
        s.states[comp] = target;
        let c = &m.components[comp];
        s.record(
            TraceKind::Transition,
            format!("{}:{}->{} [{}]", c.name, c.states[from], c.states[target], id),
            None,
            Some(StateChange { comp, from, to: target }),
        );
        s.pending.retain(|p| p.kind.timer_of() != Some(comp));
        s.hazards.retain(|h| h.comp != comp);
        self.arm(s, comp);
        for &event in emits {
            s.push(s.clock, PendingKind::Raise { event });
        }
    }

    fn arm(&self, s: &mut SimState, comp: usize) {
        let c = &self.model.components[comp];
        for (ti, t) in c.transitions.iter().enumerate() {
            if t.source != s.states[comp] {
                continue;
            }
            let TransitionKind::Timed { distribution, modifier, branchable, .. } = &t.kind else {
                continue;
            };
            if let Distribution::Fixed { time } = *distribution {
                s.push(s.clock + time, PendingKind::Timed { comp, trans: ti });
                continue;
            }
            match self.opts.timed {
                TimedMode::Sampled if modifier.is_some() => {
                    let u = s.draw_uniform();
                    s.hazards.push(Hazard {
                        comp,
                        trans: ti,
                        armed_at: s.clock,
                        acc: 0.0,
                        threshold: -u.ln(),
                    });
                }
                TimedMode::Sampled => {
                    let u = s.draw_uniform();
                    let dt = sample_firing_time(distribution, u).expect("u in (0, 1)");
                    s.push(s.clock + dt, PendingKind::Timed { comp, trans: ti });
                }
                TimedMode::Discretized if *branchable => {
                    s.push(s.clock, PendingKind::Discretize { comp, trans: ti })
                }
                TimedMode::Discretized => {}
            }
        }
    }
}

fn eval_err(context: &str, time: f64, source: EvalError) -> SimError {
    SimError::Eval { context: context.to_string(), time, source }
}

#[cfg(test)]
mod tests;
