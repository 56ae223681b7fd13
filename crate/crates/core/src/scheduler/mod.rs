//! Exploration strategies over a model's branch points.
//!
//! * Systematic: exhaustive depth-first event tree with cumulative
//!   probability truncation. Exact for demand-only models.
//! * Guided: randomized stories whose branch choice favours probable,
//!   planned and uncertain branches, with importance-sampling weights that
//!   keep the end-state estimates unbiased.
//! * Targeted: guided exploration with extra weight on a chosen event.

mod guided;
mod systematic;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CompiledModel;
use crate::planner::{FuncEvent, PlannerError};
use crate::simulator::{SimError, TimedMode, TraceEvent, DEFAULT_STEP};

pub use guided::{explore_guided, explore_targeted, selection_probabilities, Target};
pub use systematic::explore_systematic;

/// Lower bound of the normalized entropy score.
pub const ENTROPY_FLOOR: f64 = 0.05;

/// Stories sharing one frozen copy of the branch statistics.
pub const GUIDED_BATCH: usize = 32;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Systematic,
    Guided,
    Targeted,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Systematic => "systematic",
            Mode::Guided => "guided",
            Mode::Targeted => "targeted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiblingOrder {
    #[default]
    Declared,
    Reversed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationConfig {
    pub mode: Mode,
    /// Paths whose cumulative probability drops below this are truncated.
    pub p_lim: f64,
    pub n_sequences: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Branch points allowed along one story.
    pub max_depth: usize,
    /// Systematic rounds, each with `p_lim` divided by 10, while fewer than
    /// `n_sequences` sequences complete.
    pub max_rounds: usize,
    pub sibling_order: SiblingOrder,
    /// Overrides the timed-transition handling; systematic mode defaults to
    /// discretized, the randomized modes to sampled.
    pub timed: Option<TimedMode>,
    pub h: f64,
    pub workers: usize,
    /// Importance multiplier for the target in targeted mode.
    pub boost: f64,
    pub target: Option<String>,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            mode: Mode::Systematic,
            p_lim: 0.0,
            n_sequences: 1000,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            seed: 0,
            max_depth: 512,
            max_rounds: 1,
            sibling_order: SiblingOrder::Declared,
            timed: None,
            h: DEFAULT_STEP,
            workers: 1,
            boost: 10.0,
            target: None,
        }
    }
}

impl ExplorationConfig {
    pub fn check(&self) -> Result<(), ExploreError> {
        let bad = |m: &str| Err(ExploreError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.p_lim) {
            return bad("p_lim must lie in [0, 1)");
        }
        if self.n_sequences == 0 {
            return bad("n_sequences must be at least 1");
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w.is_finite() && w >= 0.0) {
                return bad(&format!("{name} must be a finite number >= 0"));
            }
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1");
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return bad("h must be positive");
        }
        if !(self.boost.is_finite() && self.boost > 0.0) {
            return bad("boost must be positive");
        }
        Ok(())
    }

    pub fn timed_mode(&self) -> TimedMode {
        self.timed.unwrap_or(match self.mode {
            Mode::Systematic => TimedMode::Discretized,
            Mode::Guided | Mode::Targeted => TimedMode::Sampled,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExploreError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plan(#[from] PlannerError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown target event `{0}`")]
    UnknownTarget(String),
    #[error("cannot merge results: {0}")]
    Merge(String),
}

/// Per-branch visit and end-state counts, keyed `transition#branch`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchStats {
    pub counts: BTreeMap<String, BranchCounts>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchCounts {
    pub visits: u64,
    /// Indexed like the model's end states.
    pub ends: Vec<u64>,
}

pub fn branch_key(source: &str, index: usize) -> String {
    format!("{source}#{index}")
}

impl BranchStats {
    pub fn record(&mut self, key: &str, end: usize, n_ends: usize) {
        let c = self.counts.entry(key.to_string()).or_insert_with(|| BranchCounts {
            visits: 0,
            ends: vec![0; n_ends],
        });
        c.visits += 1;
        c.ends[end] += 1;
    }

    pub fn merge(&mut self, other: &BranchStats) {
        for (k, c) in &other.counts {
            let mine = self.counts.entry(k.clone()).or_insert_with(|| BranchCounts {
                visits: 0,
                ends: vec![0; c.ends.len()],
            });
            mine.visits += c.visits;
            for (a, b) in mine.ends.iter_mut().zip(&c.ends) {
                *a += b;
            }
        }
    }
}

/// Normalized entropy of the add-one smoothed end-state distribution seen
/// under a branch, clamped to `[ENTROPY_FLOOR, 1]`.
pub fn entropy_score(bs: &BranchStats, key: &str, k: usize) -> f64 {
    if k <= 1 {
        return ENTROPY_FLOOR;
    }
    let (n, counts): (u64, &[u64]) = match bs.counts.get(key) {
        Some(c) => (c.visits, &c.ends),
        None => (0, &[]),
    };
    let denom = (n + k as u64) as f64;
    let h: f64 = (0..k)
        .map(|i| {
            let p = (counts.get(i).copied().unwrap_or(0) + 1) as f64 / denom;
            -p * p.ln()
        })
        .sum();
    (h / (k as f64).ln()).clamp(ENTROPY_FLOOR, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndStateEstimate {
    pub name: String,
    pub severity: String,
    pub estimate: f64,
    /// Variance of the estimate (zero for systematic results).
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_stories: u64,
    pub sum_w: f64,
    pub sum_w2: f64,
}

impl EndStateEstimate {
    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthExceeded {
    pub probability: f64,
    pub time: f64,
    /// Branches taken, as `transition=label`.
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TruncationLedger {
    pub truncated_mass: f64,
    pub truncated_count: u64,
    /// Mass left on the frontier when the sequence budget ran out.
    pub unexplored_mass: f64,
    pub unexplored_count: u64,
    pub depth_exceeded_mass: f64,
    pub depth_exceeded_count: u64,
    pub depth_exceeded: Vec<DepthExceeded>,
    pub rounds: usize,
    pub final_p_lim: f64,
}

impl TruncationLedger {
    fn merge(&mut self, o: &TruncationLedger) {
        self.truncated_mass += o.truncated_mass;
        self.truncated_count += o.truncated_count;
        self.unexplored_mass += o.unexplored_mass;
        self.unexplored_count += o.unexplored_count;
        self.depth_exceeded_mass += o.depth_exceeded_mass;
        self.depth_exceeded_count += o.depth_exceeded_count;
        self.depth_exceeded.extend(o.depth_exceeded.iter().cloned());
        self.rounds = self.rounds.max(o.rounds);
        self.final_p_lim = self.final_p_lim.min(o.final_p_lim);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryRecord {
    pub seed: u64,
    pub index: u64,
    pub end_state: String,
    /// Product of the natural probabilities of the branches taken.
    pub probability: f64,
    /// Importance-sampling weight (equals `probability` in systematic mode).
    pub weight: f64,
    pub trace: Vec<TraceEvent>,
    /// Functionality changes, when a plan was supplied.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<FuncEvent>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub contains_target: bool,
}

impl StoryRecord {
    /// Branches taken, as `transition=label`; identifies the path.
    pub fn path(&self) -> Vec<&str> {
        self.trace
            .iter()
            .filter(|e| e.kind == crate::simulator::TraceKind::BranchTaken)
            .map(|e| e.detail.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: String,
    /// Indices into `stories` of distinct stories containing the target.
    pub matching: Vec<usize>,
    pub total_matching: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationResult {
    pub mode: Mode,
    pub model: String,
    pub seeds: Vec<u64>,
    /// Completed sequences (systematic) or stories run (guided).
    pub n_stories: u64,
    pub end_states: Vec<EndStateEstimate>,
    pub stories: Vec<StoryRecord>,
    pub ledger: TruncationLedger,
    pub branch_stats: BranchStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ExplorationResult {
    pub fn estimate(&self, end_state: &str) -> Option<&EndStateEstimate> {
        self.end_states.iter().find(|e| e.name == end_state)
    }

    /// Probability mass of completed sequences (systematic mode).
    pub fn explored_mass(&self) -> f64 {
        self.end_states.iter().map(|e| e.sum_w).sum()
    }

    /// Explored, truncated, unexplored and depth-exceeded mass together.
    pub fn total_mass(&self) -> f64 {
        self.explored_mass() + self.ledger.truncated_mass + self.ledger.unexplored_mass + self.ledger.depth_exceeded_mass
    }
}

pub(crate) fn empty_estimates(model: &CompiledModel) -> Vec<EndStateEstimate> {
    model
        .end_states
        .iter()
        .map(|e| EndStateEstimate {
            name: e.name.clone(),
            severity: e.severity.clone(),
            estimate: 0.0,
            variance: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            n_stories: 0,
            sum_w: 0.0,
            sum_w2: 0.0,
        })
        .collect()
}

/// Derives estimates from the sufficient statistics.
pub(crate) fn finish_estimates(mode: Mode, ests: &mut [EndStateEstimate], n: u64) {
    for e in ests {
        match mode {
            Mode::Systematic => {
                e.estimate = e.sum_w;
                e.variance = 0.0;
                e.ci_low = e.sum_w;
                e.ci_high = e.sum_w;
            }
            Mode::Guided | Mode::Targeted => {
                if n == 0 {
                    continue;
                }
                let nf = n as f64;
                let mean = e.sum_w / nf;
                let var = if n > 1 {
                    ((e.sum_w2 - nf * mean * mean) / (nf - 1.0)).max(0.0) / nf
                } else {
                    0.0
                };
                let half = Z95 * var.sqrt();
                e.estimate = mean;
                e.variance = var;
                e.ci_low = (mean - half).max(0.0);
                e.ci_high = mean + half;
            }
        }
    }
}

/// Order-independent pooling of results from the same model and mode.
pub fn merge_results(rs: &[ExplorationResult]) -> Result<ExplorationResult, ExploreError> {
    let first = rs.first().ok_or_else(|| ExploreError::Merge("nothing to merge".into()))?;
    for r in rs {
        if r.mode != first.mode {
            return Err(ExploreError::Merge(format!(
                "mixed modes {} and {}",
                first.mode.as_str(),
                r.mode.as_str()
            )));
        }
        let names = |r: &ExplorationResult| r.end_states.iter().map(|e| e.name.clone()).collect::<Vec<_>>();
        if r.model != first.model || names(r) != names(first) {
            return Err(ExploreError::Merge("results come from different models".into()));
        }
        if first.target.as_ref().map(|t| &t.target) != r.target.as_ref().map(|t| &t.target) {
            return Err(ExploreError::Merge("results have different targets".into()));
        }
    }
    let mut out = first.clone();
    out.n_stories = rs.iter().map(|r| r.n_stories).sum();
    for (i, e) in out.end_states.iter_mut().enumerate() {
        e.n_stories = rs.iter().map(|r| r.end_states[i].n_stories).sum();
        e.sum_w = sum_sorted(rs.iter().map(|r| r.end_states[i].sum_w));
        e.sum_w2 = sum_sorted(rs.iter().map(|r| r.end_states[i].sum_w2));
    }
    finish_estimates(out.mode, &mut out.end_states, out.n_stories);
    out.ledger = TruncationLedger { final_p_lim: f64::INFINITY, ..Default::default() };
    out.branch_stats = BranchStats::default();
    let mut seeds = Vec::new();
    let mut stories = Vec::new();
    let mut notes = Vec::new();
    for r in rs {
        out.ledger.merge(&r.ledger);
        out.branch_stats.merge(&r.branch_stats);
        seeds.extend(r.seeds.iter().copied());
        stories.extend(r.stories.iter().cloned());
        notes.extend(r.notes.iter().cloned());
    }
    if rs.len() > 1 {
        out.ledger.truncated_mass = sum_sorted(rs.iter().map(|r| r.ledger.truncated_mass));
        out.ledger.unexplored_mass = sum_sorted(rs.iter().map(|r| r.ledger.unexplored_mass));
        out.ledger.depth_exceeded_mass = sum_sorted(rs.iter().map(|r| r.ledger.depth_exceeded_mass));
    }
    seeds.sort_unstable();
    seeds.dedup();
    stories.sort_by(|a, b| (a.seed, a.index).cmp(&(b.seed, b.index)));
    out.ledger.depth_exceeded.sort_by(|a, b| a.path.cmp(&b.path));
    notes.sort();
    notes.dedup();
    out.seeds = seeds;
    out.notes = notes;
    if let Some(t) = &mut out.target {
        t.total_matching = rs.iter().filter_map(|r| r.target.as_ref()).map(|t| t.total_matching).sum();
        t.matching = distinct_matching(&stories);
    }
    out.stories = stories;
    Ok(out)
}

/// Sums in a canonical order so pooling does not depend on input order.
fn sum_sorted(xs: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

fn distinct_matching(stories: &[StoryRecord]) -> Vec<usize> {
    let mut seen = std::collections::BTreeSet::new();
    stories
        .iter()
        .enumerate()
        .filter(|(_, s)| s.contains_target && seen.insert(s.path().join("|")))
        .map(|(i, _)| i)
        .collect()
}

/// Dispatches on `cfg.mode`. Guided and targeted modes need a plan;
/// targeted mode reads the target from `cfg.target`.
pub fn explore(
    model: &Arc<CompiledModel>,
    plan: Option<&crate::planner::PlanFile>,
    cfg: &ExplorationConfig,
) -> Result<ExplorationResult, ExploreError> {
    match cfg.mode {
        Mode::Systematic => explore_systematic(model, plan, cfg),
        Mode::Guided => {
            let plan = plan.ok_or_else(|| ExploreError::Config("guided mode needs a plan".into()))?;
            explore_guided(model, plan, cfg)
        }
        Mode::Targeted => {
            let plan = plan.ok_or_else(|| ExploreError::Config("targeted mode needs a plan".into()))?;
            let target = cfg
                .target
                .as_deref()
                .ok_or_else(|| ExploreError::Config("targeted mode needs a target event".into()))?;
            explore_targeted(model, plan, target, cfg)
        }
    }
}
