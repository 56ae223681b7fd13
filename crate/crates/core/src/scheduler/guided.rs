use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::CompiledModel;
use crate::planner::{
    match_event, peek_importance, peek_importance_with, Abstraction, Cursors, FuncEvent, Plan, PlanFile, Tracker,
};
use crate::simulator::{SimOptions, Simulator, Stop, TraceKind};

use super::{
    branch_key, distinct_matching, empty_estimates, entropy_score, finish_estimates, BranchStats, DepthExceeded,
    ExplorationConfig, ExplorationResult, ExploreError, Mode, StoryRecord, TargetReport, TruncationLedger,
    GUIDED_BATCH,
};

/// What targeted exploration steers towards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// Component `comp` entering state `state`.
    State { comp: usize, state: usize },
    Func(FuncEvent),
}

impl Target {
    /// Parses `component=STATE`, `lost:func` or `gained:func`.
    pub fn parse(text: &str, model: &CompiledModel, plan: &PlanFile) -> Result<Target, ExploreError> {
        let unknown = || ExploreError::UnknownTarget(text.to_string());
        if text.starts_with("lost:") || text.starts_with("gained:") {
            let ev: FuncEvent = text.parse().map_err(|_| unknown())?;
            if !plan.functionalities().contains(&ev.func) {
                return Err(unknown());
            }
            return Ok(Target::Func(ev));
        }
        let (c, s) = text.split_once('=').ok_or_else(unknown)?;
        let comp = model.comp_index(c.trim()).ok_or_else(unknown)?;
        let state = model.state_index(comp, s.trim()).ok_or_else(unknown)?;
        Ok(Target::State { comp, state })
    }
}

/// Normalized selection distribution `q_k ∝ p_k^α · I_k^β · H_k^γ`.
/// Branches with zero natural probability are never selected.
pub fn selection_probabilities(p: &[f64], i: &[f64], h: &[f64], alpha: f64, beta: f64, gamma: f64) -> Vec<f64> {
    let raw: Vec<f64> = p
        .iter()
        .zip(i.iter().zip(h))
        .map(|(&p, (&i, &h))| if p > 0.0 { p.powf(alpha) * i.powf(beta) * h.powf(gamma) } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 && total.is_finite() {
        return raw.iter().map(|r| r / total).collect();
    }
    let total: f64 = p.iter().sum();
    p.iter().map(|x| x / total).collect()
}

pub fn explore_guided(
    model: &Arc<CompiledModel>,
    plan: &PlanFile,
    cfg: &ExplorationConfig,
) -> Result<ExplorationResult, ExploreError> {
    run(model, plan, None, cfg)
}

/// Guided exploration with importance multiplied by `cfg.boost` wherever
/// it leads towards `target`.
pub fn explore_targeted(
    model: &Arc<CompiledModel>,
    plan: &PlanFile,
    target: &str,
    cfg: &ExplorationConfig,
) -> Result<ExplorationResult, ExploreError> {
    let t = Target::parse(target, model, plan)?;
    let mut r = run(model, plan, Some((target, t)), cfg)?;
    r.mode = Mode::Targeted;
    Ok(r)
}

struct Context<'a> {
    sim: Simulator,
    abs: Abstraction,
    plan: Plan,
    cfg: &'a ExplorationConfig,
    target: Option<Target>,
}

enum Ending {
    End(usize),
    Depth { time: f64 },
}

struct Story {
    ending: Ending,
    probability: f64,
    weight: f64,
    visited: Vec<String>,
    trace: Vec<crate::simulator::TraceEvent>,
    events: Vec<FuncEvent>,
    contains_target: bool,
}

fn run(
    model: &Arc<CompiledModel>,
    plan: &PlanFile,
    target: Option<(&str, Target)>,
    cfg: &ExplorationConfig,
) -> Result<ExplorationResult, ExploreError> {
    cfg.check()?;
    let (target_text, target) = match target {
        Some((s, t)) => (Some(s.to_string()), Some(t)),
        None => (None, None),
    };
    let ctx = Context {
        sim: Simulator::new(Arc::clone(model), SimOptions { h: cfg.h, timed: cfg.timed_mode() }),
        abs: Abstraction::new(plan, model)?,
        plan: plan.plan(),
        cfg,
        target,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| ExploreError::Config(e.to_string()))?;

    let n_ends = model.end_states.len();
    let mut ests = empty_estimates(model);
    let mut stats = BranchStats::default();
    let mut ledger = TruncationLedger { rounds: 1, final_p_lim: cfg.p_lim, ..Default::default() };
    let mut depth_weight = 0.0;
    let mut stories = Vec::with_capacity(cfg.n_sequences);
    let n = cfg.n_sequences as u64;

    let mut start = 0u64;
    while start < n {
        let end = (start + GUIDED_BATCH as u64).min(n);
        let frozen = &stats;
        let batch: Vec<Story> =
            pool.install(|| (start..end).into_par_iter().map(|i| story(&ctx, frozen, i)).collect::<Result<_, _>>())?;
        let mut update = BranchStats::default();
        for (k, st) in batch.into_iter().enumerate() {
            let index = start + k as u64;
            match st.ending {
                Ending::End(e) => {
                    let est = &mut ests[e];
                    est.sum_w += st.weight;
                    est.sum_w2 += st.weight * st.weight;
                    est.n_stories += 1;
                    for key in &st.visited {
                        update.record(key, e, n_ends);
                    }
                    stories.push(StoryRecord {
                        seed: cfg.seed,
                        index,
                        end_state: model.end_states[e].name.clone(),
                        probability: st.probability,
                        weight: st.weight,
                        trace: st.trace,
                        events: st.events,
                        contains_target: st.contains_target,
                    });
                }
                Ending::Depth { time } => {
                    depth_weight += st.weight;
                    ledger.depth_exceeded_count += 1;
                    ledger.depth_exceeded.push(DepthExceeded {
                        probability: st.probability,
                        time,
                        path: st
                            .trace
                            .iter()
                            .filter(|e| e.kind == TraceKind::BranchTaken)
                            .map(|e| e.detail.clone())
                            .collect(),
                    });
                }
            }
        }
        stats.merge(&update);
        start = end;
    }
    ledger.depth_exceeded_mass = depth_weight / n as f64;

    finish_estimates(Mode::Guided, &mut ests, n);
    let mut notes = Vec::new();
    let target = target_text.map(|t| {
        let total = stories.iter().filter(|s| s.contains_target).count() as u64;
        if total == 0 {
            notes.push(format!("no story reached target {t}"));
        }
        TargetReport { target: t, matching: distinct_matching(&stories), total_matching: total }
    });
    Ok(ExplorationResult {
        mode: Mode::Guided,
        model: model.spec.name.clone(),
        seeds: vec![cfg.seed],
        n_stories: n,
        end_states: ests,
        stories,
        ledger,
        branch_stats: stats,
        target,
        notes,
    })
}

/// Runs story `index` against frozen branch statistics.
fn story(ctx: &Context, stats: &BranchStats, index: u64) -> Result<Story, ExploreError> {
    let cfg = ctx.cfg;
    let sim = &ctx.sim;
    let m = sim.model();
    let k = m.end_states.len();
    let mut s = sim.init_stream(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index | 1 << 63);
    let mut tracker = Tracker::new(&ctx.abs, &m.initial_states);
    let mut cursors = Cursors::new(&ctx.plan);
    let mut events = Vec::new();
    let mut visited = Vec::new();
    let (mut prob, mut weight) = (1.0, 1.0);
    let mut depth = 0;

    let ending = loop {
        let stop = sim.run(&mut s)?;
        for ev in tracker.advance(&ctx.abs, s.trace()) {
            match_event(&ctx.plan, &mut cursors, &ev);
            events.push(ev);
        }
        let bp = match stop {
            Stop::Ended(e) => break Ending::End(e),
            Stop::Branch(bp) if depth >= cfg.max_depth => {
                let _ = bp;
                break Ending::Depth { time: s.clock() };
            }
            Stop::Branch(bp) => bp,
        };
        let p: Vec<f64> = bp.branches.iter().map(|b| b.probability).collect();
        let imp: Vec<f64> = bp.branches.iter().map(|b| importance(ctx, &tracker, &cursors, b.effect.change())).collect();
        let h: Vec<f64> = (0..p.len()).map(|j| entropy_score(stats, &branch_key(&bp.source, j), k)).collect();
        let q = selection_probabilities(&p, &imp, &h, cfg.alpha, cfg.beta, cfg.gamma);
        let j = sample(&q, rng.random::<f64>());
        prob *= p[j];
        weight *= p[j] / q[j];
        visited.push(branch_key(&bp.source, j));
        sim.apply_branch_index(&mut s, j)?;
        depth += 1;
    };

    let contains_target = match &ctx.target {
        None => false,
        Some(Target::Func(ev)) => events.contains(ev),
        Some(Target::State { comp, state }) => s
            .trace()
            .iter()
            .any(|e| e.change.is_some_and(|c| c.comp == *comp && c.to == *state)),
    };
    Ok(Story { ending, probability: prob, weight, visited, trace: s.trace().to_vec(), events, contains_target })
}

fn importance(ctx: &Context, tracker: &Tracker, cursors: &Cursors, change: Option<(usize, usize)>) -> f64 {
    let evs = match change {
        Some((c, t)) => ctx.abs.events_of_change(tracker.states(), c, t),
        None => Vec::new(),
    };
    let boost = ctx.cfg.boost;
    match &ctx.target {
        None => peek_importance(&ctx.plan, cursors, &evs),
        Some(Target::Func(target)) => {
            let i = peek_importance_with(&ctx.plan, cursors, &evs, |s, imp| if s.contains(target) { imp * boost } else { imp });
            if evs.contains(target) {
                i.max(boost * peek_importance(&ctx.plan, cursors, &evs))
            } else {
                i
            }
        }
        Some(Target::State { comp, state }) => {
            let i = peek_importance(&ctx.plan, cursors, &evs);
            if change == Some((*comp, *state)) {
                i * boost
            } else {
                i
            }
        }
    }
}

/// Inverse-CDF draw from a discrete distribution.
fn sample(q: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &x) in q.iter().enumerate() {
        if x <= 0.0 {
            continue;
        }
        acc += x;
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}
