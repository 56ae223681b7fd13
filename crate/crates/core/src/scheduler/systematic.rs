use std::sync::Arc;

use crate::model::CompiledModel;
use crate::planner::{Abstraction, PlanFile};
use crate::simulator::{BranchPoint, SimOptions, SimState, Simulator, Snapshot, Stop, TraceKind};

use super::{
    empty_estimates, finish_estimates, BranchStats, DepthExceeded, ExplorationConfig, ExplorationResult,
    ExploreError, Mode, SiblingOrder, StoryRecord, TruncationLedger,
};

/// A branch point waiting on the frontier.
struct FrontierEntry {
    snapshot: Snapshot,
    point: BranchPoint,
    /// Branch indices still to explore, next one last.
    unexplored: Vec<usize>,
    /// Probability of the path leading to the branch point.
    prob: f64,
    depth: usize,
}

/// Exhaustive depth-first exploration. With `max_rounds > 1`, rounds that
/// complete fewer than `n_sequences` sequences while truncating mass are
/// repeated with `p_lim / 10`.
pub fn explore_systematic(
    model: &Arc<CompiledModel>,
    plan: Option<&PlanFile>,
    cfg: &ExplorationConfig,
) -> Result<ExplorationResult, ExploreError> {
    cfg.check()?;
    let abs = plan.map(|p| Abstraction::new(p, model)).transpose()?;
    let sim = Simulator::new(Arc::clone(model), SimOptions { h: cfg.h, timed: cfg.timed_mode() });
    let mut p_lim = cfg.p_lim;
    let mut round = 1;
    loop {
        let mut r = one_round(&sim, abs.as_ref(), cfg, p_lim)?;
        r.ledger.rounds = round;
        let enough = r.n_stories as usize >= cfg.n_sequences;
        if enough || r.ledger.truncated_mass == 0.0 || round >= cfg.max_rounds {
            if cfg.workers > 1 {
                r.notes.push("systematic exploration runs on one worker".into());
            }
            return Ok(r);
        }
        p_lim /= 10.0;
        round += 1;
    }
}

struct Round<'a> {
    sim: &'a Simulator,
    abs: Option<&'a Abstraction>,
    cfg: &'a ExplorationConfig,
    ests: Vec<super::EndStateEstimate>,
    ledger: TruncationLedger,
    stories: Vec<StoryRecord>,
    frontier: Vec<FrontierEntry>,
}

impl Round<'_> {
    /// Runs a state to its next branch point or end and files the result.
    fn advance(&mut self, mut s: SimState, prob: f64, depth: usize) -> Result<(), ExploreError> {
        let m = self.sim.model();
        match self.sim.run(&mut s)? {
            Stop::Ended(e) => {
                let est = &mut self.ests[e];
                est.sum_w += prob;
                est.sum_w2 += prob * prob;
                est.n_stories += 1;
                let trace = s.trace().to_vec();
                let events = self.abs.map(|a| a.abstract_trace(&m.initial_states, &trace)).unwrap_or_default();
                self.stories.push(StoryRecord {
                    seed: self.cfg.seed,
                    index: self.stories.len() as u64,
                    end_state: m.end_states[e].name.clone(),
                    probability: prob,
                    weight: prob,
                    trace,
                    events,
                    contains_target: false,
                });
            }
            Stop::Branch(point) => {
                if depth >= self.cfg.max_depth {
                    self.ledger.depth_exceeded_mass += prob;
                    self.ledger.depth_exceeded_count += 1;
                    self.ledger.depth_exceeded.push(DepthExceeded {
                        probability: prob,
                        time: s.clock(),
                        path: s
                            .trace()
                            .iter()
                            .filter(|e| e.kind == TraceKind::BranchTaken)
                            .map(|e| e.detail.clone())
                            .collect(),
                    });
                    return Ok(());
                }
                let mut unexplored: Vec<usize> = (0..point.branches.len()).collect();
                if self.cfg.sibling_order == SiblingOrder::Declared {
                    unexplored.reverse();
                }
                self.frontier.push(FrontierEntry { snapshot: self.sim.snapshot(&s), point, unexplored, prob, depth });
            }
        }
        Ok(())
    }
}

fn one_round(
    sim: &Simulator,
    abs: Option<&Abstraction>,
    cfg: &ExplorationConfig,
    p_lim: f64,
) -> Result<ExplorationResult, ExploreError> {
    let m = sim.model();
    let mut r = Round {
        sim,
        abs,
        cfg,
        ests: empty_estimates(m),
        ledger: TruncationLedger { final_p_lim: p_lim, ..Default::default() },
        stories: Vec::new(),
        frontier: Vec::new(),
    };

    r.advance(sim.init(cfg.seed), 1.0, 0)?;
    while let Some(top) = r.frontier.last_mut() {
        let Some(idx) = top.unexplored.pop() else {
            r.frontier.pop();
            continue;
        };
        let branch = top.point.branches[idx].clone();
        let prob = top.prob * branch.probability;
        let depth = top.depth + 1;
        if prob < p_lim {
            r.ledger.truncated_mass += prob;
            r.ledger.truncated_count += 1;
            continue;
        }
        let mut s = sim.restore(&top.snapshot)?;
        sim.apply_branch(&mut s, &branch)?;
        r.advance(s, prob, depth)?;
        if r.stories.len() >= cfg.n_sequences {
            break;
        }
    }
    for entry in &r.frontier {
        for &i in &entry.unexplored {
            r.ledger.unexplored_mass += entry.prob * entry.point.branches[i].probability;
            r.ledger.unexplored_count += 1;
        }
    }

    let completed = r.stories.len() as u64;
    finish_estimates(Mode::Systematic, &mut r.ests, completed);
    Ok(ExplorationResult {
        mode: Mode::Systematic,
        model: m.spec.name.clone(),
        seeds: vec![cfg.seed],
        n_stories: completed,
        end_states: r.ests,
        stories: r.stories,
        ledger: r.ledger,
        branch_stats: BranchStats::default(),
        target: None,
        notes: Vec::new(),
    })
}
