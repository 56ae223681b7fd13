//! Acceptance suite: runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dpra_core::model::{parse_model, CompiledModel, SystemModel};
use dpra_core::planner::{
    evaluate_tree, generate_plan, minimal_failure_sets, refine_plan, AbstractFsm, ComponentTree, FsmTransition,
    FuncEvent, Gate, PlanFile, Status, StoryAbstract, TreeNode,
};
use dpra_core::satellite::{build, build_plan, run_case_study, CaseStudyConfig, SatelliteParams, Variant};
use dpra_core::scheduler::{
    explore_guided, explore_systematic, ExplorationConfig, ExplorationResult, Mode, SiblingOrder,
};
use dpra_core::simulator::{SimOptions, Simulator, Stop, TimedMode, TraceKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn compile(m: &SystemModel) -> Arc<CompiledModel> {
    Arc::new(CompiledModel::new(m).expect("model compiles"))
}

fn load(name: &str) -> SystemModel {
    parse_model(&std::fs::read_to_string(models_dir().join(name)).unwrap()).unwrap()
}

fn load_plan(name: &str) -> PlanFile {
    PlanFile::parse(&std::fs::read_to_string(models_dir().join(name)).unwrap()).unwrap()
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn exact_cfg() -> ExplorationConfig {
    ExplorationConfig { n_sequences: usize::MAX, ..Default::default() }
}

// ---------------------------------------------------------------------------
// Random demand-only models and their brute-force oracle.

const EVENTS: [&str; 4] = ["start", "e1", "e2", "e3"];

#[derive(Debug, Clone)]
struct DemandComp {
    trigger: usize,
    /// (probability, emitted event)
    outcomes: Vec<(f64, Option<usize>)>,
}

/// Component `i` has states `S`, `O0`, `O1`, ... and one demand from `S`.
/// End state `j` holds when any clause of `ends[j]` has all its
/// `(component, outcome)` atoms true.
#[derive(Debug, Clone)]
struct DemandModel {
    comps: Vec<DemandComp>,
    ends: Vec<Vec<Vec<(usize, usize)>>>,
}

fn random_probabilities(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
    let head: f64 = p[..k - 1].iter().sum();
    p[k - 1] = 1.0 - head;
    p
}

fn random_demand_model(rng: &mut ChaCha8Rng) -> DemandModel {
    let n = rng.random_range(1..=4);
    let triggers: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { rng.random_range(0..EVENTS.len()) }).collect();
    let emittable: Vec<usize> = triggers.iter().copied().filter(|&t| t != 0).collect::<BTreeSet<_>>().into_iter().collect();
    let comps = triggers
        .iter()
        .map(|&trigger| {
            let k = rng.random_range(1..=3);
            let outcomes = random_probabilities(rng, k)
                .into_iter()
                .map(|p| {
                    let emit = (!emittable.is_empty() && rng.random_bool(0.6))
                        .then(|| emittable[rng.random_range(0..emittable.len())]);
                    (p, emit)
                })
                .collect();
            DemandComp { trigger, outcomes }
        })
        .collect::<Vec<_>>();
    let ends = (0..rng.random_range(1..=3))
        .map(|_| {
            (0..rng.random_range(1..=2))
                .map(|_| {
                    (0..rng.random_range(1..=2))
                        .map(|_| {
                            let c = rng.random_range(0..n);
                            (c, rng.random_range(0..comps[c].outcomes.len()))
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    DemandModel { comps, ends }
}

impl DemandModel {
    fn end_names(&self) -> Vec<String> {
        (0..self.ends.len()).map(|j| format!("E{j}")).chain(["OK".to_string()]).collect()
    }

    fn to_model(&self) -> SystemModel {
        let comps: Vec<_> = self
            .comps
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut states = vec!["S".to_string()];
                states.extend((0..c.outcomes.len()).map(|o| format!("O{o}")));
                let outcomes: Vec<_> = c
                    .outcomes
                    .iter()
                    .enumerate()
                    .map(|(o, (p, e))| {
                        let emits: Vec<&str> = e.iter().map(|&e| EVENTS[e]).collect();
                        json!({"target": format!("O{o}"), "probability": p, "emits": emits})
                    })
                    .collect();
                json!({"name": format!("c{i}"), "states": states, "transitions": [
                    {"kind": "demand", "source": "S", "trigger": EVENTS[c.trigger], "outcomes": outcomes}]})
            })
            .collect();
        let mut ends: Vec<_> = self
            .ends
            .iter()
            .enumerate()
            .map(|(j, dnf)| {
                let clauses: Vec<String> = dnf
                    .iter()
                    .map(|cl| {
                        let atoms: Vec<String> = cl.iter().map(|(c, o)| format!("c{c} == O{o}")).collect();
                        format!("({})", atoms.join(" && "))
                    })
                    .collect();
                json!({"name": format!("E{j}"), "predicate": clauses.join(" || "), "severity": format!("s{j}")})
            })
            .collect();
        ends.push(json!({"name": "OK", "severity": "ok", "nominal": true}));
        let initial: BTreeMap<String, &str> = (0..self.comps.len()).map(|i| (format!("c{i}"), "S")).collect();
        let doc = json!({"name": "random_demand", "components": comps, "end_states": ends,
                         "initial": {"components": initial}, "mission_time": 10});
        parse_model(&doc.to_string()).expect("generated model is valid")
    }

    fn first_end(&self, states: &[Option<usize>]) -> Option<usize> {
        self.ends
            .iter()
            .position(|dnf| dnf.iter().any(|cl| cl.iter().all(|&(c, o)| states[c] == Some(o))))
    }

    /// Probability of each end state (nominal last) by enumerating every
    /// combination of outcomes in event order.
    fn oracle(&self) -> Vec<f64> {
        enum Item {
            Raise(usize),
            Demand(usize),
        }
        let mut out = vec![0.0; self.ends.len() + 1];
        let mut stack: Vec<(Vec<Option<usize>>, VecDeque<Item>, f64)> =
            vec![(vec![None; self.comps.len()], VecDeque::from([Item::Raise(0)]), 1.0)];
        while let Some((mut states, mut queue, p)) = stack.pop() {
            loop {
                if let Some(e) = self.first_end(&states) {
                    out[e] += p;
                    break;
                }
                match queue.pop_front() {
                    None => {
                        out[self.ends.len()] += p;
                        break;
                    }
                    Some(Item::Raise(ev)) => {
                        for (c, comp) in self.comps.iter().enumerate() {
                            if comp.trigger == ev {
                                queue.push_back(Item::Demand(c));
                            }
                        }
                    }
                    Some(Item::Demand(c)) if states[c].is_none() => {
                        let branches = &self.comps[c].outcomes;
                        for (o, (q, emit)) in branches.iter().enumerate().skip(1) {
                            let mut s = states.clone();
                            s[c] = Some(o);
                            let mut qu: VecDeque<Item> = queue
                                .iter()
                                .map(|i| match i {
                                    Item::Raise(e) => Item::Raise(*e),
                                    Item::Demand(d) => Item::Demand(*d),
                                })
                                .collect();
                            if let Some(e) = emit {
                                qu.push_back(Item::Raise(*e));
                            }
                            let w = if branches.len() == 1 { p } else { p * q };
                            stack.push((s, qu, w));
                        }
                        let (q, emit) = branches[0];
                        states[c] = Some(0);
                        if let Some(e) = emit {
                            queue.push_back(Item::Raise(e));
                        }
                        if branches.len() > 1 {
                            stack.push((states, queue, p * q));
                            break;
                        }
                    }
                    Some(Item::Demand(_)) => {}
                }
            }
        }
        out
    }
}

fn demand_corpus() -> Vec<DemandModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    (0..200).map(|_| random_demand_model(&mut rng)).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut paths = 0;
    for (i, dm) in demand_corpus().iter().enumerate() {
        let truth = dm.oracle();
        let r = explore_systematic(&compile(&dm.to_model()), None, &exact_cfg()).map_err(|e| e.to_string())?;
        paths += r.n_stories;
        for (name, want) in dm.end_names().iter().zip(&truth) {
            let got = r.estimate(name).map_or(0.0, |e| e.estimate);
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= 1e-12, || format!("model {i} end {name}: {got} vs oracle {want}"))?;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!("200 models, {paths} paths, max |d| {worst:.1e}"))
}

fn criterion_2() -> Outcome {
    let mut checked = 0;
    for (i, dm) in demand_corpus().iter().enumerate() {
        let m = compile(&dm.to_model());
        let mut truncated = Vec::new();
        for p_lim in [1e-2, 1e-3, 0.0] {
            for n_sequences in [usize::MAX, 2] {
                let cfg = ExplorationConfig { p_lim, n_sequences, ..Default::default() };
                let r = explore_systematic(&m, None, &cfg).map_err(|e| e.to_string())?;
                let l = &r.ledger;
                let total = r.explored_mass() + l.truncated_mass + l.unexplored_mass;
                ensure((total - 1.0).abs() <= 1e-9, || format!("model {i} p_lim {p_lim}: mass {total}"))?;
                if n_sequences == usize::MAX {
                    ensure(l.unexplored_mass == 0.0, || format!("model {i}: unexplored mass without a budget"))?;
                    truncated.push(l.truncated_mass);
                }
                checked += 1;
            }
        }
        ensure(truncated.windows(2).all(|w| w[1] <= w[0]), || format!("model {i}: truncated {truncated:?}"))?;
        ensure(truncated[2] == 0.0, || format!("model {i}: p_lim 0 truncated {}", truncated[2]))?;
    }
    Ok(format!("{checked} runs conserve mass, truncation monotone"))
}

// ---------------------------------------------------------------------------
// Pump and backup.

fn pump_truth() -> Result<f64, String> {
    // pump: RUNNING 0.9 / FAILED 0.1 raising backup_start; backup 0.99 / 0.01
    let dm = DemandModel {
        comps: vec![
            DemandComp { trigger: 0, outcomes: vec![(0.9, None), (0.1, Some(1))] },
            DemandComp { trigger: 1, outcomes: vec![(0.99, None), (0.01, None)] },
        ],
        ends: vec![vec![vec![(0, 1), (1, 1)]]],
    };
    let melt = dm.oracle()[0];
    let shipped = explore_systematic(&compile(&load("pump_backup.model.json")), None, &exact_cfg())
        .map_err(|e| e.to_string())?;
    let got = shipped.estimate("MELT").unwrap().estimate;
    ensure((got - melt).abs() <= 1e-12, || format!("shipped pump MELT {got} vs oracle {melt}"))?;
    Ok(melt)
}

struct Seeded {
    within: usize,
    melt_fraction: Vec<f64>,
}

fn guided_pump(plan: &PlanFile, beta: f64, truth: f64) -> Result<Seeded, String> {
    let m = compile(&load("pump_backup.model.json"));
    let mut within = 0;
    let mut melt_fraction = Vec::new();
    for seed in 0..100 {
        let cfg =
            ExplorationConfig { mode: Mode::Guided, n_sequences: 10_000, seed, beta, workers: workers(), ..Default::default() };
        let r = explore_guided(&m, plan, &cfg).map_err(|e| e.to_string())?;
        let e = r.estimate("MELT").unwrap();
        if (e.estimate - truth).abs() <= 3.0 * e.std_error() {
            within += 1;
        }
        melt_fraction.push(e.n_stories as f64 / r.n_stories as f64);
    }
    Ok(Seeded { within, melt_fraction })
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let truth = pump_truth()?;
    let mut plan = load_plan("pump_backup.plan.json");
    plan.scenarios.iter_mut().for_each(|s| s.importance = 1.0);
    let s = guided_pump(&plan, 1.0, truth)?;
    let took = start.elapsed();
    ensure(s.within >= 95, || format!("only {}/100 seeds within 3 SE of {truth}", s.within))?;
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!("{}/100 seeds within 3 SE of {truth}, {:.1}s", s.within, took.as_secs_f64()))
}

fn criterion_4() -> Outcome {
    let truth = pump_truth()?;
    let plan = load_plan("pump_backup.plan.json");
    ensure(plan.scenarios.iter().any(|s| s.target == "MELT" && s.importance == 100.0), || {
        "shipped plan lacks importance 100 on the MELT scenario".into()
    })?;
    let guided = guided_pump(&plan, 1.0, truth)?;
    let flat = guided_pump(&plan, 0.0, truth)?;
    let pairs = guided.melt_fraction.iter().zip(&flat.melt_fraction);
    let wins = pairs.clone().filter(|(g, f)| g > f).count();
    ensure(wins == 100, || format!("guided MELT fraction exceeds beta=0 in only {wins}/100 seeds"))?;
    ensure(guided.within >= 95, || format!("corrected estimate within 3 SE in only {}/100 seeds", guided.within))?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(format!(
        "MELT fraction {:.4} vs {:.4} at beta=0 (100/100 pairs), {}/100 within 3 SE",
        mean(&guided.melt_fraction),
        mean(&flat.melt_fraction),
        guided.within
    ))
}

// ---------------------------------------------------------------------------

fn is_subsequence(needle: &[FuncEvent], hay: &[FuncEvent]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

fn criterion_5() -> Outcome {
    let mut required = 0;
    for v in Variant::ALL {
        let model = build(v, &SatelliteParams::default());
        ensure(model.end_states.len() == 4, || format!("{} has {} end states", v.as_str(), model.end_states.len()))?;
        let m = compile(&model);
        let plan = build_plan(v);
        let exact = explore_systematic(&m, Some(&plan), &exact_cfg()).map_err(|e| e.to_string())?;
        let cfg = ExplorationConfig { mode: Mode::Guided, n_sequences: 5000, seed: 2024, ..Default::default() };
        let guided = explore_guided(&m, &plan, &cfg).map_err(|e| e.to_string())?;
        let abstracts: Vec<StoryAbstract> = guided
            .stories
            .iter()
            .map(|s| StoryAbstract { events: s.events.clone(), end_state: s.end_state.clone() })
            .collect();
        let report = refine_plan(&plan.plan(), &abstracts);
        for sc in &plan.scenarios {
            let realizes = |s: &dpra_core::scheduler::StoryRecord| {
                s.end_state == sc.target && is_subsequence(&sc.events, &s.events)
            };
            let truth: f64 = exact.stories.iter().filter(|s| realizes(s)).map(|s| s.probability).sum();
            if truth < 1e-4 {
                continue;
            }
            required += 1;
            let seen = guided.stories.iter().filter(|s| realizes(s)).count();
            ensure(seen > 0, || format!("{}: {sc} (p={truth:.2e}) never realized", v.as_str()))?;
            ensure(!report.never_realized.contains(sc), || format!("{}: refine report lists {sc}", v.as_str()))?;
        }
    }
    Ok(format!("{required} scenarios with p >= 1e-4 all realized within 5000 stories"))
}

// ---------------------------------------------------------------------------
// Random hybrid models for sibling-order determinism.

fn random_hybrid_model(rng: &mut ChaCha8Rng, i: usize) -> SystemModel {
    let k = rng.random_range(2..=3);
    let c0_states: Vec<String> = ["S", "A", "B", "C"][..=k].iter().map(|s| s.to_string()).collect();
    let c0_out: Vec<_> = random_probabilities(rng, k)
        .into_iter()
        .enumerate()
        .map(|(o, p)| json!({"target": c0_states[o + 1], "probability": p}))
        .collect();
    let thr: f64 = rng.random_range(1.0..8.0);
    let (r1, r2): (f64, f64) = (rng.random_range(0.5..3.0), rng.random_range(0.2..1.5));
    let with_c2 = rng.random_bool(0.7);
    let with_timer = rng.random_bool(0.7);
    let mut comps = vec![
        json!({"name": "c0", "states": c0_states, "transitions": [
            {"kind": "demand", "source": "S", "trigger": "start", "outcomes": c0_out}]}),
        json!({"name": "c1", "states": ["IDLE", "TRIP"], "transitions": [
            {"kind": "conditional", "source": "IDLE", "guard": format!("x >= {thr}"), "target": "TRIP",
             "emits": if with_c2 { vec!["trip"] } else { vec![] }}]}),
    ];
    let mut init = BTreeMap::from([("c0", "S"), ("c1", "IDLE")]);
    let mut ends = vec![json!({"name": "HIGH", "predicate": format!("x >= {}", thr + rng.random_range(0.5..3.0)), "severity": "bad"})];
    if with_c2 {
        let p = random_probabilities(rng, 2);
        comps.push(json!({"name": "c2", "states": ["S", "A", "B"], "transitions": [
            {"kind": "demand", "source": "S", "trigger": "trip", "outcomes": [
                {"target": "A", "probability": p[0]}, {"target": "B", "probability": p[1]}]}]}));
        init.insert("c2", "S");
        ends.insert(0, json!({"name": "LOST", "predicate": "c2 == B && c0 != A", "severity": "bad"}));
    }
    if with_timer {
        comps.push(json!({"name": "c3", "states": ["RUN", "FAIL"], "transitions": [
            {"kind": "timed", "source": "RUN", "target": "FAIL", "branchable": true,
             "distribution": {"type": "exponential", "rate": rng.random_range(0.02..0.3)}}]}));
        init.insert("c3", "RUN");
        ends.push(json!({"name": "STOP", "predicate": "c3 == FAIL && x >= 1", "severity": "bad"}));
    }
    ends.push(json!({"name": "OK", "severity": "ok", "nominal": true}));
    let doc = json!({
        "name": format!("hybrid_{i}"),
        "components": comps,
        "continuous_vars": [{"name": "x", "initial": 0,
            "derivative": [{"when": "c0 == A", "rate": format!("{r1}")}, {"rate": format!("{r2}")}]}],
        "end_states": ends,
        "initial": {"components": init},
        "mission_time": 10
    });
    parse_model(&doc.to_string()).expect("generated hybrid model is valid")
}

fn traces_by_path(r: &ExplorationResult) -> BTreeMap<String, String> {
    r.stories
        .iter()
        .map(|s| (s.path().join("|"), serde_json::to_string(&s.trace).unwrap()))
        .collect()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut stories = 0;
    for i in 0..50 {
        let m = compile(&random_hybrid_model(&mut rng, i));
        let run = |order| {
            let cfg = ExplorationConfig { sibling_order: order, ..exact_cfg() };
            explore_systematic(&m, None, &cfg).map_err(|e| e.to_string())
        };
        let (a, b) = (run(SiblingOrder::Declared)?, run(SiblingOrder::Reversed)?);
        let (ta, tb) = (traces_by_path(&a), traces_by_path(&b));
        ensure(ta.len() == a.stories.len(), || format!("model {i}: duplicate paths"))?;
        ensure(ta == tb, || format!("model {i}: traces differ between sibling orders"))?;
        stories += ta.len();
    }
    Ok(format!("50 models, {stories} stories identical in both orders"))
}

// ---------------------------------------------------------------------------
// Planner oracles.

fn random_tree(rng: &mut ChaCha8Rng, leaves: &[String], gates: &mut usize) -> TreeNode {
    if leaves.len() == 1 && rng.random_bool(0.7) {
        return TreeNode::leaf(&leaves[0]);
    }
    let parts = rng.random_range(1..=leaves.len().min(4));
    let mut cuts: Vec<usize> = (1..leaves.len()).collect();
    let mut chosen = Vec::new();
    for _ in 1..parts {
        chosen.push(cuts.swap_remove(rng.random_range(0..cuts.len())));
    }
    chosen.sort();
    let mut children = Vec::new();
    let mut at = 0;
    for c in chosen.into_iter().chain([leaves.len()]) {
        children.push(random_tree(rng, &leaves[at..c], gates));
        at = c;
    }
    *gates += 1;
    let gate = if rng.random_bool(0.5) { Gate::And } else { Gate::Or };
    TreeNode::gate(&format!("g{gates}"), gate, children)
}

/// Truth value under `down` (bit i set = leaf i down), written against the
/// tree's JSON form so it shares no code with the planner.
fn truth(node: &serde_json::Value, index: &BTreeMap<String, usize>, down: u32) -> bool {
    if let Some(c) = node.get("component") {
        return down & (1 << index[c.as_str().unwrap()]) == 0;
    }
    let kids = node["children"].as_array().unwrap().iter().map(|k| truth(k, index, down));
    match node["gate"].as_str().unwrap() {
        "AND" => kids.fold(true, |a, b| a && b),
        _ => kids.fold(false, |a, b| a || b),
    }
}

fn check_tree(rng: &mut ChaCha8Rng, t: usize) -> Result<(), String> {
    let n = rng.random_range(1..=12);
    let names: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    let mut gates = 0;
    let tree = ComponentTree::new(random_tree(rng, &names, &mut gates));
    let doc = serde_json::to_value(&tree).unwrap();
    let index: BTreeMap<String, usize> = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
    let mut failing = BTreeSet::new();
    for down in 0..(1u32 << n) {
        let sv = names.iter().enumerate().map(|(i, c)| (c.clone(), Status::from_up(down & (1 << i) == 0))).collect();
        let want = truth(&doc, &index, down);
        let got = evaluate_tree(&tree, &sv).map_err(|e| e.to_string())?;
        ensure(got.is_up() == want, || format!("tree {t}: assignment {down:b} gives {got:?}"))?;
        if !want {
            failing.insert(down);
        }
    }
    let mut oracle: Vec<BTreeSet<String>> = failing
        .iter()
        .filter(|&&d| (0..n).all(|i| d & (1 << i) == 0 || !failing.contains(&(d & !(1 << i)))))
        .map(|&d| (0..n).filter(|i| d & (1 << i) != 0).map(|i| names[i].clone()).collect())
        .collect();
    let mut got = minimal_failure_sets(&tree);
    oracle.sort();
    got.sort();
    ensure(got == oracle, || format!("tree {t}: minimal failure sets {got:?} vs {oracle:?}"))
}

fn random_fsm(rng: &mut ChaCha8Rng) -> AbstractFsm {
    let n = rng.random_range(2..=8);
    let states: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let goals = (0..rng.random_range(1..=n))
        .map(|_| (states[rng.random_range(0..n)].clone(), format!("E{}", rng.random_range(0..3))))
        .collect();
    let mut transitions: Vec<FsmTransition> = Vec::new();
    for _ in 0..rng.random_range(n..=3 * n) {
        let func = format!("f{}", rng.random_range(0..4));
        let event = if rng.random_bool(0.5) { FuncEvent::lost(&func) } else { FuncEvent::gained(&func) };
        let from = states[rng.random_range(0..n)].clone();
        if transitions.iter().any(|t| t.from == from && t.event == event) {
            continue;
        }
        transitions.push(FsmTransition { from, to: states[rng.random_range(0..n)].clone(), event });
    }
    AbstractFsm { states, initial: "s0".into(), goals, transitions }
}

/// Every walk of at most `max_len` steps from the initial state, kept when
/// it visits no state twice and stops at a goal.
fn brute_force_paths(fsm: &AbstractFsm, max_len: usize) -> Vec<(String, Vec<FuncEvent>)> {
    let mut out = Vec::new();
    let mut walks: Vec<Vec<&FsmTransition>> = vec![Vec::new()];
    for _ in 0..=max_len {
        let mut next = Vec::new();
        for w in walks {
            let at = w.last().map_or(fsm.initial.as_str(), |t| t.to.as_str());
            let visited: Vec<&str> = std::iter::once(fsm.initial.as_str()).chain(w.iter().map(|t| t.to.as_str())).collect();
            let simple = visited.iter().collect::<BTreeSet<_>>().len() == visited.len();
            if simple {
                if let Some(end) = fsm.goals.get(at) {
                    out.push((end.clone(), w.iter().map(|t| t.event.clone()).collect()));
                }
            }
            for t in fsm.transitions.iter().filter(|t| t.from == at) {
                let mut w2 = w.clone();
                w2.push(t);
                next.push(w2);
            }
        }
        walks = next;
    }
    out.sort();
    out
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in 0..100 {
        check_tree(&mut rng, t)?;
    }
    let mut scenarios = 0;
    for f in 0..50 {
        let fsm = random_fsm(&mut rng);
        let max_len = rng.random_range(fsm.states.len() / 2..=fsm.states.len());
        let funcs: BTreeSet<String> = (0..4).map(|i| format!("f{i}")).collect();
        let plan = generate_plan(&fsm, &funcs, max_len).map_err(|e| e.to_string())?.plan;
        let mut got: Vec<(String, Vec<FuncEvent>)> =
            plan.scenarios.iter().map(|s| (s.target.clone(), s.events.clone())).collect();
        got.sort();
        let want = brute_force_paths(&fsm, max_len);
        ensure(got == want, || format!("fsm {f}: {} scenarios vs {} by enumeration", got.len(), want.len()))?;
        scenarios += got.len();
    }
    Ok(format!("100 trees match truth tables, 50 FSMs give the same {scenarios} paths"))
}

// ---------------------------------------------------------------------------
// Continuous coupling.

const TANK: &str = r#"{
  "name": "tank_alarm",
  "components": [
    {"name": "drain", "states": ["OPEN", "CLOSED"]},
    {"name": "alarm", "states": ["OFF", "ON"], "transitions": [
      {"kind": "conditional", "source": "OFF", "guard": "x <= 4", "target": "ON"}]}],
  "continuous_vars": [{"name": "x", "initial": 10,
     "derivative": [{"when": "drain == OPEN", "rate": "-3"}, {"rate": "0"}]}],
  "end_states": [
    {"name": "EMPTY", "predicate": "x <= 0", "severity": "fail"},
    {"name": "OK", "severity": "ok", "nominal": true}
  ],
  "initial": {"components": {"drain": "OPEN", "alarm": "OFF"}},
  "mission_time": 10
}"#;

const HAZARD: &str = r#"{
  "name": "valve_wear",
  "components": [
    {"name": "valve", "states": ["OPEN", "CLOSED"], "transitions": [
      {"kind": "timed", "source": "OPEN", "target": "CLOSED", "distribution": {"type": "fixed", "time": 4}}]},
    {"name": "pump", "states": ["RUNNING", "FAILED"], "transitions": [
      {"kind": "timed", "source": "RUNNING", "target": "FAILED",
       "distribution": {"type": "exponential", "rate": 0.05}, "rate_modifier": "1 + level"}]}],
  "continuous_vars": [{"name": "level", "initial": 0,
     "derivative": [{"when": "valve == OPEN", "rate": "1"}, {"rate": "0"}]}],
  "end_states": [
    {"name": "LOST", "predicate": "pump == FAILED", "severity": "fail"},
    {"name": "OK", "severity": "ok", "nominal": true}
  ],
  "initial": {"components": {"valve": "OPEN", "pump": "RUNNING"}},
  "mission_time": 1000
}"#;

/// P(T <= t) for hazard 0.05 (1 + t) up to t = 4 and 0.25 after.
fn hazard_cdf(t: f64) -> f64 {
    let cum = if t <= 4.0 { 0.05 * (t + t * t / 2.0) } else { 0.05 * 12.0 + 0.25 * (t - 4.0) };
    1.0 - (-cum).exp()
}

fn criterion_8() -> Outcome {
    let tank = compile(&parse_model(TANK).unwrap());
    let mut worst = 0.0_f64;
    for h in [0.1, 0.03, 0.01, 0.001] {
        let sim = Simulator::new(Arc::clone(&tank), SimOptions { h, timed: TimedMode::Sampled });
        let mut s = sim.init(0);
        let Stop::Ended(e) = sim.run(&mut s).map_err(|e| e.to_string())? else {
            return Err("tank model branched".into());
        };
        ensure(sim.model().end_states[e].name == "EMPTY", || "tank did not empty".into())?;
        let alarm = s.trace().iter().find(|e| e.detail.starts_with("alarm:")).ok_or("alarm never sounded")?;
        for (got, want) in [(s.clock(), 10.0 / 3.0), (alarm.time, 2.0)] {
            worst = worst.max((got - want).abs() / h);
            ensure((got - want).abs() <= h, || format!("h={h}: event at {got}, analytic {want}"))?;
        }
    }

    let sim = Simulator::new(compile(&parse_model(HAZARD).unwrap()), SimOptions::default());
    let n: usize = 100_000;
    let chunk = n.div_ceil(workers());
    let parts: Vec<Result<Vec<f64>, String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|lo| {
                let sim = &sim;
                scope.spawn(move || {
                    (lo..(lo + chunk).min(n))
                        .map(|i| {
                            let mut s = sim.init_stream(8, i as u64);
                            sim.run(&mut s).map_err(|e| e.to_string())?;
                            s.trace()
                                .iter()
                                .find(|e| e.kind == TraceKind::Transition && e.detail.starts_with("pump:"))
                                .map(|e| e.time)
                                .ok_or_else(|| "pump never failed".to_string())
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut times = Vec::with_capacity(n);
    for p in parts {
        times.extend(p?);
    }
    let mut worst_z = 0.0_f64;
    for t in [0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0, 15.0] {
        let f = hazard_cdf(t);
        let emp = times.iter().filter(|&&x| x <= t).count() as f64 / n as f64;
        let z = (emp - f).abs() / (f * (1.0 - f) / n as f64).sqrt();
        worst_z = worst_z.max(z);
        ensure(z <= 3.0, || format!("P(T <= {t}) = {emp}, analytic {f} ({z:.2} sigma)"))?;
    }
    Ok(format!("events within {worst:.2} h, hazard survival within {worst_z:.2} sigma over 1e5 samples"))
}

// ---------------------------------------------------------------------------

fn dpra(args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_dpra")).args(args).output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("dpra {args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let degraded = |v: Variant, p: &SatelliteParams| -> Result<f64, String> {
        let r = explore_systematic(&compile(&build(v, p)), None, &exact_cfg()).map_err(|e| e.to_string())?;
        Ok(r.estimate("degraded").unwrap().estimate)
    };
    let p = SatelliteParams::default();
    let (base, alarm, qc) =
        (degraded(Variant::Baseline, &p)?, degraded(Variant::OptionAlarm, &p)?, degraded(Variant::OptionQc, &p)?);
    ensure(alarm < qc && qc < base, || format!("degraded: alarm {alarm}, qc {qc}, baseline {base}"))?;

    let sym = SatelliteParams { d_q: p.d_a * p.h, ..p.clone() };
    let (a, q) = (degraded(Variant::OptionAlarm, &sym)?, degraded(Variant::OptionQc, &sym)?);
    ensure((a - q).abs() <= 1e-9, || format!("symmetric options differ: {a} vs {q}"))?;

    let config = models_dir().join("satellite/compare.json");
    let out = dpra(&["compare", &config.display().to_string()])?;
    let last = out.lines().last().unwrap_or_default();
    ensure(last.starts_with("preferred=option_alarm"), || format!("compare printed `{last}`"))?;

    let cs = run_case_study(&CaseStudyConfig::default()).map_err(|e| e.to_string())?;
    let guided = cs.guided.as_ref().map(|g| g.verdict_line()).unwrap_or_default();
    let took = start.elapsed();
    ensure(took < Duration::from_secs(300), || format!("took {took:?}"))?;
    Ok(format!(
        "degraded {alarm:.4} < {qc:.4} < {base:.4}, tie |d| {:.1e}, `{last}`, guided `{guided}`, {:.1}s",
        (a - q).abs(),
        took.as_secs_f64()
    ))
}

fn data_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = |f: &str| models_dir().join(f).display().to_string();
    let runs: Vec<Vec<String>> = vec![
        vec![m("pump_backup.model.json"), "--plim".into(), "0.005".into()],
        vec![m("pump_backup.model.json"), "--mode".into(), "guided".into(), "--plan".into(), m("pump_backup.plan.json"),
             "--n".into(), "500".into(), "--seed".into(), "11".into(), "--workers".into(), "3".into()],
        vec![m("pump_backup.model.json"), "--mode".into(), "targeted".into(), "--plan".into(), m("pump_backup.plan.json"),
             "--target-event".into(), "lost:backup_flow".into(), "--n".into(), "400".into()],
        vec![m("satellite/option_alarm.model.json"), "--mode".into(), "guided".into(),
             "--plan".into(), m("satellite/option_alarm.plan.json"), "--n".into(), "300".into(), "--seed".into(), "5".into()],
        vec![m("tank.model.json"), "--h".into(), "0.005".into()],
    ];
    let mut files = 0;
    for (i, run) in runs.iter().enumerate() {
        let first = tmp.path().join(format!("run{i}"));
        let again = tmp.path().join(format!("rerun{i}"));
        let mut args = vec!["explore".to_string()];
        args.extend(run.iter().cloned());
        args.extend(["--out-dir".into(), first.display().to_string()]);
        dpra(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
        let manifest = first.join("manifest.json").display().to_string();
        dpra(&["explore", "--manifest", &manifest, "--out-dir", &again.display().to_string()])?;
        let (a, b) = (data_files(&first), data_files(&again));
        ensure(a == b, || format!("run {i}: rerun differs"))?;
        let recorded: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(again.join("manifest.json")).unwrap()).unwrap();
        ensure(recorded["outputs"].as_object().map(|o| o.len()) == Some(a.len()), || {
            format!("run {i}: manifest does not list every data file")
        })?;
        files += a.len();
    }
    Ok(format!("{} reruns reproduce {files} files byte-for-byte", runs.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("exactness", criterion_1),
        ("conservation", criterion_2),
        ("guided unbiasedness", criterion_3),
        ("guidance effect", criterion_4),
        ("coverage", criterion_5),
        ("snapshot determinism", criterion_6),
        ("planner oracles", criterion_7),
        ("continuous coupling", criterion_8),
        ("case study", criterion_9),
        ("reproducibility", criterion_10),
    ];
    let only: Vec<usize> = std::env::args().filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why}) [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
