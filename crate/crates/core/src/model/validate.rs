use std::collections::{BTreeMap, HashSet};

use super::bind::{Namespace, Ty};
use super::expr::{is_identifier, is_reserved, BinOp, Expr, UnaryOp, TIME_VAR};
use super::{
    Diagnostic, Distribution, EndStateSpec, SystemModel, TransitionSpec, PROBABILITY_SUM_TOLERANCE,
    START_EVENT,
};

/// Checks every model invariant. The model is usable iff no diagnostic has
/// error severity.
pub fn validate_model(m: &SystemModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let ns = Namespace::of(m);

    check_name(&mut out, "name", &m.name, false);
    if !(m.mission_time.is_finite() && m.mission_time > 0.0) {
        out.push(Diagnostic::error("mission_time", "mission_time must be a positive number"));
    }

    // Components and variables share the expression namespace.
    let mut seen: HashSet<&str> = HashSet::new();
    for c in &m.components {
        let loc = format!("components.{}", c.name);
        check_name(&mut out, &loc, &c.name, true);
        if !seen.insert(&c.name) {
            out.push(Diagnostic::error(&loc, format!("duplicate identifier `{}`", c.name)));
        }
    }
    for v in &m.continuous_vars {
        let loc = format!("continuous_vars.{}", v.name);
        check_name(&mut out, &loc, &v.name, true);
        if !seen.insert(&v.name) {
            out.push(Diagnostic::error(&loc, format!("duplicate identifier `{}`", v.name)));
        }
    }

    let mut emitted: HashSet<&str> = HashSet::new();
    emitted.insert(START_EVENT);
    for c in &m.components {
        for t in &c.transitions {
            match t {
                TransitionSpec::Demand { outcomes, .. } => {
                    outcomes.iter().flat_map(|o| &o.emits).for_each(|e| {
                        emitted.insert(e);
                    });
                }
                TransitionSpec::Timed { emits, .. } | TransitionSpec::Conditional { emits, .. } => {
                    emits.iter().for_each(|e| {
                        emitted.insert(e);
                    });
                }
            }
        }
    }

    for c in &m.components {
        let loc = format!("components.{}", c.name);
        if c.states.len() < 2 {
            out.push(Diagnostic::error(&loc, "a component needs at least two states"));
        }
        let mut states: HashSet<&str> = HashSet::new();
        for s in &c.states {
            check_name(&mut out, &format!("{loc}.states"), s, false);
            if !states.insert(s) {
                out.push(Diagnostic::error(&loc, format!("duplicate state `{s}`")));
            }
        }
        let has_state = |s: &str| c.states.iter().any(|x| x == s);
        let mut demands: HashSet<(&str, &str)> = HashSet::new();
        for (i, t) in c.transitions.iter().enumerate() {
            let tloc = format!("{loc}.transitions[{i}]");
            if !has_state(t.source()) {
                out.push(Diagnostic::error(
                    &tloc,
                    format!("source `{}` is not a state of `{}`", t.source(), c.name),
                ));
            }
            let check_target = |target: &str, out: &mut Vec<Diagnostic>| {
                if !has_state(target) {
                    out.push(Diagnostic::error(
                        &tloc,
                        format!("target `{target}` is not a state of `{}`", c.name),
                    ));
                }
            };
            let check_events = |events: &[String], out: &mut Vec<Diagnostic>| {
                for e in events {
                    check_name(out, &format!("{tloc}.emits"), e, false);
                }
            };
            match t {
                TransitionSpec::Demand { source, trigger, outcomes } => {
                    if !demands.insert((source, trigger)) {
                        out.push(Diagnostic::error(
                            &tloc,
                            format!("duplicate demand on `{trigger}` from state `{source}`"),
                        ));
                    }
                    check_name(&mut out, &format!("{tloc}.trigger"), trigger, false);
                    if !emitted.contains(trigger.as_str()) {
                        out.push(Diagnostic::warning(
                            &tloc,
                            format!("trigger `{trigger}` is never raised"),
                        ));
                    }
                    if outcomes.is_empty() {
                        out.push(Diagnostic::error(&tloc, "a demand needs at least one outcome"));
                    }
                    let mut sum = 0.0;
                    for o in outcomes {
                        check_target(&o.target, &mut out);
                        check_events(&o.emits, &mut out);
                        if !(0.0..=1.0).contains(&o.probability) {
                            out.push(Diagnostic::error(
                                &tloc,
                                format!("probability {} outside [0, 1]", o.probability),
                            ));
                        }
                        sum += o.probability;
                    }
                    if !outcomes.is_empty() && (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
                        out.push(Diagnostic::error(
                            &tloc,
                            format!("outcome probabilities sum to {}", round_for_display(sum)),
                        ));
                    }
                }
                TransitionSpec::Timed {
                    target,
                    distribution,
                    rate_modifier,
                    branchable,
                    emits,
                    ..
                } => {
                    check_target(target, &mut out);
                    check_events(emits, &mut out);
                    let params_ok = match *distribution {
                        Distribution::Exponential { rate } => positive(rate),
                        Distribution::Weibull { scale, shape } => positive(scale) && positive(shape),
                        Distribution::Fixed { time } => positive(time),
                    };
                    if !params_ok {
                        out.push(Diagnostic::error(&tloc, "distribution parameters must be > 0"));
                    }
                    if let Some(modifier) = rate_modifier {
                        if !distribution.is_stochastic() {
                            out.push(Diagnostic::error(
                                &tloc,
                                "a fixed-time transition cannot take a rate modifier",
                            ));
                        }
                        if *branchable {
                            out.push(Diagnostic::error(
                                &tloc,
                                "a branchable transition cannot take a rate modifier",
                            ));
                        }
                        if let Err(msg) = ns.bind_typed(modifier.expr(), Ty::Num) {
                            out.push(Diagnostic::error(format!("{tloc}.rate_modifier"), msg));
                        }
                    }
                    if *branchable && !distribution.is_stochastic() {
                        out.push(Diagnostic::warning(
                            &tloc,
                            "fixed-time transitions are never branched; `branchable` is ignored",
                        ));
                    }
                }
                TransitionSpec::Conditional { guard, target, emits, .. } => {
                    check_target(target, &mut out);
                    check_events(emits, &mut out);
                    if let Err(msg) = ns.bind_typed(guard.expr(), Ty::Bool) {
                        out.push(Diagnostic::error(format!("{tloc}.guard"), msg));
                    }
                }
            }
        }
    }

    for v in &m.continuous_vars {
        let loc = format!("continuous_vars.{}", v.name);
        if !v.initial.is_finite() {
            out.push(Diagnostic::error(&loc, "initial value must be finite"));
        }
        match v.derivative.last() {
            None => out.push(Diagnostic::error(&loc, "derivative clauses are missing")),
            Some(last) if last.when.is_some() => out.push(Diagnostic::error(
                &loc,
                "the last derivative clause must be a default clause without `when`",
            )),
            _ => {}
        }
        let n = v.derivative.len();
        for (i, clause) in v.derivative.iter().enumerate() {
            let cloc = format!("{loc}.derivative[{i}]");
            match &clause.when {
                None if i + 1 < n => out.push(Diagnostic::error(
                    &cloc,
                    "only the last derivative clause may omit `when`",
                )),
                None => {}
                Some(when) => match ns.bind_typed(when.expr(), Ty::Bool) {
                    Err(msg) => out.push(Diagnostic::error(format!("{cloc}.when"), msg)),
                    Ok(b) if b.is_continuous() => out.push(Diagnostic::error(
                        format!("{cloc}.when"),
                        "derivative conditions may only test component states",
                    )),
                    Ok(_) => {}
                },
            }
            if let Err(msg) = ns.bind_typed(clause.rate.expr(), Ty::Num) {
                out.push(Diagnostic::error(format!("{cloc}.rate"), msg));
            }
        }
    }

    let mut end_names: HashSet<&str> = HashSet::new();
    let mut nominal = 0;
    for e in &m.end_states {
        let loc = format!("end_states.{}", e.name);
        check_name(&mut out, &loc, &e.name, false);
        check_name(&mut out, &format!("{loc}.severity"), &e.severity, false);
        if !end_names.insert(&e.name) {
            out.push(Diagnostic::error(&loc, format!("duplicate identifier `{}`", e.name)));
        }
        if e.nominal {
            nominal += 1;
        }
        match &e.predicate {
            Some(p) => {
                if let Err(msg) = ns.bind_typed(p.expr(), Ty::Bool) {
                    out.push(Diagnostic::error(format!("{loc}.predicate"), msg));
                }
            }
            None if !e.nominal => {
                out.push(Diagnostic::error(&loc, "only the nominal end state may omit a predicate"))
            }
            None => {}
        }
    }
    if nominal != 1 {
        out.push(Diagnostic::error(
            "end_states",
            format!("exactly one end state must be marked nominal, found {nominal}"),
        ));
    }
    overlap_warnings(&m.end_states, &ns, &mut out);

    for c in &m.components {
        match m.initial.components.get(&c.name) {
            None => out.push(Diagnostic::error(
                "initial.components",
                format!("no initial state for component `{}`", c.name),
            )),
            Some(s) if !c.states.contains(s) => out.push(Diagnostic::error(
                "initial.components",
                format!("`{s}` is not a state of component `{}`", c.name),
            )),
            _ => {}
        }
    }
    for name in m.initial.components.keys() {
        if m.component(name).is_none() {
            out.push(Diagnostic::error(
                "initial.components",
                format!("reference to undeclared component `{name}`"),
            ));
        }
    }
    for (name, value) in &m.initial.vars {
        if !m.continuous_vars.iter().any(|v| &v.name == name) {
            out.push(Diagnostic::error(
                "initial.vars",
                format!("reference to undeclared variable `{name}`"),
            ));
        } else if !value.is_finite() {
            out.push(Diagnostic::error("initial.vars", format!("`{name}` must be finite")));
        }
    }
    out
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn round_for_display(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

fn check_name(out: &mut Vec<Diagnostic>, loc: &str, name: &str, expression_visible: bool) {
    if !is_identifier(name) {
        out.push(Diagnostic::error(loc, format!("`{name}` is not a valid identifier")));
    } else if expression_visible && is_reserved(name) {
        out.push(Diagnostic::error(loc, format!("`{name}` is a reserved word")));
    }
}

// ---------------------------------------------------------------------------
// End-state overlap: conjunctions of interval bounds and state tests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Interval {
    lo: f64,
    lo_closed: bool,
    hi: f64,
    hi_closed: bool,
}

impl Interval {
    const ALL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        lo_closed: false,
        hi: f64::INFINITY,
        hi_closed: false,
    };

    fn intersect(self, other: Interval) -> Interval {
        let (lo, lo_closed) = if self.lo > other.lo {
            (self.lo, self.lo_closed)
        } else if other.lo > self.lo {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed && other.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < other.hi {
            (self.hi, self.hi_closed)
        } else if other.hi < self.hi {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed && other.hi_closed)
        };
        Interval { lo, lo_closed, hi, hi_closed }
    }

    fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }
}

#[derive(Debug, Clone, Default)]
struct Region {
    bounds: BTreeMap<String, Interval>,
    /// component -> (required state, excluded states)
    states: BTreeMap<String, (Option<String>, Vec<String>)>,
}

impl Region {
    fn bound(&mut self, name: &str, iv: Interval) {
        let cur = self.bounds.get(name).copied().unwrap_or(Interval::ALL);
        self.bounds.insert(name.to_string(), cur.intersect(iv));
    }

    fn merge(&self, other: &Region) -> Region {
        let mut out = self.clone();
        for (k, iv) in &other.bounds {
            out.bound(k, *iv);
        }
        for (comp, (req, excl)) in &other.states {
            let entry = out.states.entry(comp.clone()).or_default();
            if let Some(r) = req {
                match &entry.0 {
                    Some(existing) if existing != r => {
                        // contradictory requirement, encode as empty
                        let existing = existing.clone();
                        entry.1.push(existing);
                    }
                    _ => entry.0 = Some(r.clone()),
                }
            }
            entry.1.extend(excl.iter().cloned());
        }
        out
    }

    fn satisfiable(&self, ns: &Namespace, time_var: &str) -> bool {
        for (name, iv) in &self.bounds {
            let mut iv = *iv;
            if name == time_var {
                iv = iv.intersect(Interval { lo: 0.0, lo_closed: true, hi: f64::INFINITY, hi_closed: false });
            }
            if iv.is_empty() {
                return false;
            }
        }
        for (comp, (req, excl)) in &self.states {
            match req {
                Some(r) if excl.contains(r) => return false,
                Some(_) => {}
                None => {
                    let all = ns.comps.get(comp.as_str()).map(|(_, s)| s.len()).unwrap_or(0);
                    let distinct: HashSet<&String> = excl.iter().collect();
                    if all > 0 && distinct.len() >= all {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Describes `e` as a conjunction of simple constraints, or `None` when it
/// falls outside that fragment.
fn region_of(e: &Expr, ns: &Namespace) -> Option<Region> {
    let mut region = Region::default();
    collect(e, ns, &mut region)?;
    Some(region)
}

fn collect(e: &Expr, ns: &Namespace, region: &mut Region) -> Option<()> {
    match e {
        Expr::Bool(true) => Some(()),
        Expr::Binary(BinOp::And, l, r) => {
            collect(l, ns, region)?;
            collect(r, ns, region)
        }
        Expr::Binary(op @ (BinOp::Eq | BinOp::Ne), l, r) => {
            let (comp, state) = match (&**l, &**r) {
                (Expr::Ident(a), Expr::Ident(b)) if ns.comps.contains_key(a.as_str()) => (a, b),
                (Expr::Ident(a), Expr::Ident(b)) if ns.comps.contains_key(b.as_str()) => (b, a),
                _ => return numeric_atom(*op, l, r, ns, region),
            };
            let entry = region.states.entry(comp.clone()).or_default();
            if *op == BinOp::Eq {
                match &entry.0 {
                    Some(existing) if existing != state => {
                        let existing = existing.clone();
                        entry.1.push(existing);
                    }
                    _ => entry.0 = Some(state.clone()),
                }
            } else {
                entry.1.push(state.clone());
            }
            Some(())
        }
        Expr::Binary(op, l, r) if op.is_comparison() => numeric_atom(*op, l, r, ns, region),
        Expr::Unary(UnaryOp::Not, inner) => match &**inner {
            Expr::Binary(BinOp::Eq, l, r) => collect(&Expr::Binary(BinOp::Ne, l.clone(), r.clone()), ns, region),
            _ => None,
        },
        _ => None,
    }
}

fn numeric_atom(op: BinOp, l: &Expr, r: &Expr, ns: &Namespace, region: &mut Region) -> Option<()> {
    let is_quantity = |name: &str| name == TIME_VAR || ns.vars.contains_key(name);
    let (name, value, op) = match (l, r) {
        (Expr::Ident(n), Expr::Num(x)) if is_quantity(n) => (n, *x, op),
        (Expr::Num(x), Expr::Ident(n)) if is_quantity(n) => (n, *x, flip(op)?),
        _ => return None,
    };
    let iv = match op {
        BinOp::Lt => Interval { hi: value, hi_closed: false, ..Interval::ALL },
        BinOp::Le => Interval { hi: value, hi_closed: true, ..Interval::ALL },
        BinOp::Gt => Interval { lo: value, lo_closed: false, ..Interval::ALL },
        BinOp::Ge => Interval { lo: value, lo_closed: true, ..Interval::ALL },
        BinOp::Eq => Interval { lo: value, lo_closed: true, hi: value, hi_closed: true },
        _ => return None,
    };
    region.bound(name, iv);
    Some(())
}

fn flip(op: BinOp) -> Option<BinOp> {
    Some(match op {
        BinOp::Lt => BinOp::Gt,
        BinOp::Le => BinOp::Ge,
        BinOp::Gt => BinOp::Lt,
        BinOp::Ge => BinOp::Le,
        BinOp::Eq => BinOp::Eq,
        _ => return None,
    })
}

fn overlap_warnings(ends: &[EndStateSpec], ns: &Namespace, out: &mut Vec<Diagnostic>) {
    let regions: Vec<Option<Region>> = ends
        .iter()
        .map(|e| e.predicate.as_ref().and_then(|p| region_of(p.expr(), ns)))
        .collect();
    for i in 0..ends.len() {
        for j in i + 1..ends.len() {
            let (Some(a), Some(b)) = (&regions[i], &regions[j]) else { continue };
            if a.merge(b).satisfiable(ns, TIME_VAR) {
                out.push(Diagnostic::warning(
                    format!("end_states.{}", ends[j].name),
                    format!(
                        "predicate can hold together with `{}`; `{}` wins by declaration order",
                        ends[i].name, ends[i].name
                    ),
                ));
            }
        }
    }
}
