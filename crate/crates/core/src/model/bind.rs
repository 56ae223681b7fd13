//! Name resolution and type checking. Produces the index-based form the
//! simulator evaluates.

use std::collections::HashMap;

use super::expr::{apply_func, apply_numeric, BinOp, EvalError, Expr, Func, UnaryOp, Value, TIME_VAR};
use super::{Diagnostic, Distribution, ModelError, SystemModel, TransitionSpec, START_EVENT};

/// Expression with names resolved to component/variable slots.
#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    Num(f64),
    Bool(bool),
    Time,
    Var(usize),
    StateIs { comp: usize, state: usize },
    SameState(usize, usize),
    Unary(UnaryOp, Box<Bound>),
    Binary(BinOp, Box<Bound>, Box<Bound>),
    Call(Func, Vec<Bound>),
}

/// Read-only view of the quantities an expression may reference.
#[derive(Debug, Clone, Copy)]
pub struct EvalCtx<'a> {
    pub t: f64,
    pub vars: &'a [f64],
    pub states: &'a [usize],
}

impl Bound {
    pub fn num(&self, ctx: &EvalCtx) -> Result<f64, EvalError> {
        match self.eval(ctx)? {
            Value::Num(x) => Ok(x),
            _ => unreachable!("type-checked numeric expression"),
        }
    }

    pub fn truth(&self, ctx: &EvalCtx) -> Result<bool, EvalError> {
        match self.eval(ctx)? {
            Value::Bool(b) => Ok(b),
            _ => unreachable!("type-checked boolean expression"),
        }
    }

    fn eval(&self, ctx: &EvalCtx) -> Result<Value, EvalError> {
        Ok(match self {
            Bound::Num(x) => Value::Num(*x),
            Bound::Bool(b) => Value::Bool(*b),
            Bound::Time => Value::Num(ctx.t),
            Bound::Var(i) => Value::Num(ctx.vars[*i]),
            Bound::StateIs { comp, state } => Value::Bool(ctx.states[*comp] == *state),
            Bound::SameState(a, b) => Value::Bool(ctx.states[*a] == ctx.states[*b]),
            Bound::Unary(UnaryOp::Neg, e) => Value::Num(-e.num(ctx)?),
            Bound::Unary(UnaryOp::Not, e) => Value::Bool(!e.truth(ctx)?),
            Bound::Binary(BinOp::And, l, r) => Value::Bool(l.truth(ctx)? && r.truth(ctx)?),
            Bound::Binary(BinOp::Or, l, r) => Value::Bool(l.truth(ctx)? || r.truth(ctx)?),
            Bound::Binary(op @ (BinOp::Eq | BinOp::Ne), l, r) => {
                let equal = match (l.eval(ctx)?, r.eval(ctx)?) {
                    (Value::Num(a), Value::Num(b)) => a == b,
                    (Value::Bool(a), Value::Bool(b)) => a == b,
                    _ => unreachable!("type-checked equality"),
                };
                Value::Bool(equal == (*op == BinOp::Eq))
            }
            Bound::Binary(op, l, r) => apply_numeric(*op, l.num(ctx)?, r.num(ctx)?)?,
            Bound::Call(Func::Step, args) => Value::Num(if args[0].truth(ctx)? { 1.0 } else { 0.0 }),
            Bound::Call(func, args) => {
                let a = args[0].num(ctx)?;
                let b = match args.get(1) {
                    Some(e) => e.num(ctx)?,
                    None => 0.0,
                };
                apply_func(*func, a, b)?
            }
        })
    }

    pub fn refs_time(&self) -> bool {
        self.any(&|b| matches!(b, Bound::Time))
    }

    pub fn refs_vars(&self) -> bool {
        self.any(&|b| matches!(b, Bound::Var(_)))
    }

    /// True when the value can change without a discrete state change.
    pub fn is_continuous(&self) -> bool {
        self.refs_time() || self.refs_vars()
    }

    fn any(&self, pred: &dyn Fn(&Bound) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            Bound::Unary(_, e) => e.any(pred),
            Bound::Binary(_, l, r) => l.any(pred) || r.any(pred),
            Bound::Call(_, args) => args.iter().any(|a| a.any(pred)),
            _ => false,
        }
    }

    pub fn is_constant_zero(&self) -> bool {
        matches!(self, Bound::Num(x) if *x == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Ty {
    Num,
    Bool,
    State(usize),
    /// Bare identifier that can only be a state literal.
    Literal,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Num => "number",
            Ty::Bool => "boolean",
            Ty::State(_) => "component state",
            Ty::Literal => "state name",
        }
    }
}

/// Names visible to expressions.
pub(crate) struct Namespace<'a> {
    pub comps: HashMap<&'a str, (usize, &'a [String])>,
    pub vars: HashMap<&'a str, usize>,
}

impl<'a> Namespace<'a> {
    pub fn of(model: &'a SystemModel) -> Self {
        Namespace {
            comps: model
                .components
                .iter()
                .enumerate()
                .map(|(i, c)| (c.name.as_str(), (i, c.states.as_slice())))
                .collect(),
            vars: model
                .continuous_vars
                .iter()
                .enumerate()
                .map(|(i, v)| (v.name.as_str(), i))
                .collect(),
        }
    }

    pub fn bind(&self, e: &Expr) -> Result<(Bound, Ty), String> {
        match e {
            Expr::Num(x) => Ok((Bound::Num(*x), Ty::Num)),
            Expr::Bool(b) => Ok((Bound::Bool(*b), Ty::Bool)),
            Expr::Ident(name) if name == TIME_VAR => Ok((Bound::Time, Ty::Num)),
            Expr::Ident(name) => {
                if let Some(&i) = self.vars.get(name.as_str()) {
                    Ok((Bound::Var(i), Ty::Num))
                } else if let Some(&(c, _)) = self.comps.get(name.as_str()) {
                    // Placeholder; only meaningful inside an equality.
                    Ok((Bound::Num(c as f64), Ty::State(c)))
                } else {
                    Ok((Bound::Num(f64::NAN), Ty::Literal))
                }
            }
            Expr::Unary(op, inner) => {
                let (b, ty) = self.bind_operand(inner)?;
                let want = if *op == UnaryOp::Neg { Ty::Num } else { Ty::Bool };
                expect(ty, want, if want == Ty::Num { "negation" } else { "`!`" })?;
                Ok((Bound::Unary(*op, Box::new(b)), want))
            }
            Expr::Binary(op @ (BinOp::Eq | BinOp::Ne), l, r) => {
                let (lb, lt) = self.bind(l)?;
                let (rb, rt) = self.bind(r)?;
                let test = match (lt, rt) {
                    (Ty::State(c), Ty::Literal) => self.state_test(c, r)?,
                    (Ty::Literal, Ty::State(c)) => self.state_test(c, l)?,
                    (Ty::State(a), Ty::State(b)) => Bound::SameState(a, b),
                    (Ty::Literal, _) => return Err(undeclared(l)),
                    (_, Ty::Literal) => return Err(undeclared(r)),
                    (Ty::Num, Ty::Num) | (Ty::Bool, Ty::Bool) => {
                        return Ok((Bound::Binary(*op, Box::new(lb), Box::new(rb)), Ty::Bool))
                    }
                    (a, b) => {
                        return Err(format!(
                            "cannot compare {} with {} using `{}`",
                            a.name(),
                            b.name(),
                            if *op == BinOp::Eq { "==" } else { "!=" }
                        ))
                    }
                };
                let test = if *op == BinOp::Ne {
                    Bound::Unary(UnaryOp::Not, Box::new(test))
                } else {
                    test
                };
                Ok((test, Ty::Bool))
            }
            Expr::Binary(op, l, r) => {
                let (lb, lt) = self.bind_operand(l)?;
                let (rb, rt) = self.bind_operand(r)?;
                let (want, out) = if matches!(op, BinOp::And | BinOp::Or) {
                    (Ty::Bool, Ty::Bool)
                } else if op.is_comparison() {
                    (Ty::Num, Ty::Bool)
                } else {
                    (Ty::Num, Ty::Num)
                };
                let ctx = format!("operator {op:?}");
                expect(lt, want, &ctx)?;
                expect(rt, want, &ctx)?;
                Ok((Bound::Binary(*op, Box::new(lb), Box::new(rb)), out))
            }
            Expr::Call(func, args) => {
                let want = if *func == Func::Step { Ty::Bool } else { Ty::Num };
                let mut bound = Vec::with_capacity(args.len());
                for a in args {
                    let (b, ty) = self.bind_operand(a)?;
                    expect(ty, want, func.name())?;
                    bound.push(b);
                }
                Ok((Bound::Call(*func, bound), Ty::Num))
            }
        }
    }

    /// Binds an operand that must be a plain value.
    fn bind_operand(&self, e: &Expr) -> Result<(Bound, Ty), String> {
        let (b, ty) = self.bind(e)?;
        match ty {
            Ty::Literal => Err(undeclared(e)),
            Ty::State(_) => Err(format!(
                "component `{e}` can only be compared with `==` or `!=` against one of its states"
            )),
            _ => Ok((b, ty)),
        }
    }

    fn state_test(&self, comp: usize, literal: &Expr) -> Result<Bound, String> {
        let Expr::Ident(name) = literal else { unreachable!() };
        let (comp_name, states) = self
            .comps
            .iter()
            .find(|(_, (i, _))| *i == comp)
            .map(|(n, (_, s))| (*n, *s))
            .expect("component index");
        match states.iter().position(|s| s == name) {
            Some(state) => Ok(Bound::StateIs { comp, state }),
            None => Err(format!("`{name}` is not a state of component `{comp_name}`")),
        }
    }

    /// Binds and requires the given result type.
    pub fn bind_typed(&self, e: &Expr, want: Ty) -> Result<Bound, String> {
        let (b, ty) = self.bind(e)?;
        if ty == Ty::Literal {
            return Err(undeclared(e));
        }
        expect(ty, want, "expression")?;
        Ok(b)
    }
}

fn undeclared(e: &Expr) -> String {
    format!("reference to undeclared name `{e}`")
}

fn expect(found: Ty, want: Ty, ctx: &str) -> Result<(), String> {
    if found == want {
        Ok(())
    } else {
        Err(format!("type mismatch in {ctx}: expected {}, found {}", want.name(), found.name()))
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub target: usize,
    pub probability: f64,
    pub emits: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum TransitionKind {
    Demand {
        trigger: usize,
        outcomes: Vec<Outcome>,
    },
    Timed {
        target: usize,
        distribution: Distribution,
        modifier: Option<Bound>,
        branchable: bool,
        emits: Vec<usize>,
    },
    Conditional {
        guard: Bound,
        target: usize,
        emits: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct Transition {
    /// Stable human-readable identifier, e.g. `pump/STANDBY/start`.
    pub id: String,
    pub source: usize,
    pub kind: TransitionKind,
}

#[derive(Debug, Clone)]
pub struct Component {
    pub name: String,
    pub states: Vec<String>,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone)]
pub struct Var {
    pub name: String,
    pub initial: f64,
    pub clauses: Vec<(Option<Bound>, Bound)>,
}

#[derive(Debug, Clone)]
pub struct EndState {
    pub name: String,
    pub predicate: Option<Bound>,
    pub severity: String,
    pub nominal: bool,
}

/// A validated model in slot-indexed form. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub spec: SystemModel,
    pub components: Vec<Component>,
    pub vars: Vec<Var>,
    pub end_states: Vec<EndState>,
    pub nominal_end: usize,
    /// Interned event names; index 0 is the start event.
    pub events: Vec<String>,
    /// Demand transitions `(component, transition)` per event, in
    /// declaration order.
    pub demands_by_event: Vec<Vec<(usize, usize)>>,
    pub initial_states: Vec<usize>,
    pub initial_vars: Vec<f64>,
    pub mission_time: f64,
}

impl CompiledModel {
    pub fn new(spec: &SystemModel) -> Result<CompiledModel, ModelError> {
        let diags = super::validate_model(spec);
        if diags.iter().any(Diagnostic::is_error) {
            return Err(ModelError::Invalid(diags));
        }
        Ok(compile_unchecked(spec))
    }

    pub fn comp_index(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    pub fn state_index(&self, comp: usize, state: &str) -> Option<usize> {
        self.components[comp].states.iter().position(|s| s == state)
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn end_index(&self, name: &str) -> Option<usize> {
        self.end_states.iter().position(|e| e.name == name)
    }

    pub fn event_index(&self, name: &str) -> Option<usize> {
        self.events.iter().position(|e| e == name)
    }

    pub fn state_name(&self, comp: usize, state: usize) -> &str {
        &self.components[comp].states[state]
    }

    pub fn end_state_names(&self) -> Vec<String> {
        self.end_states.iter().map(|e| e.name.clone()).collect()
    }
}

/// Compiles a model already known to be free of errors.
fn compile_unchecked(spec: &SystemModel) -> CompiledModel {
    let ns = Namespace::of(spec);
    let bind_num = |e: &Expr| ns.bind_typed(e, Ty::Num).expect("validated");
    let bind_bool = |e: &Expr| ns.bind_typed(e, Ty::Bool).expect("validated");

    let mut events = vec![START_EVENT.to_string()];
    let mut intern = |name: &str| -> usize {
        match events.iter().position(|e| e == name) {
            Some(i) => i,
            None => {
                events.push(name.to_string());
                events.len() - 1
            }
        }
    };

    let mut components = Vec::new();
    for c in &spec.components {
        let state = |s: &str| c.states.iter().position(|x| x == s).expect("validated");
        let mut transitions = Vec::new();
        for t in &c.transitions {
            let source = state(t.source());
            let (id, kind) = match t {
                TransitionSpec::Demand { source: src, trigger, outcomes } => (
                    format!("{}/{}/{}", c.name, src, trigger),
                    TransitionKind::Demand {
                        trigger: intern(trigger),
                        outcomes: outcomes
                            .iter()
                            .map(|o| Outcome {
                                target: state(&o.target),
                                probability: o.probability,
                                emits: o.emits.iter().map(|e| intern(e)).collect(),
                            })
                            .collect(),
                    },
                ),
                TransitionSpec::Timed {
                    source: src,
                    target,
                    distribution,
                    rate_modifier,
                    branchable,
                    emits,
                } => (
                    format!("{}/{}->{}", c.name, src, target),
                    TransitionKind::Timed {
                        target: state(target),
                        distribution: *distribution,
                        modifier: rate_modifier.as_ref().map(|m| bind_num(m.expr())),
                        branchable: *branchable,
                        emits: emits.iter().map(|e| intern(e)).collect(),
                    },
                ),
                TransitionSpec::Conditional { source: src, guard, target, emits } => (
                    format!("{}/{}?{}", c.name, src, target),
                    TransitionKind::Conditional {
                        guard: bind_bool(guard.expr()),
                        target: state(target),
                        emits: emits.iter().map(|e| intern(e)).collect(),
                    },
                ),
            };
            transitions.push(Transition { id, source, kind });
        }
        components.push(Component {
            name: c.name.clone(),
            states: c.states.clone(),
            transitions,
        });
    }

    let mut demands_by_event = vec![Vec::new(); events.len()];
    for (ci, c) in components.iter().enumerate() {
        for (ti, t) in c.transitions.iter().enumerate() {
            if let TransitionKind::Demand { trigger, .. } = t.kind {
                demands_by_event[trigger].push((ci, ti));
            }
        }
    }

    let vars: Vec<Var> = spec
        .continuous_vars
        .iter()
        .map(|v| Var {
            name: v.name.clone(),
            initial: spec.initial.vars.get(&v.name).copied().unwrap_or(v.initial),
            clauses: v
                .derivative
                .iter()
                .map(|c| (c.when.as_ref().map(|w| bind_bool(w.expr())), bind_num(c.rate.expr())))
                .collect(),
        })
        .collect();

    let end_states: Vec<EndState> = spec
        .end_states
        .iter()
        .map(|e| EndState {
            name: e.name.clone(),
            predicate: e.predicate.as_ref().map(|p| bind_bool(p.expr())),
            severity: e.severity.clone(),
            nominal: e.nominal,
        })
        .collect();
    let nominal_end = end_states.iter().position(|e| e.nominal).expect("validated");

    let initial_states = spec
        .components
        .iter()
        .map(|c| {
            let s = &spec.initial.components[&c.name];
            c.states.iter().position(|x| x == s).expect("validated")
        })
        .collect();
    let initial_vars = vars.iter().map(|v| v.initial).collect();

    CompiledModel {
        spec: spec.clone(),
        components,
        vars,
        end_states,
        nominal_end,
        events,
        demands_by_event,
        initial_states,
        initial_vars,
        mission_time: spec.mission_time,
    }
}
