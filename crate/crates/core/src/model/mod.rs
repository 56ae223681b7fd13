//! Declarative system models: components with discrete states and
//! transitions, continuous variables with piecewise derivatives, and
//! end-state predicates.
//!
//! Models are JSON documents (see `schemas/model.schema.json`). Every other
//! module consumes a [`CompiledModel`], which only exists for models that
//! passed [`validate_model`] without errors.

mod bind;
pub mod expr;
mod schema;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bind::{Bound, CompiledModel, Component, EndState, EvalCtx, Outcome, Transition, TransitionKind, Var};
pub use expr::{eval_expression, Env, EvalError, Expr, Expression, SyntaxError, Value};
pub use validate::validate_model;

/// Tolerance on the sum of demand outcome probabilities.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

/// Event raised once at time zero; demand transitions may use it as trigger.
pub const START_EVENT: &str = "start";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemModel {
    pub name: String,
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub continuous_vars: Vec<ContinuousVarSpec>,
    pub end_states: Vec<EndStateSpec>,
    pub initial: InitialSpec,
    /// Mission horizon in hours.
    pub mission_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub components: BTreeMap<String, String>,
    /// Overrides for the per-variable `initial` values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub vars: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub name: String,
    pub states: Vec<String>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransitionSpec {
    /// Resolved when `trigger` is raised while the component is in `source`.
    Demand {
        source: String,
        trigger: String,
        outcomes: Vec<OutcomeSpec>,
    },
    /// Fires after a sampled holding time in `source`.
    Timed {
        source: String,
        target: String,
        distribution: Distribution,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate_modifier: Option<Expression>,
        #[serde(default, skip_serializing_if = "is_false")]
        branchable: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        emits: Vec<String>,
    },
    /// Fires as soon as `guard` holds while the component is in `source`.
    Conditional {
        source: String,
        guard: Expression,
        target: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        emits: Vec<String>,
    },
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl TransitionSpec {
    pub fn source(&self) -> &str {
        match self {
            TransitionSpec::Demand { source, .. }
            | TransitionSpec::Timed { source, .. }
            | TransitionSpec::Conditional { source, .. } => source,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TransitionSpec::Demand { .. } => "demand",
            TransitionSpec::Timed { .. } => "timed",
            TransitionSpec::Conditional { .. } => "conditional",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    pub target: String,
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub emits: Vec<String>,
}

/// Holding-time distribution of a timed transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Exponential { rate: f64 },
    Weibull { scale: f64, shape: f64 },
    Fixed { time: f64 },
}

impl Distribution {
    pub fn is_stochastic(&self) -> bool {
        !matches!(self, Distribution::Fixed { .. })
    }

    /// P(T <= x) for the unmodified distribution.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            Distribution::Exponential { rate } => -(-rate * x).exp_m1(),
            Distribution::Weibull { scale, shape } => -(-(x / scale).powf(shape)).exp_m1(),
            Distribution::Fixed { time } => {
                if x >= time {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Smallest x with `cdf(x) >= p`, for p in [0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Distribution::Exponential { rate } => -(-p).ln_1p() / rate,
            Distribution::Weibull { scale, shape } => scale * (-(-p).ln_1p()).powf(1.0 / shape),
            Distribution::Fixed { time } => time,
        }
    }

    /// Baseline hazard rate at age `age`.
    pub fn hazard(&self, age: f64) -> f64 {
        match *self {
            Distribution::Exponential { rate } => rate,
            Distribution::Weibull { scale, shape } => {
                if age <= 0.0 {
                    if shape < 1.0 {
                        f64::INFINITY
                    } else if shape == 1.0 {
                        1.0 / scale
                    } else {
                        0.0
                    }
                } else {
                    shape / scale * (age / scale).powf(shape - 1.0)
                }
            }
            Distribution::Fixed { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousVarSpec {
    pub name: String,
    pub initial: f64,
    /// Ordered clauses; the first whose `when` holds supplies dx/dt. The last
    /// clause must omit `when`.
    pub derivative: Vec<DerivativeClause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeClause {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<Expression>,
    pub rate: Expression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndStateSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<Expression>,
    pub severity: String,
    /// Reached when the mission horizon elapses with no other end state.
    #[serde(default, skip_serializing_if = "is_false")]
    pub nominal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn warning(location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level}: {}: {}", self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("invalid model:\n{}", render(.0))]
    Invalid(Vec<Diagnostic>),
}

fn render(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .filter(|d| d.is_error())
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ModelError {
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            ModelError::Invalid(d) => d.clone(),
            ModelError::Syntax { line, column, message } => vec![Diagnostic::error(
                format!("line {line}, column {column}"),
                message.clone(),
            )],
            ModelError::Schema { pointer, message } => {
                vec![Diagnostic::error(pointer.clone(), message.clone())]
            }
        }
    }
}

impl SystemModel {
    /// Reads the document shape only: JSON syntax, the published schema,
    /// and expression syntax. Semantic checks live in [`validate_model`].
    pub fn from_json_unchecked(text: &str) -> Result<SystemModel, ModelError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(syntax)?;
        schema::check(&raw)?;
        serde_json::from_str(text).map_err(syntax)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn component(&self, name: &str) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn end_state(&self, name: &str) -> Option<&EndStateSpec> {
        self.end_states.iter().find(|e| e.name == name)
    }

    /// Severity classes in first-declared order.
    pub fn severity_classes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.end_states {
            if !out.contains(&e.severity) {
                out.push(e.severity.clone());
            }
        }
        out
    }
}

fn syntax(e: serde_json::Error) -> ModelError {
    ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and fully validates a model file.
pub fn parse_model(text: &str) -> Result<SystemModel, ModelError> {
    let model = SystemModel::from_json_unchecked(text)?;
    let diags = validate_model(&model);
    if diags.iter().any(Diagnostic::is_error) {
        return Err(ModelError::Invalid(diags));
    }
    Ok(model)
}
