//! Risk reports, acceptance checks and design comparison.

mod compare;
mod taxonomy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scheduler::{finish_estimates, EndStateEstimate, ExplorationResult, Mode};

pub use compare::{compare_designs, ComparisonCriterion, DesignComparison, Preference};
pub use taxonomy::{DesignChangeRecord, LifeCyclePhase, ToolCategory};

/// Severity class treated as harmless when ranking worst cases.
pub const OK_CLASS: &str = "ok";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("no acceptance threshold for severity class `{0}` (use \"none\" for no limit)")]
    MissingThreshold(String),
    #[error("threshold for `{class}` must lie in [0, 1], got {value}")]
    BadThreshold { class: String, value: f64 },
    #[error("a comparison needs at least two alternatives, got {0}")]
    TooFewAlternatives(usize),
    #[error("alternatives `{a}` and `{b}` have different severity classes")]
    ClassMismatch { a: String, b: String },
    #[error("severity class `{0}` does not exist")]
    UnknownClass(String),
    #[error("invalid criteria file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEstimate {
    pub name: String,
    pub probability: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub members: Vec<String>,
    pub n_stories: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub end_state: String,
    pub severity: String,
    pub probability: f64,
    /// Probability times the class consequence weight (1 when unweighted).
    pub score: f64,
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub model: String,
    pub mode: Mode,
    pub n_stories: u64,
    pub end_states: Vec<EndStateEstimate>,
    pub classes: Vec<ClassEstimate>,
    pub worst_cases: Vec<WorstCase>,
    pub truncated_mass: f64,
    pub unexplored_mass: f64,
    pub depth_exceeded_mass: f64,
    pub warnings: Vec<String>,
}

/// Builds a report listing the `k` most probable distinct non-ok stories.
pub fn assess(r: &ExplorationResult, k: usize) -> RiskReport {
    assess_weighted(r, k, &BTreeMap::new())
}

/// As [`assess`], ranking worst cases by probability times the consequence
/// weight of their class (missing classes weigh 1).
pub fn assess_weighted(r: &ExplorationResult, k: usize, consequence: &BTreeMap<String, f64>) -> RiskReport {
    let mut warnings = Vec::new();
    if r.n_stories == 0 {
        warnings.push("the result contains no stories".to_string());
    }

    let mut order: Vec<&str> = Vec::new();
    for e in &r.end_states {
        if !order.contains(&e.severity.as_str()) {
            order.push(&e.severity);
        }
    }
    let mut sums: Vec<EndStateEstimate> = order
        .iter()
        .map(|c| {
            let members: Vec<&EndStateEstimate> = r.end_states.iter().filter(|e| e.severity == *c).collect();
            EndStateEstimate {
                name: c.to_string(),
                severity: c.to_string(),
                estimate: 0.0,
                variance: 0.0,
                ci_low: 0.0,
                ci_high: 0.0,
                n_stories: members.iter().map(|e| e.n_stories).sum(),
                sum_w: members.iter().map(|e| e.sum_w).sum(),
                sum_w2: members.iter().map(|e| e.sum_w2).sum(),
            }
        })
        .collect();
    finish_estimates(r.mode, &mut sums, r.n_stories);
    let classes = sums
        .into_iter()
        .map(|s| ClassEstimate {
            members: r.end_states.iter().filter(|e| e.severity == s.name).map(|e| e.name.clone()).collect(),
            name: s.name,
            probability: s.estimate,
            variance: s.variance,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            n_stories: s.n_stories,
        })
        .collect();

    let severity: BTreeMap<&str, &str> = r.end_states.iter().map(|e| (e.name.as_str(), e.severity.as_str())).collect();
    let mut seen = BTreeSet::new();
    let mut candidates: Vec<WorstCase> = Vec::new();
    for s in &r.stories {
        let class = severity.get(s.end_state.as_str()).copied().unwrap_or(OK_CLASS);
        if class == OK_CLASS {
            continue;
        }
        let path: Vec<String> = s.path().into_iter().map(str::to_string).collect();
        if !seen.insert((s.end_state.clone(), path.clone())) {
            continue;
        }
        let w = consequence.get(class).copied().unwrap_or(1.0);
        candidates.push(WorstCase {
            end_state: s.end_state.clone(),
            severity: class.to_string(),
            probability: s.probability,
            score: s.probability * w,
            path,
        });
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.end_state.cmp(&b.end_state))
            .then_with(|| a.path.cmp(&b.path))
    });
    if k > candidates.len() {
        warnings.push(format!("requested {k} worst cases, only {} distinct non-ok stories exist", candidates.len()));
    }
    candidates.truncate(k);

    if r.ledger.truncated_mass > 0.0 {
        warnings.push(format!("{:e} probability mass was truncated", r.ledger.truncated_mass));
    }
    if r.ledger.depth_exceeded_count > 0 {
        warnings.push(format!("{} stories exceeded the depth limit", r.ledger.depth_exceeded_count));
    }

    RiskReport {
        model: r.model.clone(),
        mode: r.mode,
        n_stories: r.n_stories,
        end_states: r.end_states.clone(),
        classes,
        worst_cases: candidates,
        truncated_mass: r.ledger.truncated_mass,
        unexplored_mass: r.ledger.unexplored_mass,
        depth_exceeded_mass: r.ledger.depth_exceeded_mass,
        warnings,
    }
}

impl RiskReport {
    pub fn class(&self, name: &str) -> Option<&ClassEstimate> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Rows `kind,name,class,probability,ci_low,ci_high,n_stories`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,name,class,probability,ci_low,ci_high,n_stories\n");
        for e in &self.end_states {
            let _ = writeln!(
                out,
                "end_state,{},{},{},{},{},{}",
                e.name, e.severity, e.estimate, e.ci_low, e.ci_high, e.n_stories
            );
        }
        for c in &self.classes {
            let _ = writeln!(
                out,
                "class,{},{},{},{},{},{}",
                c.name, c.name, c.probability, c.ci_low, c.ci_high, c.n_stories
            );
        }
        out
    }
}

impl fmt::Display for RiskReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "risk report: {} ({}, {} stories)", self.model, self.mode.as_str(), self.n_stories)?;
        writeln!(f, "end states:")?;
        for e in &self.end_states {
            write!(f, "  {:<20} {:<16} {:.6e}", e.name, e.severity, e.estimate)?;
            if self.mode != Mode::Systematic {
                write!(f, "  [{:.6e}, {:.6e}]", e.ci_low, e.ci_high)?;
            }
            writeln!(f)?;
        }
        writeln!(f, "severity classes:")?;
        for c in &self.classes {
            write!(f, "  {:<20} {:.6e}", c.name, c.probability)?;
            if self.mode != Mode::Systematic {
                write!(f, "  [{:.6e}, {:.6e}]", c.ci_low, c.ci_high)?;
            }
            writeln!(f)?;
        }
        writeln!(f, "worst cases:")?;
        for (i, w) in self.worst_cases.iter().enumerate() {
            writeln!(f, "  {}. {} ({}) p={:.6e}", i + 1, w.end_state, w.severity, w.probability)?;
            for step in &w.path {
                writeln!(f, "       {step}")?;
            }
        }
        writeln!(
            f,
            "truncated mass {:e}, unexplored mass {:e}, depth-exceeded mass {:e}",
            self.truncated_mass, self.unexplored_mass, self.depth_exceeded_mass
        )?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Maximum acceptable probability, or no limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Limit(f64),
    NoLimit,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Num(f64),
    Text(String),
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Threshold::Limit(x) => s.serialize_f64(*x),
            Threshold::NoLimit => s.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match ThresholdRepr::deserialize(d)? {
            ThresholdRepr::Num(x) => Ok(Threshold::Limit(x)),
            ThresholdRepr::Text(t) if t == "none" => Ok(Threshold::NoLimit),
            ThresholdRepr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"none\", got `{t}`"))),
        }
    }
}

/// Severity class -> maximum acceptable probability.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AcceptanceCriteria {
    pub thresholds: BTreeMap<String, Threshold>,
}

impl AcceptanceCriteria {
    pub fn parse(text: &str) -> Result<AcceptanceCriteria, RiskError> {
        let c: AcceptanceCriteria = serde_json::from_str(text).map_err(|e| RiskError::Parse(e.to_string()))?;
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<(), RiskError> {
        for (class, t) in &self.thresholds {
            if let Threshold::Limit(x) = t {
                if !(0.0..=1.0).contains(x) {
                    return Err(RiskError::BadThreshold { class: class.clone(), value: *x });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Indeterminate,
    Reject,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::Indeterminate => "indeterminate",
            Verdict::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVerdict {
    pub class: String,
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub threshold: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub verdicts: Vec<ClassVerdict>,
}

impl AcceptanceReport {
    /// Reject if any class rejects, else indeterminate if any class is.
    pub fn overall(&self) -> Verdict {
        self.verdicts.iter().map(|v| v.verdict).max().unwrap_or(Verdict::Accept)
    }
}

impl fmt::Display for AcceptanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.verdicts {
            let limit = v.threshold.map_or("none".to_string(), |t| format!("{t:e}"));
            writeln!(f, "{:<20} {:.6e} <= {limit}: {}", v.class, v.probability, v.verdict.as_str())?;
        }
        writeln!(f, "overall: {}", self.overall().as_str())
    }
}

/// Exact results compare the estimate with the threshold. Statistical
/// results accept when the whole confidence interval lies below it and
/// reject when it lies above.
pub fn check_acceptance(rep: &RiskReport, crit: &AcceptanceCriteria) -> Result<AcceptanceReport, RiskError> {
    crit.check()?;
    let mut verdicts = Vec::new();
    for c in &rep.classes {
        let t = *crit.thresholds.get(&c.name).ok_or_else(|| RiskError::MissingThreshold(c.name.clone()))?;
        let (threshold, verdict) = match t {
            Threshold::NoLimit => (None, Verdict::Accept),
            Threshold::Limit(t) => {
                let v = match rep.mode {
                    Mode::Systematic if c.probability <= t => Verdict::Accept,
                    Mode::Systematic => Verdict::Reject,
                    _ if c.ci_high <= t => Verdict::Accept,
                    _ if c.ci_low > t => Verdict::Reject,
                    _ => Verdict::Indeterminate,
                };
                (Some(t), v)
            }
        };
        verdicts.push(ClassVerdict {
            class: c.name.clone(),
            probability: c.probability,
            ci_low: c.ci_low,
            ci_high: c.ci_high,
            threshold,
            verdict,
        });
    }
    Ok(AcceptanceReport { verdicts })
}
