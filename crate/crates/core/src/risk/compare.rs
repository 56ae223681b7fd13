use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{RiskError, RiskReport};

/// Probabilities closer than this count as equal.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCriterion {
    /// Class whose probability decides the preference.
    pub class: String,
    /// Classes consulted in order when the target class ties.
    #[serde(default)]
    pub secondary: Vec<String>,
}

impl ComparisonCriterion {
    pub fn new(class: &str) -> Self {
        ComparisonCriterion { class: class.to_string(), secondary: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "names", rename_all = "snake_case")]
pub enum Preference {
    One(String),
    /// Names in alphabetical order.
    Tie(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignComparison {
    pub names: Vec<String>,
    pub reports: Vec<RiskReport>,
    pub classes: Vec<String>,
    /// `deltas[i][c]`: class `c` probability of alternative `i` minus that
    /// of the first alternative.
    pub deltas: Vec<Vec<f64>>,
    pub criterion: ComparisonCriterion,
    pub preferred: Preference,
}

impl DesignComparison {
    pub fn verdict_line(&self) -> String {
        let who = match &self.preferred {
            Preference::One(n) => n.clone(),
            Preference::Tie(ns) => format!("tie({})", ns.join(",")),
        };
        format!("preferred={who} criterion={}", self.criterion.class)
    }

    /// Rows `alternative,class,probability,delta`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alternative,class,probability,delta\n");
        for (i, (name, rep)) in self.names.iter().zip(&self.reports).enumerate() {
            for (c, class) in self.classes.iter().enumerate() {
                let p = rep.class(class).map_or(0.0, |x| x.probability);
                let _ = writeln!(out, "{name},{class},{p},{}", self.deltas[i][c]);
            }
        }
        out
    }
}

impl fmt::Display for DesignComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<24}", "class")?;
        for n in &self.names {
            write!(f, " {n:>16}")?;
        }
        writeln!(f)?;
        for (c, class) in self.classes.iter().enumerate() {
            write!(f, "{class:<24}")?;
            for rep in &self.reports {
                write!(f, " {:>16.6e}", rep.class(class).map_or(0.0, |x| x.probability))?;
            }
            writeln!(f)?;
            write!(f, "{:<24}", format!("  delta {class}"))?;
            for d in &self.deltas {
                write!(f, " {:>+16.6e}", d[c])?;
            }
            writeln!(f)?;
        }
        writeln!(f, "{}", self.verdict_line())
    }
}

/// Prefers the alternative with the lowest probability in the criterion
/// class, consulting the secondary classes on ties.
pub fn compare_designs(
    alternatives: &[(String, RiskReport)],
    criterion: &ComparisonCriterion,
) -> Result<DesignComparison, RiskError> {
    if alternatives.len() < 2 {
        return Err(RiskError::TooFewAlternatives(alternatives.len()));
    }
    let (first_name, first) = &alternatives[0];
    let classes: Vec<String> = first.classes.iter().map(|c| c.name.clone()).collect();
    let mut sorted = classes.clone();
    sorted.sort();
    for (name, rep) in &alternatives[1..] {
        let mut theirs: Vec<String> = rep.classes.iter().map(|c| c.name.clone()).collect();
        theirs.sort();
        if theirs != sorted {
            return Err(RiskError::ClassMismatch { a: first_name.clone(), b: name.clone() });
        }
    }
    for c in std::iter::once(&criterion.class).chain(&criterion.secondary) {
        if !classes.contains(c) {
            return Err(RiskError::UnknownClass(c.clone()));
        }
    }

    let prob = |rep: &RiskReport, class: &str| rep.class(class).map_or(0.0, |c| c.probability);
    let deltas = alternatives
        .iter()
        .map(|(_, rep)| classes.iter().map(|c| prob(rep, c) - prob(first, c)).collect())
        .collect();

    let mut best: Vec<usize> = (0..alternatives.len()).collect();
    for class in std::iter::once(&criterion.class).chain(&criterion.secondary) {
        let min = best.iter().map(|&i| prob(&alternatives[i].1, class)).fold(f64::INFINITY, f64::min);
        best.retain(|&i| prob(&alternatives[i].1, class) <= min + TIE_TOLERANCE);
        if best.len() == 1 {
            break;
        }
    }
    let preferred = if best.len() == 1 {
        Preference::One(alternatives[best[0]].0.clone())
    } else {
        let mut names: Vec<String> = best.iter().map(|&i| alternatives[i].0.clone()).collect();
        names.sort();
        Preference::Tie(names)
    };

    Ok(DesignComparison {
        names: alternatives.iter().map(|(n, _)| n.clone()).collect(),
        reports: alternatives.iter().map(|(_, r)| r.clone()).collect(),
        classes,
        deltas,
        criterion: criterion.clone(),
        preferred,
    })
}
