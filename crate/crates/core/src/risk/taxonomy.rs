use std::fmt;

use serde::{Deserialize, Serialize};

/// Stage of a component's failure life cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifeCyclePhase {
    Productive,
    Degradation,
    Failure,
    Recovery,
}

impl LifeCyclePhase {
    pub const ALL: [LifeCyclePhase; 4] =
        [LifeCyclePhase::Productive, LifeCyclePhase::Degradation, LifeCyclePhase::Failure, LifeCyclePhase::Recovery];

    pub fn as_str(self) -> &'static str {
        match self {
            LifeCyclePhase::Productive => "productive",
            LifeCyclePhase::Degradation => "degradation",
            LifeCyclePhase::Failure => "failure",
            LifeCyclePhase::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCategory {
    LifeDesign,
    Maintenance,
    Alarms,
    Mitigations,
    Controls,
    Containments,
    DesignChange,
}

impl ToolCategory {
    pub const ALL: [ToolCategory; 7] = [
        ToolCategory::LifeDesign,
        ToolCategory::Maintenance,
        ToolCategory::Alarms,
        ToolCategory::Mitigations,
        ToolCategory::Controls,
        ToolCategory::Containments,
        ToolCategory::DesignChange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolCategory::LifeDesign => "life_design",
            ToolCategory::Maintenance => "maintenance",
            ToolCategory::Alarms => "alarms",
            ToolCategory::Mitigations => "mitigations",
            ToolCategory::Controls => "controls",
            ToolCategory::Containments => "containments",
            ToolCategory::DesignChange => "design_change",
        }
    }

    /// The phase the tool usually acts in; a design change can act in any.
    pub fn typical_phase(self) -> Option<LifeCyclePhase> {
        match self {
            ToolCategory::LifeDesign | ToolCategory::Maintenance => Some(LifeCyclePhase::Productive),
            ToolCategory::Alarms | ToolCategory::Mitigations => Some(LifeCyclePhase::Degradation),
            ToolCategory::Controls => Some(LifeCyclePhase::Failure),
            ToolCategory::Containments => Some(LifeCyclePhase::Recovery),
            ToolCategory::DesignChange => None,
        }
    }
}

/// Annotation attached to a design alternative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignChangeRecord {
    pub description: String,
    pub life_cycle_phase: LifeCyclePhase,
    pub tool_category: ToolCategory,
}

impl DesignChangeRecord {
    pub fn new(description: &str, life_cycle_phase: LifeCyclePhase, tool_category: ToolCategory) -> Self {
        DesignChangeRecord { description: description.to_string(), life_cycle_phase, tool_category }
    }
}

impl fmt::Display for DesignChangeRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{} / {}]", self.description, self.tool_category.as_str(), self.life_cycle_phase.as_str())
    }
}
