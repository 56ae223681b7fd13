use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::PlannerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Gate {
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Up,
    Down,
}

impl Status {
    pub fn is_up(self) -> bool {
        self == Status::Up
    }

    pub fn from_up(up: bool) -> Status {
        if up {
            Status::Up
        } else {
            Status::Down
        }
    }
}

fn default_up() -> Vec<String> {
    vec!["UP".to_string()]
}

/// Node of a success tree. AND joins distinct required elements, OR joins
/// redundant ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum TreeNode {
    Gate {
        name: String,
        gate: Gate,
        children: Vec<TreeNode>,
    },
    Leaf {
        component: String,
        /// Model states counted as UP; every other state is DOWN.
        #[serde(default = "default_up")]
        up_states: Vec<String>,
    },
}

impl TreeNode {
    pub fn leaf(component: &str) -> TreeNode {
        TreeNode::Leaf { component: component.to_string(), up_states: default_up() }
    }

    pub fn gate(name: &str, gate: Gate, children: Vec<TreeNode>) -> TreeNode {
        TreeNode::Gate { name: name.to_string(), gate, children }
    }

    /// Gate name, or component name for a leaf.
    pub fn name(&self) -> &str {
        match self {
            TreeNode::Gate { name, .. } => name,
            TreeNode::Leaf { component, .. } => component,
        }
    }

    pub fn evaluate(&self, sv: &dyn Fn(&str) -> Option<Status>) -> Result<Status, PlannerError> {
        match self {
            TreeNode::Leaf { component, .. } => {
                sv(component).ok_or_else(|| PlannerError::MissingComponent(component.clone()))
            }
            TreeNode::Gate { gate, children, .. } => {
                let mut up = *gate == Gate::And;
                for c in children {
                    let child = c.evaluate(sv)?.is_up();
                    match gate {
                        Gate::And => up &= child,
                        Gate::Or => up |= child,
                    }
                }
                Ok(Status::from_up(up))
            }
        }
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode)) {
        f(self);
        if let TreeNode::Gate { children, .. } = self {
            children.iter().for_each(|c| c.visit(f));
        }
    }

    /// Failure sets of this node before minimization.
    fn failure_sets(&self) -> Vec<BTreeSet<String>> {
        match self {
            TreeNode::Leaf { component, .. } => vec![BTreeSet::from([component.clone()])],
            TreeNode::Gate { gate: Gate::And, children, .. } => {
                minimize(children.iter().flat_map(|c| c.failure_sets()).collect())
            }
            TreeNode::Gate { gate: Gate::Or, children, .. } => {
                let mut acc: Vec<BTreeSet<String>> = vec![BTreeSet::new()];
                for c in children {
                    let sets = c.failure_sets();
                    let mut next = Vec::with_capacity(acc.len() * sets.len());
                    for a in &acc {
                        for s in &sets {
                            next.push(a.union(s).cloned().collect());
                        }
                    }
                    acc = minimize(next);
                }
                acc
            }
        }
    }
}

fn minimize(mut sets: Vec<BTreeSet<String>>) -> Vec<BTreeSet<String>> {
    sets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    sets.dedup();
    let mut kept: Vec<BTreeSet<String>> = Vec::new();
    for s in sets {
        if !kept.iter().any(|k| k.is_subset(&s)) {
            kept.push(s);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentTree {
    pub root: TreeNode,
}

impl ComponentTree {
    pub fn new(root: TreeNode) -> Self {
        ComponentTree { root }
    }

    pub fn evaluate(&self, sv: &BTreeMap<String, Status>) -> Result<Status, PlannerError> {
        self.root.evaluate(&|c| sv.get(c).copied())
    }

    /// Distinct component names referenced by leaves, sorted.
    pub fn components(&self) -> Vec<String> {
        let mut out = BTreeSet::new();
        self.root.visit(&mut |n| {
            if let TreeNode::Leaf { component, .. } = n {
                out.insert(component.clone());
            }
        });
        out.into_iter().collect()
    }

    pub fn find(&self, name: &str) -> Option<&TreeNode> {
        let mut found = None;
        self.root.visit(&mut |n| {
            if found.is_none() && n.name() == name {
                found = Some(n);
            }
        });
        found
    }

    /// All nodes in pre-order.
    pub fn nodes(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        self.root.visit(&mut |n| out.push(n));
        out
    }

    /// Minimal sets of components whose joint failure brings the root down,
    /// ordered by size and then lexicographically.
    pub fn minimal_failure_sets(&self) -> Vec<BTreeSet<String>> {
        self.root.failure_sets()
    }

    pub fn check(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let comps: BTreeSet<String> = self.components().into_iter().collect();
        let mut gates = BTreeSet::new();
        self.root.visit(&mut |n| match n {
            TreeNode::Gate { name, children, .. } => {
                if !gates.insert(name.clone()) {
                    errors.push(format!("duplicate gate name `{name}`"));
                }
                if comps.contains(name) {
                    errors.push(format!("gate `{name}` shadows a component of the same name"));
                }
                if children.is_empty() {
                    errors.push(format!("gate `{name}` has no children"));
                }
            }
            TreeNode::Leaf { component, up_states } => {
                if up_states.is_empty() {
                    errors.push(format!("leaf `{component}` lists no UP states"));
                }
            }
        });
        errors
    }
}

pub fn evaluate_tree(t: &ComponentTree, sv: &BTreeMap<String, Status>) -> Result<Status, PlannerError> {
    t.evaluate(sv)
}

pub fn minimal_failure_sets(t: &ComponentTree) -> Vec<BTreeSet<String>> {
    t.minimal_failure_sets()
}
