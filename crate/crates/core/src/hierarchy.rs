//! Agent tree construction by recursive primary/complement division.

use std::collections::VecDeque;

use serde::Serialize;

use crate::domain::{check_assignment, Assignment, SearchSpace};
use crate::error::{Error, Result};
use crate::grat::OmegaPolicy;
use crate::runtime::StopCriteria;

pub type NodeId = usize;

/// One agent of the tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HierarchyNode {
    pub id: NodeId,
    pub level: usize,
    /// Parameters this agent is responsible for.
    pub primary: Vec<String>,
    /// Remaining objective parameters the agent carries values for.
    pub complement: Vec<String>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

impl HierarchyNode {
    pub fn is_terminal(&self) -> bool {
        self.primary.len() == 1
    }
}

/// Immutable agent tree. Node ids are breadth-first indices; the root is 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Hierarchy {
    nodes: Vec<HierarchyNode>,
}

impl Hierarchy {
    pub fn root(&self) -> &HierarchyNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &HierarchyNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[HierarchyNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn terminals(&self) -> impl Iterator<Item = &HierarchyNode> {
        self.nodes.iter().filter(|n| n.is_terminal())
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree is always serializable")
    }
}

/// Everything needed to build and drive one tuning run.
#[derive(Clone, Debug)]
pub struct TuningQuery {
    pub space: SearchSpace,
    /// Start point V; must cover the whole space.
    pub initial_values: Assignment,
    /// Maximum children per agent.
    pub c: usize,
    /// Per-agent child budget; `None` is unbounded.
    pub budget: Option<usize>,
    pub eta: usize,
    pub omega: u32,
    pub omega_policy: OmegaPolicy,
    pub stop: StopCriteria,
}

impl TuningQuery {
    pub fn new(space: SearchSpace, initial_values: Assignment) -> Self {
        Self {
            space,
            initial_values,
            c: 2,
            budget: None,
            eta: 10,
            omega: 1,
            omega_policy: OmegaPolicy::Fixed,
            stop: StopCriteria::iterations(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c < 2 {
            return Err(Error::InvalidQuery(format!(
                "c must exceed 1, got {}",
                self.c
            )));
        }
        if let Some(b) = self.budget {
            // A single child would inherit its parent's primary set unchanged.
            if b < 2 {
                return Err(Error::InvalidQuery(format!(
                    "budget must be at least 2, got {b}"
                )));
            }
        }
        if self.eta == 0 {
            return Err(Error::InvalidQuery("eta must be at least 1".into()));
        }
        if self.omega == 0 {
            return Err(Error::InvalidQuery("omega must be at least 1".into()));
        }
        self.stop.validate()?;
        check_assignment(&self.space, &self.initial_values)
    }
}

/// The `i`-th (1-based) block of the balanced contiguous partition of
/// `primary` into `k` blocks. Larger blocks come first.
pub fn divide(primary: &[String], i: usize, k: usize) -> Result<Vec<String>> {
    let len = primary.len();
    if k == 0 || k > len || i == 0 || i > k {
        return Err(Error::InvalidDivision { len, parts: k });
    }
    let base = len / k;
    let rem = len % k;
    let block = |b: usize| base + usize::from(b < rem);
    let start: usize = (0..i - 1).map(block).sum();
    Ok(primary[start..start + block(i - 1)].to_vec())
}

/// Builds the agent tree for `query`, breadth first.
pub fn build_hierarchy(query: &TuningQuery) -> Result<Hierarchy> {
    query.validate()?;
    let objective = query.space.objective_names();
    build_tree(&objective, query.c, query.budget)
}

pub(crate) fn build_tree(
    objective: &[String],
    c: usize,
    budget: Option<usize>,
) -> Result<Hierarchy> {
    if objective.is_empty() {
        return Err(Error::EmptySpace);
    }
    let mut nodes = vec![HierarchyNode {
        id: 0,
        level: 0,
        primary: objective.to_vec(),
        complement: Vec::new(),
        parent: None,
        children: Vec::new(),
    }];
    let mut queue = VecDeque::from([0]);
    while let Some(id) = queue.pop_front() {
        let primary = nodes[id].primary.clone();
        if primary.len() == 1 {
            continue;
        }
        let k = c.min(primary.len()).min(budget.unwrap_or(usize::MAX));
        for i in 1..=k {
            let child_primary = divide(&primary, i, k)?;
            // (parent primary - child primary) ∪ parent complement, kept in
            // declaration order.
            let complement = objective
                .iter()
                .filter(|name| {
                    (primary.contains(name) && !child_primary.contains(name))
                        || nodes[id].complement.contains(name)
                })
                .cloned()
                .collect();
            let child = nodes.len();
            nodes.push(HierarchyNode {
                id: child,
                level: nodes[id].level + 1,
                primary: child_primary,
                complement,
                parent: Some(id),
                children: Vec::new(),
            });
            nodes[id].children.push(child);
            queue.push_back(child);
        }
    }
    Ok(Hierarchy { nodes })
}
