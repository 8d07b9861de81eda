//! Directed acyclic graphs over named variables, with orientation provenance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Causal role of a variable. Roles drive temporal tiers and which nodes the
/// recommender may intervene on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Nutrient,
    Modulator,
    Biomarker,
    Outcome,
}

/// A named variable with its temporal tier (lower tiers precede higher ones).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub role: Role,
    pub tier: u8,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, role: Role, tier: u8) -> Self {
        Self {
            name: name.into(),
            role,
            tier,
        }
    }
}

/// How an edge orientation was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    VStructure,
    Meek,
    Tier,
    TieBreak,
    /// Edge came from a fitted/constructed model rather than orientation rules.
    Given,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub orientation_provenance: Provenance,
}

/// Directed acyclic graph over named variables.
///
/// Edges are kept sorted by `(from, to)` so serialization is byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dag {
    pub variables: Vec<VariableSpec>,
    pub edges: Vec<Edge>,
}

impl Dag {
    /// Build a DAG, validating name uniqueness, endpoint existence, and
    /// acyclicity.
    pub fn new(variables: Vec<VariableSpec>, mut edges: Vec<Edge>) -> Result<Self> {
        let names: BTreeSet<&str> = variables.iter().map(|v| v.name.as_str()).collect();
        if names.len() != variables.len() {
            return Err(Error::Data("duplicate variable names in DAG".into()));
        }
        for e in &edges {
            if !names.contains(e.from.as_str()) || !names.contains(e.to.as_str()) {
                return Err(Error::Data(format!(
                    "edge {} -> {} references unknown variable",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(Error::Data(format!("self-loop on {}", e.from)));
            }
        }
        edges.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
        edges.dedup_by(|a, b| a.from == b.from && a.to == b.to);
        let dag = Self { variables, edges };
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn variable(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.variable(name).is_some()
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }

    /// Direct parents of `node`, sorted by name.
    pub fn parents(&self, node: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .edges
            .iter()
            .filter(|e| e.to == node)
            .map(|e| e.from.as_str())
            .collect();
        out.sort();
        out
    }

    /// Direct children of `node`, sorted by name.
    pub fn children(&self, node: &str) -> Vec<&str> {
        // Edges are sorted by (from, to), so this is already in name order.
        self.edges
            .iter()
            .filter(|e| e.from == node)
            .map(|e| e.to.as_str())
            .collect()
    }

    /// Topological order of variable names (lexicographic among ties).
    /// Fails if the edge set contains a cycle.
    pub fn topological_order(&self) -> Result<Vec<String>> {
        let mut indegree: BTreeMap<&str, usize> = self
            .variables
            .iter()
            .map(|v| (v.name.as_str(), 0))
            .collect();
        for e in &self.edges {
            *indegree.get_mut(e.to.as_str()).unwrap() += 1;
        }
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(n, _)| *n)
            .collect();
        let mut order = Vec::with_capacity(self.variables.len());
        while let Some(&node) = ready.iter().next() {
            ready.remove(node);
            order.push(node.to_string());
            for child in self.children(node) {
                let d = indegree.get_mut(child).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(child);
                }
            }
        }
        if order.len() != self.variables.len() {
            return Err(Error::Data("graph contains a cycle".into()));
        }
        Ok(order)
    }

    /// All ancestors of `target` plus `target` itself.
    pub fn ancestral_set(&self, target: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![target.to_string()];
        while let Some(node) = stack.pop() {
            if seen.insert(node.clone()) {
                for e in self.edges.iter().filter(|e| e.to == node) {
                    stack.push(e.from.clone());
                }
            }
        }
        seen
    }

    /// Structural Hamming distance: edge insertions, deletions, and
    /// reorientations separating `self` from `other`.
    pub fn shd(&self, other: &Dag) -> usize {
        let a: BTreeSet<(&str, &str)> = self
            .edges
            .iter()
            .map(|e| (e.from.as_str(), e.to.as_str()))
            .collect();
        let b: BTreeSet<(&str, &str)> = other
            .edges
            .iter()
            .map(|e| (e.from.as_str(), e.to.as_str()))
            .collect();
        let mut dist = 0;
        for &(f, t) in &a {
            if !b.contains(&(f, t)) {
                // Covers both deletions and reorientations; a DAG cannot hold
                // both directions, so a reorientation is counted exactly once
                // here and skipped in the reverse sweep below.
                dist += 1;
            }
        }
        for &(f, t) in &b {
            if !a.contains(&(f, t)) && !a.contains(&(t, f)) {
                dist += 1;
            }
        }
        dist
    }
}

/// The standard variable set used throughout the dietary pipeline.
///
/// Nutrients and modulators share the lowest tier; the three iAUC outcomes
/// share the maximum tier.
pub fn standard_variables() -> Vec<VariableSpec> {
    vec![
        VariableSpec::new(CARBOHYDRATES, Role::Nutrient, 0),
        VariableSpec::new(PROTEIN, Role::Nutrient, 0),
        VariableSpec::new(FAT, Role::Nutrient, 0),
        VariableSpec::new(FIBER, Role::Nutrient, 0),
        VariableSpec::new(MET, Role::Modulator, 0),
        VariableSpec::new(BASELINE_GLUCOSE, Role::Modulator, 0),
        VariableSpec::new(IAUC_30, Role::Outcome, 2),
        VariableSpec::new(IAUC_60, Role::Outcome, 2),
        VariableSpec::new(IAUC_120, Role::Outcome, 2),
    ]
}

pub const CARBOHYDRATES: &str = "carbohydrates";
pub const PROTEIN: &str = "protein";
pub const FAT: &str = "fat";
pub const FIBER: &str = "fiber";
pub const MET: &str = "met";
pub const BASELINE_GLUCOSE: &str = "baseline_glucose";
pub const IAUC_30: &str = "iauc_30";
pub const IAUC_60: &str = "iauc_60";
pub const IAUC_120: &str = "iauc_120";

/// Outcome node name for an iAUC horizon in minutes.
pub fn iauc_node(horizon_min: u32) -> Option<&'static str> {
    match horizon_min {
        30 => Some(IAUC_30),
        60 => Some(IAUC_60),
        120 => Some(IAUC_120),
        _ => None,
    }
}

/// Human-readable label for a variable name, used in rendered summaries.
pub fn display_name(name: &str) -> String {
    match name {
        CARBOHYDRATES => "Carbohydrates".into(),
        PROTEIN => "Protein".into(),
        FAT => "Fat".into(),
        FIBER => "Fiber".into(),
        MET => "Physical activity".into(),
        BASELINE_GLUCOSE => "Baseline glucose".into(),
        IAUC_30 => "glucose (30-minute response)".into(),
        IAUC_60 => "glucose (1-hour response)".into(),
        IAUC_120 => "glucose (2-hour response)".into(),
        other => other.replace('_', " "),
    }
}
