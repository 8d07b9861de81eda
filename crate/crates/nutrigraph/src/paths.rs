//! Goal mapping, causal path enumeration, scoring, ranking, and the
//! structured causal summary.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{display_name, iauc_node, Dag, Role};
use crate::scm::{total_effect, LinearScm};

pub const DEFAULT_L_MAX: usize = 3;
pub const DEFAULT_P_MAX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Decrease,
    Increase,
}

/// What the user wants changed: a target outcome node and a direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub target: String,
    pub direction: Direction,
    pub horizon_min: u32,
}

/// A simple directed path ending at the goal target, with its relevance
/// score and (after ranking) its rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalPath {
    pub nodes: Vec<String>,
    pub score: f64,
    pub rank: Option<usize>,
}

/// Ranked paths plus accumulated node importances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRanking {
    pub paths: Vec<CausalPath>,
    pub importance: BTreeMap<String, f64>,
}

/// Map free-text queries to a goal via a keyword table. Phrases about
/// glucose spikes or blood sugar resolve to the iAUC node at the requested
/// horizon with direction decrease.
pub fn identify_goal(query_text: &str, graph: &Dag, horizon_min: u32) -> Result<Goal> {
    let available: Vec<String> = graph
        .variables
        .iter()
        .filter(|v| v.role == Role::Outcome)
        .map(|v| v.name.clone())
        .collect();
    let not_found = |query: &str| Error::GoalNotFound {
        query: query.to_string(),
        available: available.clone(),
    };
    if query_text.trim().is_empty() {
        return Err(not_found(query_text));
    }
    let lowered = query_text.to_lowercase();
    const GLUCOSE_PHRASES: &[&str] = &[
        "glucose spike",
        "glucose spikes",
        "blood sugar",
        "blood glucose",
        "postprandial",
        "glucose response",
        "sugar spike",
        "glycemic",
        "glucose",
    ];
    if GLUCOSE_PHRASES.iter().any(|p| lowered.contains(p)) {
        let target = iauc_node(horizon_min)
            .ok_or_else(|| Error::Usage(format!("unsupported horizon {horizon_min}")))?;
        if !graph.contains(target) {
            return Err(not_found(query_text));
        }
        let direction = if lowered.contains("increase") || lowered.contains("raise") {
            Direction::Increase
        } else {
            Direction::Decrease
        };
        return Ok(Goal {
            target: target.to_string(),
            direction,
            horizon_min,
        });
    }
    Err(not_found(query_text))
}

/// Ancestor closure of the target, including the target itself.
pub fn extract_subgraph(graph: &Dag, target: &str) -> BTreeSet<String> {
    graph.ancestral_set(target)
}

/// All simple directed paths with at most `l_max` edges ending at `target`,
/// in lexicographic node-sequence order.
pub fn enumerate_paths(graph: &Dag, target: &str, l_max: usize) -> Vec<Vec<String>> {
    let subgraph = extract_subgraph(graph, target);
    let mut paths = Vec::new();
    let mut starts: Vec<&str> = subgraph
        .iter()
        .map(String::as_str)
        .filter(|s| *s != target)
        .collect();
    starts.sort_unstable();
    for start in starts {
        let mut prefix = vec![start.to_string()];
        dfs(graph, &subgraph, target, l_max, &mut prefix, &mut paths);
    }
    paths.sort();
    paths
}

fn dfs(
    graph: &Dag,
    subgraph: &BTreeSet<String>,
    target: &str,
    l_max: usize,
    prefix: &mut Vec<String>,
    out: &mut Vec<Vec<String>>,
) {
    let last = prefix.last().unwrap().clone();
    if last == target {
        out.push(prefix.clone());
        return;
    }
    if prefix.len() > l_max {
        return;
    }
    for child in graph.children(&last) {
        if subgraph.contains(child) && !prefix.iter().any(|n| n == child) {
            prefix.push(child.to_string());
            dfs(graph, subgraph, target, l_max, prefix, out);
            prefix.pop();
        }
    }
}

/// S(p): sum over path edges (v_j, v_k) of W_jk * R(v_j).
pub fn score_path(
    path: &[String],
    scm: &LinearScm,
    usage: &BTreeMap<String, f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for pair in path.windows(2) {
        let (from, to) = (&pair[0], &pair[1]);
        let w = scm
            .weight(from, to)
            .ok_or_else(|| Error::Scoring(format!("no edge {from} -> {to} in model")))?;
        let r = *usage
            .get(from)
            .ok_or_else(|| Error::Scoring(format!("no usage entry for {from}")))?;
        total += w * r;
    }
    Ok(total)
}

/// Rank scored paths and accumulate node importances.
///
/// For a decrease goal the sort key is |S(p)| descending so strong lowering
/// paths surface; ties break by lexicographic node sequence. Importance for
/// every non-target node on a path accumulates that path's score, over all
/// scored paths, kept or not.
pub fn rank_paths(
    paths: Vec<(Vec<String>, f64)>,
    goal: &Goal,
    p_max: usize,
) -> PathRanking {
    let mut importance: BTreeMap<String, f64> = BTreeMap::new();
    for (nodes, score) in &paths {
        for node in nodes {
            if node != &goal.target {
                *importance.entry(node.clone()).or_insert(0.0) += score;
            }
        }
    }
    let mut sorted = paths;
    sorted.sort_by(|a, b| {
        let ka = match goal.direction {
            Direction::Decrease => a.1.abs(),
            Direction::Increase => a.1,
        };
        let kb = match goal.direction {
            Direction::Decrease => b.1.abs(),
            Direction::Increase => b.1,
        };
        kb.partial_cmp(&ka)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    let paths = sorted
        .into_iter()
        .take(p_max)
        .enumerate()
        .map(|(i, (nodes, score))| CausalPath {
            nodes,
            score,
            rank: Some(i + 1),
        })
        .collect();
    PathRanking { paths, importance }
}

/// Full pipeline from graph to ranking for a goal.
pub fn rank_for_goal(
    scm: &LinearScm,
    usage: &BTreeMap<String, f64>,
    goal: &Goal,
    l_max: usize,
    p_max: usize,
) -> Result<PathRanking> {
    let enumerated = enumerate_paths(&scm.dag, &goal.target, l_max);
    let mut scored = Vec::with_capacity(enumerated.len());
    for nodes in enumerated {
        let score = score_path(&nodes, scm, usage)?;
        scored.push((nodes, score));
    }
    Ok(rank_paths(scored, goal, p_max))
}

fn strength_word(effect: f64) -> Option<&'static str> {
    let a = effect.abs();
    if a == 0.0 {
        None
    } else if a >= 0.5 {
        Some("strong")
    } else if a >= 0.2 {
        Some("moderate")
    } else {
        Some("weak")
    }
}

/// One deterministic line per ranked path: source factor, strength and sign
/// of the source's total effect on the target, and the rank. Paths whose
/// source has exactly zero total effect are omitted.
pub fn summarize_causal(ranking: &PathRanking, scm: &LinearScm, goal: &Goal) -> String {
    let mut lines = Vec::new();
    for path in &ranking.paths {
        let source = match path.nodes.first() {
            Some(s) => s,
            None => continue,
        };
        let effect = total_effect(scm, source, &goal.target);
        let Some(strength) = strength_word(effect) else {
            continue;
        };
        let sign = if effect > 0.0 { "positive" } else { "negative" };
        let rank = path.rank.unwrap_or(0);
        lines.push(format!(
            "{} {} a {} {} causal effect on {} (ranked {}).",
            display_name(source),
            if display_name(source).ends_with('s') {
                "have"
            } else {
                "has"
            },
            strength,
            sign,
            display_name(&goal.target),
            rank
        ));
    }
    lines.join("\n")
}
