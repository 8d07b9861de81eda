//! Edge orientation: v-structures, Meek propagation, temporal tiers, and a
//! deterministic lexicographic tie-break. Never emits a cyclic graph.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use super::Skeleton;
use crate::error::Result;
use crate::graph::{Dag, Edge, Provenance};

struct Pdag<'a> {
    skeleton: &'a Skeleton,
    directed: BTreeMap<(usize, usize), Provenance>,
    undirected: BTreeSet<(usize, usize)>,
    /// Variable indices in lexicographic name order.
    order: Vec<usize>,
}

impl<'a> Pdag<'a> {
    fn new(skeleton: &'a Skeleton) -> Self {
        let mut order: Vec<usize> = (0..skeleton.variables.len()).collect();
        order.sort_by(|&a, &b| skeleton.variables[a].name.cmp(&skeleton.variables[b].name));
        Self {
            skeleton,
            directed: BTreeMap::new(),
            undirected: skeleton.adjacency.clone(),
            order,
        }
    }

    fn name(&self, i: usize) -> &str {
        &self.skeleton.variables[i].name
    }

    fn is_undirected(&self, a: usize, b: usize) -> bool {
        self.undirected.contains(&(a.min(b), a.max(b)))
    }

    fn has_directed(&self, from: usize, to: usize) -> bool {
        self.directed.contains_key(&(from, to))
    }

    fn adjacent(&self, a: usize, b: usize) -> bool {
        self.skeleton.is_adjacent(a, b)
    }

    /// True if a directed path from `from` to `to` exists.
    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(node) = stack.pop() {
            if node == to {
                return true;
            }
            if seen.insert(node) {
                for (&(f, t), _) in self.directed.iter() {
                    if f == node && !seen.contains(&t) {
                        stack.push(t);
                    }
                }
            }
        }
        false
    }

    /// Try to orient the undirected edge a-b as a -> b. Refuses (and logs)
    /// when the edge is already directed the other way or the orientation
    /// would close a directed cycle.
    fn orient(&mut self, from: usize, to: usize, provenance: Provenance) -> bool {
        let key = (from.min(to), from.max(to));
        if self.has_directed(from, to) {
            return false;
        }
        if self.has_directed(to, from) {
            warn!(
                "orientation conflict on {}-{}: keeping earlier direction",
                self.name(from),
                self.name(to)
            );
            return false;
        }
        if !self.undirected.contains(&key) {
            return false;
        }
        if self.reaches(to, from) {
            warn!(
                "orienting {} -> {} would close a cycle; dropped",
                self.name(from),
                self.name(to)
            );
            return false;
        }
        self.undirected.remove(&key);
        self.directed.insert((from, to), provenance);
        true
    }

    fn orient_v_structures(&mut self) {
        // For nonadjacent x, y with common neighbor z not in sepset(x, y),
        // orient x -> z <- y. Deterministic order by names.
        for &x in &self.order.clone() {
            for &y in &self.order.clone() {
                if self.name(x) >= self.name(y) || self.adjacent(x, y) {
                    continue;
                }
                let sepset = self.skeleton.sepsets.get(&(x.min(y), x.max(y)));
                for &z in &self.order.clone() {
                    if z == x || z == y || !self.adjacent(x, z) || !self.adjacent(y, z) {
                        continue;
                    }
                    let in_sepset = sepset.map(|s| s.contains(&z)).unwrap_or(true);
                    if !in_sepset {
                        self.orient(x, z, Provenance::VStructure);
                        self.orient(y, z, Provenance::VStructure);
                    }
                }
            }
        }
    }

    /// Meek rules 1-4 applied to closure.
    fn meek_closure(&mut self) {
        loop {
            let mut changed = false;
            let order = self.order.clone();
            for &a in &order {
                for &b in &order {
                    if a == b || !self.is_undirected(a, b) {
                        continue;
                    }
                    // R1: c -> a, c and b nonadjacent  =>  a -> b.
                    let r1 = order
                        .iter()
                        .any(|&c| self.has_directed(c, a) && !self.adjacent(c, b) && c != b);
                    // R2: a -> c -> b  =>  a -> b.
                    let r2 = order
                        .iter()
                        .any(|&c| self.has_directed(a, c) && self.has_directed(c, b));
                    // R3: a - c -> b and a - d -> b with c, d nonadjacent  =>  a -> b.
                    let mut r3 = false;
                    for &c in &order {
                        if !(self.is_undirected(a, c) && self.has_directed(c, b)) {
                            continue;
                        }
                        for &d in &order {
                            if d != c
                                && self.is_undirected(a, d)
                                && self.has_directed(d, b)
                                && !self.adjacent(c, d)
                            {
                                r3 = true;
                            }
                        }
                    }
                    // R4: a - d, d -> c, c -> b, a - c or a adjacent c  =>  a -> b.
                    let mut r4 = false;
                    for &c in &order {
                        if !self.has_directed(c, b) || !self.adjacent(a, c) {
                            continue;
                        }
                        for &d in &order {
                            if self.has_directed(d, c)
                                && self.is_undirected(a, d)
                                && !self.adjacent(d, b)
                            {
                                r4 = true;
                            }
                        }
                    }
                    if (r1 || r2 || r3 || r4) && self.orient(a, b, Provenance::Meek) {
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Orient remaining undirected edges from lower to higher tier.
    fn orient_by_tier(&mut self) {
        for (a, b) in self.undirected.clone() {
            let ta = self.skeleton.variables[a].tier;
            let tb = self.skeleton.variables[b].tier;
            if ta < tb {
                self.orient(a, b, Provenance::Tier);
            } else if tb < ta {
                self.orient(b, a, Provenance::Tier);
            }
        }
    }

    /// Same-tier leftovers oriented by lexicographic name order.
    fn orient_by_name(&mut self) {
        for (a, b) in self.undirected.clone() {
            let (from, to) = if self.name(a) <= self.name(b) {
                (a, b)
            } else {
                (b, a)
            };
            if !self.orient(from, to, Provenance::TieBreak) {
                // Lexicographic direction would close a cycle; the reverse
                // cannot (the graph was acyclic before this edge).
                self.orient(to, from, Provenance::TieBreak);
            }
        }
    }

    fn into_dag(self) -> Result<Dag> {
        let edges = self
            .directed
            .iter()
            .map(|(&(f, t), &p)| Edge {
                from: self.skeleton.variables[f].name.clone(),
                to: self.skeleton.variables[t].name.clone(),
                orientation_provenance: p,
            })
            .collect();
        Dag::new(self.skeleton.variables.clone(), edges)
    }
}

/// Orient a skeleton into a DAG: v-structures, Meek closure, temporal tiers,
/// then lexicographic tie-break, re-propagating Meek after the tier pass.
pub fn orient_edges(skeleton: &Skeleton) -> Result<Dag> {
    let mut pdag = Pdag::new(skeleton);
    pdag.orient_v_structures();
    pdag.meek_closure();
    pdag.orient_by_tier();
    pdag.meek_closure();
    pdag.orient_by_name();
    pdag.into_dag()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Role, VariableSpec};

    fn skeleton(
        vars: Vec<VariableSpec>,
        edges: &[(usize, usize)],
        sepsets: &[((usize, usize), &[usize])],
    ) -> Skeleton {
        Skeleton {
            variables: vars,
            adjacency: edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect(),
            sepsets: sepsets
                .iter()
                .map(|&((a, b), s)| ((a.min(b), a.max(b)), s.iter().cloned().collect()))
                .collect(),
        }
    }

    fn nut(name: &str) -> VariableSpec {
        VariableSpec::new(name, Role::Nutrient, 0)
    }

    fn out(name: &str) -> VariableSpec {
        VariableSpec::new(name, Role::Outcome, 2)
    }

    #[test]
    fn collider_is_recovered() {
        // x - z - y with x, y nonadjacent and z not in sepset(x, y).
        let sk = skeleton(
            vec![nut("x"), nut("y"), nut("z")],
            &[(0, 2), (1, 2)],
            &[((0, 1), &[])],
        );
        let dag = orient_edges(&sk).unwrap();
        assert!(dag.has_edge("x", "z"));
        assert!(dag.has_edge("y", "z"));
        let prov: Vec<_> = dag.edges.iter().map(|e| e.orientation_provenance).collect();
        assert!(prov.iter().all(|p| *p == Provenance::VStructure));
    }

    #[test]
    fn tier_orients_nutrient_to_outcome() {
        let sk = skeleton(vec![nut("carbs"), out("iauc")], &[(0, 1)], &[]);
        let dag = orient_edges(&sk).unwrap();
        assert!(dag.has_edge("carbs", "iauc"));
        assert_eq!(dag.edges[0].orientation_provenance, Provenance::Tier);
    }

    #[test]
    fn same_tier_breaks_ties_by_name() {
        let sk = skeleton(vec![nut("fiber"), nut("carbs")], &[(0, 1)], &[]);
        let dag = orient_edges(&sk).unwrap();
        assert!(dag.has_edge("carbs", "fiber"));
        assert_eq!(dag.edges[0].orientation_provenance, Provenance::TieBreak);
    }

    #[test]
    fn meek_rule_one_propagates() {
        // c -> a (v-structure with w), a - b, c and b nonadjacent => a -> b.
        let sk = skeleton(
            vec![nut("a"), nut("b"), nut("c"), nut("w")],
            &[(0, 1), (0, 2), (0, 3)],
            &[((2, 3), &[])],
        );
        let dag = orient_edges(&sk).unwrap();
        assert!(dag.has_edge("c", "a") && dag.has_edge("w", "a"));
        assert!(dag.has_edge("a", "b"));
        let ab = dag
            .edges
            .iter()
            .find(|e| e.from == "a" && e.to == "b")
            .unwrap();
        assert_eq!(ab.orientation_provenance, Provenance::Meek);
    }

    #[test]
    fn output_is_always_acyclic() {
        // Fully connected same-tier triangle: orientation must not cycle.
        let sk = skeleton(
            vec![nut("a"), nut("b"), nut("c")],
            &[(0, 1), (0, 2), (1, 2)],
            &[],
        );
        let dag = orient_edges(&sk).unwrap();
        assert!(dag.topological_order().is_ok());
        assert_eq!(dag.edges.len(), 3);
    }
}
