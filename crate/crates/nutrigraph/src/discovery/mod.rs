//! Causal structure discovery: PC skeleton search with Fisher-Z conditional
//! independence tests, then v-structure / Meek / tier orientation.

mod independence;
mod orient;

pub use independence::{fisher_z_test, partial_correlation, Independence};
pub use orient::orient_edges;

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use crate::error::{Error, Result};
use crate::graph::{Dag, Edge, Provenance, Role, VariableSpec};
use crate::ingest::MealFeatureRow;

/// Standardized observation matrix for independence testing.
///
/// Columns follow the order of `variables`; constant columns are rejected.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    pub variables: Vec<VariableSpec>,
    /// Row-major, `rows.len() == n`, each row has `variables.len()` entries.
    pub rows: Vec<Vec<f64>>,
}

impl DataMatrix {
    /// Standardize columns to zero mean and unit variance.
    pub fn new(variables: Vec<VariableSpec>, raw_rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = variables.len();
        if raw_rows.iter().any(|r| r.len() != d) {
            return Err(Error::Data("ragged data matrix".into()));
        }
        let n = raw_rows.len();
        if n == 0 {
            return Err(Error::InsufficientData("empty data matrix".into()));
        }
        let mut rows = raw_rows;
        for j in 0..d {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
            if var <= 0.0 {
                return Err(Error::Data(format!(
                    "constant column {:?} cannot enter discovery",
                    variables[j].name
                )));
            }
            let sd = var.sqrt();
            for r in rows.iter_mut() {
                r[j] = (r[j] - mean) / sd;
            }
        }
        Ok(Self { variables, rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Pearson correlation matrix of the standardized columns.
    pub fn correlation(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let n = self.n() as f64;
        let mut c = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in i..d {
                let s: f64 = self.rows.iter().map(|r| r[i] * r[j]).sum();
                c[i][j] = s / n;
                c[j][i] = c[i][j];
            }
        }
        c
    }
}

/// Undirected skeleton with separation sets for removed pairs.
#[derive(Debug, Clone)]
pub struct Skeleton {
    pub variables: Vec<VariableSpec>,
    /// Adjacency as unordered pairs of variable indices, `(i, j)` with `i < j`.
    pub adjacency: BTreeSet<(usize, usize)>,
    /// For each removed pair, the conditioning set that rendered it independent.
    pub sepsets: BTreeMap<(usize, usize), BTreeSet<usize>>,
}

impl Skeleton {
    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency.contains(&(i.min(j), i.max(j)))
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .adjacency
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Maximum conditioning-set size tried during skeleton search.
pub const MAX_COND_SIZE: usize = 4;

/// All size-`k` subsets of `items` in lexicographic order.
fn subsets_of_size(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(items: &[usize], k: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..items.len() {
            current.push(items[i]);
            rec(items, k, i + 1, current, out);
            current.pop();
        }
    }
    rec(items, k, 0, &mut current, &mut out);
    out
}

/// PC skeleton phase: start from the complete graph, remove edges that test
/// independent under conditioning sets of increasing size drawn from current
/// adjacencies. Iteration order is deterministic (lexicographic by variable
/// name, conditioning sets in lexicographic order).
pub fn pc_skeleton(data: &DataMatrix, alpha: f64) -> Skeleton {
    let d = data.dim();
    // Name-sorted iteration order over variable indices.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| data.variables[a].name.cmp(&data.variables[b].name));

    let corr = data.correlation();
    let mut adjacency: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 0..d {
        for j in (i + 1)..d {
            adjacency.insert((i, j));
        }
    }
    let mut sepsets = BTreeMap::new();

    let max_level = MAX_COND_SIZE.min(d.saturating_sub(2));
    for level in 0..=max_level {
        // Stop once no remaining pair has enough candidate neighbors to form
        // a conditioning set of this size.
        let mut any_candidates = false;
        // Pairs in lexicographic name order.
        for &x in &order {
            for &y in &order {
                if data.variables[x].name >= data.variables[y].name {
                    continue;
                }
                let key = (x.min(y), x.max(y));
                if !adjacency.contains(&key) {
                    continue;
                }
                // Candidate conditioning variables: current neighbors of x or
                // y excluding the pair, in name order.
                let mut candidates: BTreeSet<usize> = BTreeSet::new();
                for &(a, b) in &adjacency {
                    if a == x || a == y {
                        candidates.insert(b);
                    }
                    if b == x || b == y {
                        candidates.insert(a);
                    }
                }
                candidates.remove(&x);
                candidates.remove(&y);
                let mut cand: Vec<usize> = candidates.into_iter().collect();
                cand.sort_by(|&a, &b| data.variables[a].name.cmp(&data.variables[b].name));
                if cand.len() < level {
                    continue;
                }
                if cand.len() > level {
                    any_candidates = true;
                }
                for z in subsets_of_size(&cand, level) {
                    match fisher_z_test(&corr, data.n(), x, y, &z, alpha) {
                        Ok((Independence::Independent, _)) => {
                            adjacency.remove(&key);
                            sepsets.insert(key, z.iter().cloned().collect());
                            break;
                        }
                        Ok((Independence::Dependent, _)) => {}
                        Err(_) => {
                            // Inconclusive test: retain the edge.
                        }
                    }
                }
            }
        }
        if !any_candidates {
            break;
        }
    }

    Skeleton {
        variables: data.variables.clone(),
        adjacency,
        sepsets,
    }
}

/// Minimum feature rows for a PC run; below this a tier-only fallback graph
/// is emitted.
pub const MIN_DISCOVERY_ROWS: usize = 8;

/// End-to-end discovery: standardize, skeleton search, orientation.
///
/// Variables whose column is constant are dropped with a warning. With fewer
/// than [`MIN_DISCOVERY_ROWS`] rows, falls back to the tier graph (every
/// nutrient and modulator pointing at every outcome).
pub fn discover(rows: &[Vec<f64>], specs: &[VariableSpec], alpha: f64) -> Result<Dag> {
    if rows.len() < MIN_DISCOVERY_ROWS {
        warn!(
            "only {} rows available; emitting tier-fallback graph",
            rows.len()
        );
        return tier_fallback_graph(specs);
    }
    // Drop constant columns before building the matrix.
    let mut keep: Vec<usize> = Vec::new();
    for j in 0..specs.len() {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / rows.len() as f64;
        if var > 1e-12 {
            keep.push(j);
        } else {
            warn!("dropping constant variable {:?} from discovery", specs[j].name);
        }
    }
    if keep.len() < 2 {
        return Err(Error::InsufficientData(
            "fewer than 2 non-constant variables".into(),
        ));
    }
    let kept_specs: Vec<VariableSpec> = keep.iter().map(|&j| specs[j].clone()).collect();
    let kept_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| keep.iter().map(|&j| r[j]).collect())
        .collect();
    let matrix = DataMatrix::new(kept_specs, kept_rows)?;
    let skeleton = pc_skeleton(&matrix, alpha);
    orient_edges(&skeleton)
}

/// Every nutrient and modulator pointing at every outcome, tagged `tier`.
pub fn tier_fallback_graph(specs: &[VariableSpec]) -> Result<Dag> {
    let mut edges = Vec::new();
    for s in specs {
        if matches!(s.role, Role::Nutrient | Role::Modulator) {
            for t in specs {
                if t.role == Role::Outcome {
                    edges.push(Edge {
                        from: s.name.clone(),
                        to: t.name.clone(),
                        orientation_provenance: Provenance::Tier,
                    });
                }
            }
        }
    }
    Dag::new(specs.to_vec(), edges)
}

/// Build the discovery input matrix from feature rows using the standard
/// variable order. Rows with a missing horizon value are skipped.
pub fn feature_rows_to_matrix(features: &[MealFeatureRow], specs: &[VariableSpec]) -> Vec<Vec<f64>> {
    use crate::graph;
    features
        .iter()
        .filter_map(|r| {
            let mut row = Vec::with_capacity(specs.len());
            for s in specs {
                let v = match s.name.as_str() {
                    graph::CARBOHYDRATES => Some(r.carbohydrates_g),
                    graph::PROTEIN => Some(r.protein_g),
                    graph::FAT => Some(r.fat_g),
                    graph::FIBER => Some(r.fiber_g),
                    graph::MET => Some(r.daily_met),
                    graph::BASELINE_GLUCOSE => Some(r.baseline_glucose),
                    graph::IAUC_30 => Some(r.iauc_30),
                    graph::IAUC_60 => r.iauc_60,
                    graph::IAUC_120 => r.iauc_120,
                    _ => None,
                };
                row.push(v?);
            }
            Some(row)
        })
        .collect()
}
