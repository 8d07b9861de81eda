//! Linear structural causal models on a discovered DAG: fitting, total
//! effects, do-intervention expectations, response deltas, and ancestral
//! sampling.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::discovery;
use crate::error::{Error, Result};
use crate::graph::{Dag, Role, VariableSpec};
use crate::ingest::MealFeatureRow;

/// One observation as a map from variable name to value.
pub type Row = BTreeMap<String, f64>;

/// Ridge penalty applied when the OLS design is rank-deficient.
const RIDGE_PENALTY: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

/// A fitted linear SCM: the DAG plus per-edge weights, per-node intercepts,
/// and residual noise variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScm {
    #[serde(flatten)]
    pub dag: Dag,
    pub coefficients: Vec<Coefficient>,
    pub intercepts: BTreeMap<String, f64>,
    pub noise_variance: BTreeMap<String, f64>,
}

impl LinearScm {
    /// Assemble an SCM from explicit parts, checking that a coefficient
    /// exists for exactly every DAG edge.
    pub fn new(
        dag: Dag,
        coefficients: Vec<Coefficient>,
        intercepts: BTreeMap<String, f64>,
        noise_variance: BTreeMap<String, f64>,
    ) -> Result<Self> {
        for c in &coefficients {
            if !dag.has_edge(&c.from, &c.to) {
                return Err(Error::Data(format!(
                    "coefficient {} -> {} has no matching edge",
                    c.from, c.to
                )));
            }
        }
        if coefficients.len() != dag.edges.len() {
            return Err(Error::Data(format!(
                "{} coefficients for {} edges",
                coefficients.len(),
                dag.edges.len()
            )));
        }
        if noise_variance.values().any(|v| *v < 0.0) {
            return Err(Error::Data("negative noise variance".into()));
        }
        let mut coefficients = coefficients;
        coefficients.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
        Ok(Self {
            dag,
            coefficients,
            intercepts,
            noise_variance,
        })
    }

    pub fn weight(&self, from: &str, to: &str) -> Option<f64> {
        self.coefficients
            .iter()
            .find(|c| c.from == from && c.to == to)
            .map(|c| c.weight)
    }

    pub fn intercept(&self, node: &str) -> f64 {
        self.intercepts.get(node).copied().unwrap_or(0.0)
    }
}

/// Which slice of the user's data a graph was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedOn {
    TrainHalf,
    Full,
}

/// A user's fitted graph together with the historical-usage statistic R(v).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalCausalGraph {
    pub user_id: String,
    pub fitted_on: FittedOn,
    pub scm: LinearScm,
    /// Min-max normalized historical consumption, one entry per non-outcome
    /// node present in the graph.
    pub usage: BTreeMap<String, f64>,
}

impl PersonalCausalGraph {
    /// Discover a DAG on `features` and fit the SCM and usage statistics.
    pub fn fit(
        user_id: &str,
        features: &[MealFeatureRow],
        specs: &[VariableSpec],
        alpha: f64,
        fitted_on: FittedOn,
    ) -> Result<Self> {
        let matrix_rows = discovery::feature_rows_to_matrix(features, specs);
        let dag = discovery::discover(&matrix_rows, specs, alpha)?;
        let rows = feature_rows(features);
        let scm = fit_linear_scm(&dag, &rows)?;
        let usage = usage_stats(&scm.dag, &rows);
        Ok(Self {
            user_id: user_id.to_string(),
            fitted_on,
            scm,
            usage,
        })
    }
}

/// An interventional query: do() assignments, contextual covariates held
/// fixed, and the target node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionQuery {
    pub assignments: BTreeMap<String, f64>,
    pub covariates: BTreeMap<String, f64>,
    pub target: String,
}

impl InterventionQuery {
    pub fn validate(&self, scm: &LinearScm) -> Result<()> {
        if self.assignments.contains_key(&self.target) {
            return Err(Error::Data("target must not be assigned".into()));
        }
        for k in self.assignments.keys() {
            if self.covariates.contains_key(k) {
                return Err(Error::Data(format!(
                    "{k} is both assigned and a covariate"
                )));
            }
        }
        if !scm.dag.contains(&self.target) {
            return Err(Error::Data(format!("unknown target {:?}", self.target)));
        }
        Ok(())
    }
}

/// Result of a do-intervention expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoResult {
    pub value: f64,
    /// False when no assigned node is an ancestor of the target, in which
    /// case `value` is the target's unconditional mean.
    pub target_influenced: bool,
}

/// Per-node ordinary least squares of each node on its DAG parents.
///
/// Nodes without parents get intercept = sample mean. A rank-deficient
/// design falls back to ridge regression with a small penalty.
pub fn fit_linear_scm(dag: &Dag, rows: &[Row]) -> Result<LinearScm> {
    let mut coefficients = Vec::new();
    let mut intercepts = BTreeMap::new();
    let mut noise_variance = BTreeMap::new();

    for var in &dag.variables {
        let node = &var.name;
        let parents = dag.parents(node);
        let usable: Vec<&Row> = rows
            .iter()
            .filter(|r| {
                r.contains_key(node.as_str()) && parents.iter().all(|p| r.contains_key(*p))
            })
            .collect();
        if parents.is_empty() {
            if usable.is_empty() {
                return Err(Error::InsufficientData(format!("no rows for node {node}")));
            }
            let values: Vec<f64> = usable.iter().map(|r| r[node.as_str()]).collect();
            let mean = crate::stats::mean(&values);
            intercepts.insert(node.clone(), mean);
            noise_variance.insert(node.clone(), crate::stats::variance(&values));
            continue;
        }
        let n = usable.len();
        if n < parents.len() + 2 {
            return Err(Error::InsufficientData(format!(
                "node {node} has {} parents but only {n} usable rows",
                parents.len()
            )));
        }
        let p = parents.len();
        let x = DMatrix::from_fn(n, p + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                usable[i][parents[j - 1]]
            }
        });
        let y = DVector::from_fn(n, |i, _| usable[i][node.as_str()]);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let beta = match xtx.clone().cholesky() {
            Some(chol) if is_well_conditioned(&xtx) => chol.solve(&xty),
            _ => {
                warn!("rank-deficient design for node {node}; using ridge fallback");
                let mut ridged = xtx;
                for i in 0..(p + 1) {
                    ridged[(i, i)] += RIDGE_PENALTY;
                }
                ridged
                    .cholesky()
                    .ok_or_else(|| Error::Data(format!("cannot solve regression for {node}")))?
                    .solve(&xty)
            }
        };
        let residuals = &y - &x * &beta;
        let sse: f64 = residuals.iter().map(|r| r * r).sum();
        intercepts.insert(node.clone(), beta[0]);
        noise_variance.insert(node.clone(), sse / n as f64);
        for (j, parent) in parents.iter().enumerate() {
            coefficients.push(Coefficient {
                from: (*parent).to_string(),
                to: node.clone(),
                weight: beta[j + 1],
            });
        }
    }
    LinearScm::new(dag.clone(), coefficients, intercepts, noise_variance)
}

fn is_well_conditioned(xtx: &DMatrix<f64>) -> bool {
    // Cheap proxy: determinant relative to the diagonal scale.
    let scale: f64 = (0..xtx.nrows()).map(|i| xtx[(i, i)]).product();
    if scale <= 0.0 {
        return false;
    }
    (xtx.determinant() / scale).abs() > 1e-10
}

/// Historical-usage statistic R(v): per-node mean over rows, min-max
/// normalized within each role group so every node a path may traverse has
/// an entry. A degenerate group (all means equal) maps to 1, or 0 when the
/// shared mean is zero.
pub fn usage_stats(dag: &Dag, rows: &[Row]) -> BTreeMap<String, f64> {
    let mut usage = BTreeMap::new();
    for role in [
        Role::Nutrient,
        Role::Modulator,
        Role::Biomarker,
        Role::Outcome,
    ] {
        let nodes: Vec<&VariableSpec> = dag.variables.iter().filter(|v| v.role == role).collect();
        let means: Vec<f64> = nodes
            .iter()
            .map(|v| {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| r.get(&v.name).copied())
                    .collect();
                if vals.is_empty() {
                    0.0
                } else {
                    crate::stats::mean(&vals)
                }
            })
            .collect();
        if nodes.is_empty() {
            continue;
        }
        let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (v, m) in nodes.iter().zip(means.iter()) {
            let r = if hi > lo {
                (m - lo) / (hi - lo)
            } else if *m != 0.0 {
                1.0
            } else {
                0.0
            };
            usage.insert(v.name.clone(), r);
        }
    }
    usage
}

/// Sum over all directed paths from `source` to `target` of the product of
/// edge coefficients along each path. Zero when no path exists.
pub fn total_effect(scm: &LinearScm, source: &str, target: &str) -> f64 {
    fn rec(scm: &LinearScm, node: &str, target: &str, memo: &mut BTreeMap<String, f64>) -> f64 {
        if node == target {
            return 1.0;
        }
        if let Some(&v) = memo.get(node) {
            return v;
        }
        let mut total = 0.0;
        for edge in scm.dag.edges.iter().filter(|e| e.from == node) {
            let w = scm.weight(&edge.from, &edge.to).unwrap_or(0.0);
            total += w * rec(scm, &edge.to, target, memo);
        }
        memo.insert(node.to_string(), total);
        total
    }
    if !scm.dag.contains(source) || !scm.dag.contains(target) {
        return 0.0;
    }
    rec(scm, source, target, &mut BTreeMap::new())
}

/// Expected target value under do(assignments) with covariates held fixed:
/// propagate intercept + weighted parents in topological order, noise at its
/// zero mean.
pub fn do_intervention(query: &InterventionQuery, scm: &LinearScm) -> Result<DoResult> {
    query.validate(scm)?;
    let order = scm.dag.topological_order()?;
    let mut values: BTreeMap<&str, f64> = BTreeMap::new();
    for node in &order {
        let v = if let Some(&a) = query.assignments.get(node) {
            a
        } else if let Some(&c) = query.covariates.get(node) {
            c
        } else {
            let mut v = scm.intercept(node);
            for parent in scm.dag.parents(node) {
                v += scm.weight(parent, node).unwrap_or(0.0) * values[parent];
            }
            v
        };
        values.insert(node.as_str(), v);
    }
    let ancestors = scm.dag.ancestral_set(&query.target);
    let target_influenced = query
        .assignments
        .keys()
        .chain(query.covariates.keys())
        .any(|k| ancestors.contains(k));
    Ok(DoResult {
        value: values[query.target.as_str()],
        target_influenced,
    })
}

/// Expected change in `target` for nutrient deltas: sum of total effects
/// times deltas. Equals the do-intervention difference exactly in a linear
/// SCM.
pub fn response_delta(scm: &LinearScm, deltas: &BTreeMap<String, f64>, target: &str) -> f64 {
    deltas
        .iter()
        .map(|(node, d)| total_effect(scm, node, target) * d)
        .sum()
}

/// Draw `n` rows by topological-order sampling with Gaussian noise of the
/// fitted variances, under an optional intervention. Deterministic per seed.
pub fn ancestral_sample_do(
    scm: &LinearScm,
    intervention: &BTreeMap<String, f64>,
    n: usize,
    seed: u64,
) -> Result<Vec<Row>> {
    let order = scm.dag.topological_order()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: BTreeMap<&str, Normal<f64>> = order
        .iter()
        .map(|node| {
            let sd = scm
                .noise_variance
                .get(node)
                .copied()
                .unwrap_or(0.0)
                .max(0.0)
                .sqrt();
            (node.as_str(), Normal::new(0.0, sd).unwrap())
        })
        .collect();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Row = BTreeMap::new();
        for node in &order {
            let v = if let Some(&a) = intervention.get(node) {
                a
            } else {
                let mut v = scm.intercept(node) + noise[node.as_str()].sample(&mut rng);
                for parent in scm.dag.parents(node) {
                    v += scm.weight(parent, node).unwrap_or(0.0) * row[parent];
                }
                v
            };
            row.insert(node.clone(), v);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Observational ancestral sampling (no intervention).
pub fn ancestral_sample(scm: &LinearScm, n: usize, seed: u64) -> Result<Vec<Row>> {
    ancestral_sample_do(scm, &BTreeMap::new(), n, seed)
}

/// Convert feature rows to name/value maps over the standard variables.
/// Missing horizon values are simply absent from the map.
pub fn feature_rows(features: &[MealFeatureRow]) -> Vec<Row> {
    use crate::graph::*;
    features
        .iter()
        .map(|r| {
            let mut row: Row = BTreeMap::new();
            row.insert(CARBOHYDRATES.into(), r.carbohydrates_g);
            row.insert(PROTEIN.into(), r.protein_g);
            row.insert(FAT.into(), r.fat_g);
            row.insert(FIBER.into(), r.fiber_g);
            row.insert(MET.into(), r.daily_met);
            row.insert(BASELINE_GLUCOSE.into(), r.baseline_glucose);
            row.insert(IAUC_30.into(), r.iauc_30);
            if let Some(v) = r.iauc_60 {
                row.insert(IAUC_60.into(), v);
            }
            if let Some(v) = r.iauc_120 {
                row.insert(IAUC_120.into(), v);
            }
            row
        })
        .collect()
}
