//! Counterfactual evaluation: full-data oracle graphs, mean glucose
//! reduction with bootstrap intervals, paired tests, and ablation
//! experiments.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::food::{FoodItem, ScaledFood};
use crate::graph::{iauc_node, standard_variables};
use crate::ingest::{split_half, UserDataset};
use crate::recommend::{run_protocol, Ablation, Recommendation, TextBackend, TypicalContext};
use crate::scm::{feature_rows, FittedOn, PersonalCausalGraph};
use crate::stats::{bootstrap_ci_mean, mean, wilcoxon_signed_rank};

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub user_id: String,
    pub horizon_min: u32,
    /// Oracle-predicted response to the recommended food.
    pub hat_iauc: f64,
    /// Oracle-predicted response to the user's typical meal.
    pub bar_iauc: f64,
    pub reduction: f64,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon_min: u32,
    pub n: usize,
    pub mgr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Ablation,
    pub seed: u64,
    pub horizons: Vec<HorizonSummary>,
    pub records: Vec<EvalRecord>,
    /// Mean reduction per user across all horizons.
    pub per_user: BTreeMap<String, f64>,
}

/// Fit the oracle graph on the user's complete feature table.
pub fn build_oracle(user: &UserDataset, config: &RunConfig) -> Result<PersonalCausalGraph> {
    PersonalCausalGraph::fit(
        &user.user_id,
        &user.features,
        &standard_variables(),
        config.alpha,
        FittedOn::Full,
    )
}

/// Oracle-predicted response to a candidate food at the given covariates.
pub fn counterfactual_iauc(
    oracle: &PersonalCausalGraph,
    food: &ScaledFood,
    covariates: &BTreeMap<String, f64>,
    target: &str,
) -> Result<f64> {
    crate::recommend::predict_candidate(oracle, food, target, covariates)
}

/// Oracle-predicted response to the user's mean historical meal.
pub fn typical_iauc(
    oracle: &PersonalCausalGraph,
    context: &TypicalContext,
    target: &str,
) -> Result<f64> {
    context.typical_iauc(oracle, target)
}

/// Aggregate records into per-horizon MGR with bias-corrected percentile
/// bootstrap intervals. Deterministic per seed.
pub fn mgr(records: &[EvalRecord], mode: Ablation, seed: u64) -> Result<EvalReport> {
    let mut horizons = Vec::new();
    let mut by_horizon: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_horizon.entry(r.horizon_min).or_default().push(r.reduction);
    }
    for (&horizon, reductions) in &by_horizon {
        if reductions.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "horizon {horizon} has fewer than 2 records"
            )));
        }
        let m = mean(reductions);
        let (lo, hi) = bootstrap_ci_mean(
            reductions,
            BOOTSTRAP_RESAMPLES,
            0.95,
            seed ^ (horizon as u64),
        );
        horizons.push(HorizonSummary {
            horizon_min: horizon,
            n: reductions.len(),
            mgr: m,
            ci_lo: lo,
            ci_hi: hi,
        });
    }
    let mut per_user: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        per_user
            .entry(r.user_id.clone())
            .or_default()
            .push(r.reduction);
    }
    let per_user = per_user
        .into_iter()
        .map(|(u, v)| (u, mean(&v)))
        .collect();
    Ok(EvalReport {
        mode,
        seed,
        horizons,
        records: records.to_vec(),
        per_user,
    })
}

/// Two-sided Wilcoxon signed-rank over per-(user, horizon) mean reductions,
/// paired between two record sets.
pub fn paired_test(records_a: &[EvalRecord], records_b: &[EvalRecord]) -> Result<f64> {
    let group = |records: &[EvalRecord]| -> BTreeMap<(String, u32), f64> {
        let mut acc: BTreeMap<(String, u32), Vec<f64>> = BTreeMap::new();
        for r in records {
            acc.entry((r.user_id.clone(), r.horizon_min))
                .or_default()
                .push(r.reduction);
        }
        acc.into_iter().map(|(k, v)| (k, mean(&v))).collect()
    };
    let a = group(records_a);
    let b = group(records_b);
    let diffs: Vec<f64> = a
        .iter()
        .filter_map(|(key, va)| b.get(key).map(|vb| va - vb))
        .collect();
    if diffs.is_empty() {
        return Err(Error::Data("no matched user/horizon pairs".into()));
    }
    Ok(wilcoxon_signed_rank(&diffs))
}

/// Same, restricted to one horizon and paired per user.
pub fn paired_test_at_horizon(
    records_a: &[EvalRecord],
    records_b: &[EvalRecord],
    horizon_min: u32,
) -> Result<f64> {
    let only = |records: &[EvalRecord]| -> Vec<EvalRecord> {
        records
            .iter()
            .filter(|r| r.horizon_min == horizon_min)
            .cloned()
            .collect()
    };
    paired_test(&only(records_a), &only(records_b))
}

/// Evaluate one user: build train-half and oracle graphs, run the protocol,
/// and score every recommendation counterfactually against the oracle.
pub fn evaluate_user(
    user: &UserDataset,
    db: &[FoodItem],
    backend: &dyn TextBackend,
    config: &RunConfig,
    mode: Ablation,
) -> Result<(Vec<EvalRecord>, Vec<Recommendation>)> {
    let (train, full) = split_half(&user.features)?;
    let specs = standard_variables();
    let train_graph = PersonalCausalGraph::fit(
        &user.user_id,
        &train,
        &specs,
        config.alpha,
        FittedOn::TrainHalf,
    )?;
    let train_rows = feature_rows(&train);
    let train_context = TypicalContext::from_rows(&train_graph, &train_rows);
    let recommendations = run_protocol(&train_graph, &train_context, db, backend, config, mode)?;

    let oracle = PersonalCausalGraph::fit(
        &user.user_id,
        &full,
        &specs,
        config.alpha,
        FittedOn::Full,
    )?;
    let full_rows = feature_rows(&full);
    let oracle_context = TypicalContext::from_rows(&oracle, &full_rows);

    let mut records = Vec::with_capacity(recommendations.len());
    for rec in &recommendations {
        let target = iauc_node(rec.horizon_min)
            .ok_or_else(|| Error::Data(format!("bad horizon {}", rec.horizon_min)))?;
        let bar = typical_iauc(&oracle, &oracle_context, target)?;
        let (hat, fallback) = match &rec.food {
            Some(food) => (
                counterfactual_iauc(&oracle, food, &oracle_context.covariates, target)?,
                false,
            ),
            // A fallback guideline is scored as no change from typical.
            None => (bar, true),
        };
        records.push(EvalRecord {
            user_id: user.user_id.clone(),
            horizon_min: rec.horizon_min,
            hat_iauc: hat,
            bar_iauc: bar,
            reduction: bar - hat,
            fallback_used: fallback,
        });
    }
    Ok((records, recommendations))
}

/// Run the full evaluation over a cohort in one ablation mode. Users are
/// processed in parallel; output order is by cohort position, so the report
/// is deterministic.
pub fn run_experiment(
    users: &[UserDataset],
    db: &[FoodItem],
    backend: &(dyn TextBackend + Sync),
    config: &RunConfig,
    mode: Ablation,
) -> Result<EvalReport> {
    let per_user: Vec<Result<Vec<EvalRecord>>> = users
        .par_iter()
        .map(|user| evaluate_user(user, db, backend, config, mode).map(|(records, _)| records))
        .collect();
    let mut records = Vec::new();
    for outcome in per_user {
        records.extend(outcome?);
    }
    mgr(&records, mode, config.seed)
}

/// Comparison table rows mirroring the published layout:
/// `method,horizon,mgr,ci_lo,ci_hi,p_value` with p against the full mode.
pub fn comparison_table(reports: &[EvalReport]) -> Result<String> {
    let full = reports
        .iter()
        .find(|r| r.mode == Ablation::Full)
        .ok_or_else(|| Error::Data("comparison table needs a full-mode report".into()))?;
    let mut out = String::from("method,horizon,mgr,ci_lo,ci_hi,p_value\n");
    for report in reports {
        for h in &report.horizons {
            let p = if report.mode == Ablation::Full {
                String::new()
            } else {
                format!(
                    "{:.6}",
                    paired_test_at_horizon(&report.records, &full.records, h.horizon_min)?
                )
            };
            out.push_str(&format!(
                "{},{},{:.3},{:.3},{:.3},{}\n",
                report.mode.tag(),
                h.horizon_min,
                h.mgr,
                h.ci_lo,
                h.ci_hi,
                p
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn record(user: &str, horizon: u32, reduction: f64) -> EvalRecord {
        EvalRecord {
            user_id: user.into(),
            horizon_min: horizon,
            hat_iauc: 100.0 - reduction,
            bar_iauc: 100.0,
            reduction,
            fallback_used: false,
        }
    }

    #[test]
    fn mgr_of_equal_reductions_is_degenerate() {
        let records: Vec<EvalRecord> = (0..6).map(|i| record(&format!("u{i}"), 120, 7.5)).collect();
        let report = mgr(&records, Ablation::Full, 1).unwrap();
        let h = &report.horizons[0];
        assert_relative_eq!(h.mgr, 7.5);
        assert_relative_eq!(h.ci_lo, 7.5);
        assert_relative_eq!(h.ci_hi, 7.5);
        assert_eq!(h.n, 6);
    }

    #[test]
    fn mgr_zero_ten_averages_to_five() {
        let records = vec![record("a", 60, 0.0), record("b", 60, 10.0)];
        let report = mgr(&records, Ablation::Full, 1).unwrap();
        assert_relative_eq!(report.horizons[0].mgr, 5.0);
    }

    #[test]
    fn mgr_matches_recompute_identity() {
        let reductions = [3.0, -1.0, 4.5, 0.25, 9.0];
        let records: Vec<EvalRecord> = reductions
            .iter()
            .enumerate()
            .map(|(i, r)| record(&format!("u{i}"), 30, *r))
            .collect();
        let report = mgr(&records, Ablation::Full, 1).unwrap();
        let manual: f64 = reductions.iter().sum::<f64>() / reductions.len() as f64;
        assert_relative_eq!(report.horizons[0].mgr, manual, epsilon = 1e-12);
        assert!(report.horizons[0].ci_lo <= manual && manual <= report.horizons[0].ci_hi);
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let records: Vec<EvalRecord> = (0..30)
            .map(|i| record(&format!("u{i}"), 120, (i as f64 * 0.7).sin() * 10.0))
            .collect();
        let a = mgr(&records, Ablation::Full, 42).unwrap();
        let b = mgr(&records, Ablation::Full, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn paired_test_identity_is_one() {
        let records: Vec<EvalRecord> = (0..10)
            .map(|i| record(&format!("u{i}"), 120, i as f64))
            .collect();
        let p = paired_test(&records, &records).unwrap();
        assert_relative_eq!(p, 1.0);
    }

    #[test]
    fn paired_test_all_positive_differences_is_small() {
        let a: Vec<EvalRecord> = (0..20)
            .map(|i| record(&format!("u{i}"), 120, 10.0 + i as f64))
            .collect();
        let b: Vec<EvalRecord> = (0..20)
            .map(|i| record(&format!("u{i}"), 120, i as f64))
            .collect();
        let p = paired_test(&a, &b).unwrap();
        assert!(p < 0.001, "p = {p}");
    }

    #[test]
    fn paired_test_symmetric_differences_is_large() {
        let a: Vec<EvalRecord> = (0..10)
            .map(|i| record(&format!("u{i}"), 120, if i % 2 == 0 { 5.0 } else { -5.0 }))
            .collect();
        let b: Vec<EvalRecord> = (0..10)
            .map(|i| record(&format!("u{i}"), 120, 0.0))
            .collect();
        let p = paired_test(&a, &b).unwrap();
        assert!(p > 0.5, "p = {p}");
    }

    #[test]
    fn report_round_trips_through_json() {
        let records = vec![record("a", 30, 1.0), record("b", 30, 2.0)];
        let report = mgr(&records, Ablation::NoRanking, 3).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), report);
    }
}
