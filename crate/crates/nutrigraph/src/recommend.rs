//! The five-stage recommendation pipeline: goal, path ranking, retrieval,
//! verification, and response rendering, plus the per-participant query
//! protocol.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::food::{balanced_nutrition_score, normalize_to_kcal, retrieve, FoodItem, ScaledFood};
use crate::graph::{display_name, Role, BASELINE_GLUCOSE, MET};
use crate::paths::{
    enumerate_paths, identify_goal, rank_for_goal, rank_paths, summarize_causal, Direction, Goal,
    PathRanking,
};
use crate::scm::{do_intervention, total_effect, FittedOn, InterventionQuery, PersonalCausalGraph};
use crate::stats::mean;

/// Pipeline variants used for ablation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoVerification,
    NoRanking,
    NoGraph,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_verification" => Ok(Self::NoVerification),
            "no_ranking" => Ok(Self::NoRanking),
            "no_graph" => Ok(Self::NoGraph),
            other => Err(Error::Usage(format!(
                "unknown mode {other:?}; expected full|no_verification|no_ranking|no_graph"
            ))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoVerification => "no_verification",
            Self::NoRanking => "no_ranking",
            Self::NoGraph => "no_graph",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRequest {
    pub user_id: String,
    pub query_text: String,
    pub horizon_min: u32,
    pub exclude: BTreeSet<String>,
    pub budget_kcal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub candidate: String,
    pub predicted_iauc: f64,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub user_id: String,
    pub horizon_min: u32,
    /// Absent when the fallback guideline was issued.
    pub food: Option<ScaledFood>,
    pub predicted_iauc: Option<f64>,
    pub typical_iauc: f64,
    /// Expected change versus the typical response; 0 for fallbacks.
    pub predicted_delta: f64,
    pub summary: String,
    pub trace: Vec<TraceEntry>,
    pub fallback_used: bool,
    pub response: String,
    pub backend_deterministic: bool,
}

/// Text generation boundary. The default implementation is a pure template
/// and therefore deterministic.
pub trait TextBackend {
    fn render(&self, prompt: &str) -> Result<String>;
    fn deterministic(&self) -> bool {
        true
    }
}

/// Deterministic backend that assembles the response from labeled prompt
/// sections, causal explanation first.
#[derive(Debug, Default, Clone, Copy)]
pub struct TemplateBackend;

fn prompt_section<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    let start = prompt.find(label)? + label.len();
    let rest = &prompt[start..];
    let end = rest.find("\n## ").unwrap_or(rest.len());
    Some(rest[..end].trim())
}

impl TextBackend for TemplateBackend {
    fn render(&self, prompt: &str) -> Result<String> {
        let section = |label: &str| {
            prompt_section(prompt, label).ok_or_else(|| Error::Backend {
                message: format!("prompt missing section {label:?}"),
                prompt: prompt.to_string(),
            })
        };
        let causal = section("## Causal paths\n")?;
        let food = section("## Retrieved food\n")?;
        let effect = section("## Predicted effect\n")?;
        let mut out = String::new();
        if causal.is_empty() {
            out.push_str("No personal causal relationships were identified.\n");
        } else {
            out.push_str("Here is what your data shows:\n");
            out.push_str(causal);
            out.push('\n');
        }
        out.push('\n');
        out.push_str(food);
        out.push('\n');
        out.push_str(effect);
        out.push('\n');
        Ok(out)
    }
}

/// Typical response context: the user's mean historical nutrient vector and
/// modulator levels from the rows the graph was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct TypicalContext {
    pub nutrient_means: BTreeMap<String, f64>,
    pub covariates: BTreeMap<String, f64>,
}

impl TypicalContext {
    pub fn from_rows(graph: &PersonalCausalGraph, rows: &[crate::scm::Row]) -> Self {
        let mut nutrient_means = BTreeMap::new();
        let mut covariates = BTreeMap::new();
        for var in &graph.scm.dag.variables {
            let values: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.get(&var.name).copied())
                .collect();
            if values.is_empty() {
                continue;
            }
            let m = mean(&values);
            match var.role {
                Role::Nutrient => {
                    nutrient_means.insert(var.name.clone(), m);
                }
                Role::Modulator => {
                    covariates.insert(var.name.clone(), m);
                }
                _ => {}
            }
        }
        covariates.retain(|k, _| k == MET || k == BASELINE_GLUCOSE);
        Self {
            nutrient_means,
            covariates,
        }
    }

    /// Expected outcome under the user's historical mean meal.
    pub fn typical_iauc(&self, graph: &PersonalCausalGraph, target: &str) -> Result<f64> {
        let query = InterventionQuery {
            assignments: self.nutrient_means.clone(),
            covariates: self.covariates.clone(),
            target: target.to_string(),
        };
        Ok(do_intervention(&query, &graph.scm)?.value)
    }
}

/// Predicted outcome for a candidate food: do() on its scaled nutrient
/// vector with the user's covariates held fixed.
pub fn predict_candidate(
    graph: &PersonalCausalGraph,
    candidate: &ScaledFood,
    target: &str,
    covariates: &BTreeMap<String, f64>,
) -> Result<f64> {
    let assignments: BTreeMap<String, f64> = candidate
        .nutrients
        .iter()
        .filter(|(name, _)| graph.scm.dag.contains(name))
        .map(|(name, v)| (name.clone(), *v))
        .collect();
    let query = InterventionQuery {
        assignments,
        covariates: covariates
            .iter()
            .filter(|(name, _)| graph.scm.dag.contains(name))
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
        target: target.to_string(),
    };
    Ok(do_intervention(&query, &graph.scm)?.value)
}

fn rejection_reason(graph: &PersonalCausalGraph, candidate: &ScaledFood, goal: &Goal) -> String {
    // Name the nutrient pushing hardest against the goal.
    let mut worst: Option<(&String, f64)> = None;
    for (nutrient, grams) in &candidate.nutrients {
        if !graph.scm.dag.contains(nutrient) {
            continue;
        }
        let contribution = total_effect(&graph.scm, nutrient, &goal.target) * grams;
        let against = match goal.direction {
            Direction::Decrease => contribution,
            Direction::Increase => -contribution,
        };
        if worst.map(|(_, w)| against > w).unwrap_or(against > 0.0) {
            worst = Some((nutrient, against));
        }
    }
    match worst {
        Some((nutrient, _)) => format!(
            "contradicts causal summary: {} increase glucose",
            display_name(nutrient).to_lowercase()
        ),
        None => "no improvement over the typical response".to_string(),
    }
}

/// Simulate a candidate and accept only strict improvement over the typical
/// response (plus the configured margin).
pub fn verify_candidate(
    graph: &PersonalCausalGraph,
    candidate: &ScaledFood,
    goal: &Goal,
    typical: f64,
    covariates: &BTreeMap<String, f64>,
    margin: f64,
) -> Result<(Verdict, f64)> {
    let predicted = predict_candidate(graph, candidate, &goal.target, covariates)?;
    let improves = match goal.direction {
        Direction::Decrease => predicted < typical - margin,
        Direction::Increase => predicted > typical + margin,
    };
    Ok(if improves {
        (Verdict::Accept, predicted)
    } else {
        (Verdict::Reject, predicted)
    })
}

const FALLBACK_GUIDELINE: &str = "General dietary guideline: favor high-fiber, minimally \
processed foods and moderate carbohydrate portions.";

fn assemble_prompt(
    request: &RecommendationRequest,
    summary: &str,
    food_block: &str,
    effect_sentence: &str,
) -> String {
    format!(
        "## Instruction\nExplain the causal reasoning first, then present the \
recommendation.\n## Query\n{}\n## Causal paths\n{}\n## Retrieved food\n{}\n\
## Predicted effect\n{}\n",
        request.query_text, summary, food_block, effect_sentence
    )
}

fn food_block(food: &ScaledFood) -> String {
    let nutrients = food
        .nutrients
        .iter()
        .map(|(k, v)| format!("{} {:.1} g", display_name(k).to_lowercase(), v))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "Recommended food: {} ({:.0} g serving at {:.0} kcal; {nutrients}).",
        food.name, food.serving_g, food.kcal
    )
}

/// Run the pipeline for one request against a train-half graph.
pub fn recommend(
    graph: &PersonalCausalGraph,
    typical: &TypicalContext,
    db: &[FoodItem],
    request: &RecommendationRequest,
    backend: &dyn TextBackend,
    config: &RunConfig,
    ablation: Ablation,
) -> Result<Recommendation> {
    if graph.fitted_on != FittedOn::TrainHalf {
        return Err(Error::Data(
            "recommendations require a train-half graph".into(),
        ));
    }
    let goal = identify_goal(&request.query_text, &graph.scm.dag, request.horizon_min)?;
    let typical_value = typical.typical_iauc(graph, &goal.target)?;

    let (ranking, summary) = match ablation {
        Ablation::NoGraph => (
            PathRanking {
                paths: vec![],
                importance: BTreeMap::new(),
            },
            String::new(),
        ),
        Ablation::NoRanking => {
            // Uniform scores in lexicographic path order.
            let uniform: Vec<(Vec<String>, f64)> =
                enumerate_paths(&graph.scm.dag, &goal.target, config.l_max)
                    .into_iter()
                    .map(|nodes| (nodes, 1.0))
                    .collect();
            let ranking = rank_paths(uniform, &goal, config.p_max);
            let summary = summarize_causal(&ranking, &graph.scm, &goal);
            (ranking, summary)
        }
        _ => {
            let ranking = rank_for_goal(&graph.scm, &graph.usage, &goal, config.l_max, config.p_max)?;
            let summary = summarize_causal(&ranking, &graph.scm, &goal);
            (ranking, summary)
        }
    };

    let candidates: Vec<ScaledFood> = if ablation == Ablation::NoGraph {
        let mut scored: Vec<ScaledFood> = db
            .iter()
            .filter(|f| !request.exclude.contains(&f.name))
            .map(|f| {
                let mut s = normalize_to_kcal(f, request.budget_kcal);
                s.score = balanced_nutrition_score(&s);
                s
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.name.cmp(&b.name))
        });
        scored.truncate(config.candidate_budget);
        scored
    } else {
        retrieve(
            db,
            &ranking,
            &graph.scm,
            &goal,
            &request.exclude,
            config.candidate_budget,
            request.budget_kcal,
        )
    };

    let mut trace = Vec::new();
    let mut chosen: Option<(ScaledFood, f64)> = None;
    let skip_verification = matches!(ablation, Ablation::NoVerification | Ablation::NoGraph);
    for candidate in candidates {
        if skip_verification {
            let predicted =
                predict_candidate(graph, &candidate, &goal.target, &typical.covariates)?;
            trace.push(TraceEntry {
                candidate: candidate.name.clone(),
                predicted_iauc: predicted,
                verdict: Verdict::Unverified,
                reason: None,
            });
            chosen = Some((candidate, predicted));
            break;
        }
        let (verdict, predicted) = verify_candidate(
            graph,
            &candidate,
            &goal,
            typical_value,
            &typical.covariates,
            config.accept_margin,
        )?;
        match verdict {
            Verdict::Accept => {
                trace.push(TraceEntry {
                    candidate: candidate.name.clone(),
                    predicted_iauc: predicted,
                    verdict,
                    reason: None,
                });
                chosen = Some((candidate, predicted));
                break;
            }
            _ => {
                trace.push(TraceEntry {
                    candidate: candidate.name.clone(),
                    predicted_iauc: predicted,
                    verdict: Verdict::Reject,
                    reason: Some(rejection_reason(graph, &candidate, &goal)),
                });
            }
        }
    }

    let (food, predicted_iauc, fallback_used, effect_sentence, block) = match chosen {
        Some((food, predicted)) => {
            let delta = predicted - typical_value;
            let sentence = format!(
                "Predicted {}: {:.1} mg/dL*min versus your typical {:.1} ({:+.1}).",
                display_name(&goal.target).to_lowercase(),
                predicted,
                typical_value,
                delta
            );
            let block = food_block(&food);
            (Some(food), Some(predicted), false, sentence, block)
        }
        None => {
            let sentence =
                "No graph-verified food item was found for this query; the guideline above is \
a general default."
                    .to_string();
            (None, None, true, sentence, FALLBACK_GUIDELINE.to_string())
        }
    };

    let prompt = assemble_prompt(request, &summary, &block, &effect_sentence);
    let response = backend.render(&prompt)?;
    let predicted_delta = predicted_iauc.map(|p| p - typical_value).unwrap_or(0.0);

    Ok(Recommendation {
        user_id: request.user_id.clone(),
        horizon_min: request.horizon_min,
        food,
        predicted_iauc,
        typical_iauc: typical_value,
        predicted_delta,
        summary,
        trace,
        fallback_used,
        response,
        backend_deterministic: backend.deterministic(),
    })
}

pub const DEFAULT_QUERY: &str = "How can I prevent glucose spikes?";

/// The evaluation protocol: `queries_per_user` queries at each horizon, with
/// the exclusion set accumulating across the whole protocol so no food
/// repeats for one participant.
pub fn run_protocol(
    graph: &PersonalCausalGraph,
    typical: &TypicalContext,
    db: &[FoodItem],
    backend: &dyn TextBackend,
    config: &RunConfig,
    ablation: Ablation,
) -> Result<Vec<Recommendation>> {
    let mut exclude: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::new();
    for &horizon in &config.horizons {
        for _ in 0..config.queries_per_user {
            let request = RecommendationRequest {
                user_id: graph.user_id.clone(),
                query_text: DEFAULT_QUERY.to_string(),
                horizon_min: horizon,
                exclude: exclude.clone(),
                budget_kcal: config.budget_kcal,
            };
            let rec = recommend(graph, typical, db, &request, backend, config, ablation)?;
            if let Some(food) = &rec.food {
                exclude.insert(food.name.clone());
            }
            out.push(rec);
        }
    }
    Ok(out)
}
