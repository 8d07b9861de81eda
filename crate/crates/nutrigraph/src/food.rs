//! Food knowledge base: loading, calorie normalization, and retrieval ranked
//! by concentration of the impactful nutrients.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Role, CARBOHYDRATES, FAT, FIBER, PROTEIN};
use crate::paths::{Direction, Goal, PathRanking};
use crate::scm::{total_effect, LinearScm};

pub const DEFAULT_BUDGET_KCAL: f64 = 500.0;

/// One food with nutrient content per 100 g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodItem {
    pub name: String,
    pub kcal_per_100g: f64,
    /// Grams per 100 g for carbohydrates, protein, fat, and fiber.
    pub nutrients_per_100g: BTreeMap<String, f64>,
}

/// A food scaled so its serving meets the calorie budget exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledFood {
    pub name: String,
    pub serving_g: f64,
    pub kcal: f64,
    pub nutrients: BTreeMap<String, f64>,
    pub score: f64,
}

pub const FOOD_DB_HEADER: &str = "name,kcal_per_100g,carbs_g,protein_g,fat_g,fiber_g";

/// Parse the food database CSV. Duplicate names and zero-calorie items are
/// rejected.
pub fn load_food_db(bytes: &[u8]) -> Result<Vec<FoodItem>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected: Vec<&str> = FOOD_DB_HEADER.split(',').collect();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {FOOD_DB_HEADER:?}, got {got:?}"),
        });
    }
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |j: usize| -> Result<f64> {
            record[j].parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("column {}: {e}", expected[j]),
            })
        };
        let name = record[0].to_string();
        if name.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty food name".into(),
            });
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Data(format!("duplicate food name {name:?}")));
        }
        let kcal = field(1)?;
        if kcal <= 0.0 {
            return Err(Error::Data(format!("food {name:?} has non-positive kcal")));
        }
        let nutrients = BTreeMap::from([
            (CARBOHYDRATES.to_string(), field(2)?),
            (PROTEIN.to_string(), field(3)?),
            (FAT.to_string(), field(4)?),
            (FIBER.to_string(), field(5)?),
        ]);
        if nutrients.values().any(|v| *v < 0.0) {
            return Err(Error::Data(format!("food {name:?} has negative nutrients")));
        }
        items.push(FoodItem {
            name,
            kcal_per_100g: kcal,
            nutrients_per_100g: nutrients,
        });
    }
    Ok(items)
}

/// Serialize a food list back to the CSV schema.
pub fn write_food_db(items: &[FoodItem]) -> String {
    let mut out = String::from(FOOD_DB_HEADER);
    out.push('\n');
    for item in items {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            item.name,
            item.kcal_per_100g,
            item.nutrients_per_100g[CARBOHYDRATES],
            item.nutrients_per_100g[PROTEIN],
            item.nutrients_per_100g[FAT],
            item.nutrients_per_100g[FIBER],
        ));
    }
    out
}

/// Scale a food so the serving supplies exactly `budget_kcal`.
pub fn normalize_to_kcal(food: &FoodItem, budget_kcal: f64) -> ScaledFood {
    let serving_g = 100.0 * budget_kcal / food.kcal_per_100g;
    let nutrients = food
        .nutrients_per_100g
        .iter()
        .map(|(k, v)| (k.clone(), v * serving_g / 100.0))
        .collect();
    ScaledFood {
        name: food.name.clone(),
        serving_g,
        kcal: budget_kcal,
        nutrients,
        score: 0.0,
    }
}

/// Rank foods by a sign-weighted concentration of the impactful nutrients.
///
/// For a decrease goal each nutrient v contributes
/// (-sign(total_effect(v, target))) * |Imp(v)| * grams-at-budget, so foods
/// rich in lowering nutrients and poor in raising ones score high. Excluded
/// names are filtered before ranking; top `k` returned.
pub fn retrieve(
    db: &[FoodItem],
    ranking: &PathRanking,
    scm: &LinearScm,
    goal: &Goal,
    exclude: &BTreeSet<String>,
    k: usize,
    budget_kcal: f64,
) -> Vec<ScaledFood> {
    let weights: Vec<(String, f64)> = ranking
        .importance
        .iter()
        .filter(|(name, _)| {
            scm.dag
                .variable(name)
                .map(|v| v.role == Role::Nutrient)
                .unwrap_or(false)
        })
        .map(|(name, imp)| {
            let effect = total_effect(scm, name, &goal.target);
            let direction_sign = match goal.direction {
                Direction::Decrease => -effect.signum(),
                Direction::Increase => effect.signum(),
            };
            (name.clone(), direction_sign * imp.abs())
        })
        .collect();
    let mut scored: Vec<ScaledFood> = db
        .iter()
        .filter(|f| !exclude.contains(&f.name))
        .map(|f| {
            let mut scaled = normalize_to_kcal(f, budget_kcal);
            scaled.score = weights
                .iter()
                .map(|(nutrient, w)| w * scaled.nutrients.get(nutrient).copied().unwrap_or(0.0))
                .sum();
            scaled
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    scored.truncate(k);
    scored
}

/// Static score used when no personal graph is available: prefer fiber and
/// protein density over carbohydrate density at the calorie budget.
pub fn balanced_nutrition_score(scaled: &ScaledFood) -> f64 {
    let g = |n: &str| scaled.nutrients.get(n).copied().unwrap_or(0.0);
    g(FIBER) + 0.25 * g(PROTEIN) - 0.5 * g(CARBOHYDRATES)
}
