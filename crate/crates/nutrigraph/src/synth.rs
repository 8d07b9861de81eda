//! Seeded synthetic cohort generation with known ground-truth models, so
//! every pipeline stage can be checked against an exact oracle.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    standard_variables, Dag, Edge, Provenance, BASELINE_GLUCOSE, CARBOHYDRATES, FAT, FIBER,
    IAUC_120, IAUC_30, IAUC_60, MET, PROTEIN,
};
use crate::ingest::{
    build_feature_table, ActivitySample, BaselineMode, GlucoseSample, MealEvent, UserDataset,
};
use crate::scm::{Coefficient, LinearScm};

/// Flat resting glucose used as the trace baseline.
pub const BASELINE_MG_DL: f64 = 90.0;

/// Excursion peaks above baseline may not exceed this.
pub const MAX_EXCURSION_MG_DL: f64 = 300.0;

/// Smallest realizable per-segment area; generated increments are clamped
/// up to it.
const MIN_SEGMENT_AREA: f64 = 2.0;

/// Daily meal slots, at most three meals per day.
const MEAL_SLOTS: [(u32, u32); 3] = [(7, 0), (12, 30), (18, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NutrientDistribution {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub user_id: String,
    pub truth: LinearScm,
    pub meal_distribution: BTreeMap<String, NutrientDistribution>,
    pub days: usize,
    pub meals_per_day: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.meal_distribution.values().any(|d| d.std < 0.0) {
            return Err(Error::Data("negative meal-distribution std".into()));
        }
        if self.days * self.meals_per_day < 8 {
            return Err(Error::Data(
                "days * meals_per_day must be at least 8".into(),
            ));
        }
        if self.meals_per_day == 0 || self.meals_per_day > MEAL_SLOTS.len() {
            return Err(Error::Data(format!(
                "meals_per_day must be 1..={}",
                MEAL_SLOTS.len()
            )));
        }
        self.truth.dag.topological_order()?;
        Ok(())
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64, floor: f64) -> f64 {
    if std == 0.0 {
        return mean.max(floor);
    }
    let dist = Normal::new(mean, std).unwrap();
    dist.sample(rng).max(floor)
}

/// Triangular bump rising from 0 at `start`, peaking at `peak_minute`, back
/// to 0 at `end`; minutes are relative to the meal.
struct Bump {
    start: f64,
    peak: f64,
    end: f64,
    height: f64,
}

impl Bump {
    fn value_at(&self, minute: f64) -> f64 {
        if minute <= self.start || minute >= self.end {
            0.0
        } else if minute <= self.peak {
            self.height * (minute - self.start) / (self.peak - self.start)
        } else {
            self.height * (self.end - minute) / (self.end - self.peak)
        }
    }
}

fn segment_bumps(iauc_30: f64, iauc_60: f64, iauc_120: f64) -> Result<Vec<Bump>> {
    // Segment areas over [0,30], [30,60], [60,120] with integer-minute peaks.
    let segments = [
        (0.0, 15.0, 30.0, iauc_30),
        (30.0, 45.0, 60.0, iauc_60 - iauc_30),
        (60.0, 90.0, 120.0, iauc_120 - iauc_60),
    ];
    let mut bumps = Vec::with_capacity(3);
    for (start, peak, end, area) in segments {
        let height = 2.0 * area / (end - start);
        if height > MAX_EXCURSION_MG_DL {
            return Err(Error::Data(format!(
                "target area {area:.0} needs a {height:.0} mg/dL peak over [{start}, {end}]; \
cap is {MAX_EXCURSION_MG_DL}"
            )));
        }
        bumps.push(Bump {
            start,
            peak,
            end,
            height,
        });
    }
    Ok(bumps)
}

/// Generate one user: sampled meals, SCM-driven iAUC targets, a glucose
/// trace of triangular excursions realizing them, daily MET, and the derived
/// feature table. Deterministic per seed.
pub fn generate_user(spec: &GeneratorSpec) -> Result<UserDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = &spec.truth;
    let start_date = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap();
    let met_mean = truth.intercept(MET);
    let met_sd = truth.noise_variance.get(MET).copied().unwrap_or(0.0).sqrt();

    let mut meals = Vec::new();
    let mut activity = Vec::new();
    let mut excursions: Vec<(NaiveDateTime, Vec<Bump>)> = Vec::new();

    let outcome_order: Vec<&str> = truth
        .dag
        .topological_order()?
        .into_iter()
        .filter(|n| matches!(n.as_str(), IAUC_30 | IAUC_60 | IAUC_120))
        .map(|n| match n.as_str() {
            IAUC_30 => IAUC_30,
            IAUC_60 => IAUC_60,
            _ => IAUC_120,
        })
        .collect();

    for day in 0..spec.days {
        let date = start_date + chrono::Duration::days(day as i64);
        let daily_met = truncated_normal(&mut rng, met_mean, met_sd, 0.5);
        for hour in 0..24 {
            activity.push(ActivitySample {
                timestamp: date.and_hms_opt(hour, 0, 0).unwrap(),
                met: daily_met,
            });
        }
        for &(hour, minute) in MEAL_SLOTS.iter().take(spec.meals_per_day) {
            let meal_time = date.and_hms_opt(hour, minute, 0).unwrap();
            let draw = |rng: &mut ChaCha8Rng, name: &str| {
                let d = spec
                    .meal_distribution
                    .get(name)
                    .copied()
                    .unwrap_or(NutrientDistribution { mean: 0.0, std: 0.0 });
                truncated_normal(rng, d.mean, d.std, 0.0)
            };
            let carbohydrates_g = draw(&mut rng, CARBOHYDRATES);
            let protein_g = draw(&mut rng, PROTEIN);
            let fat_g = draw(&mut rng, FAT);
            let fiber_g = draw(&mut rng, FIBER);
            let mut values: BTreeMap<&str, f64> = BTreeMap::from([
                (CARBOHYDRATES, carbohydrates_g),
                (PROTEIN, protein_g),
                (FAT, fat_g),
                (FIBER, fiber_g),
                (MET, daily_met),
                (BASELINE_GLUCOSE, BASELINE_MG_DL),
            ]);
            for &node in &outcome_order {
                let sd = truth.noise_variance.get(node).copied().unwrap_or(0.0).sqrt();
                let mut v = truth.intercept(node);
                for parent in truth.dag.parents(node) {
                    v += truth.weight(parent, node).unwrap_or(0.0) * values[parent];
                }
                if sd > 0.0 {
                    v += Normal::new(0.0, sd).unwrap().sample(&mut rng);
                }
                values.insert(node, v);
            }
            // Enforce realizable, monotone cumulative areas.
            let a30 = values[IAUC_30].max(MIN_SEGMENT_AREA);
            let a60 = values[IAUC_60].max(a30 + MIN_SEGMENT_AREA);
            let a120 = values[IAUC_120].max(a60 + MIN_SEGMENT_AREA);
            let bumps = segment_bumps(a30, a60, a120)?;
            excursions.push((meal_time, bumps));

            let meal = MealEvent {
                timestamp: meal_time,
                carbohydrates_g,
                protein_g,
                fat_g,
                fiber_g,
                calories_kcal: 4.0 * carbohydrates_g + 4.0 * protein_g + 9.0 * fat_g,
            };
            meals.push(meal);
        }
    }

    // Minute-grid trace from midnight of day 0 to 3 h past the last meal.
    let trace_start = start_date.and_hms_opt(0, 0, 0).unwrap();
    let trace_end = meals.last().unwrap().timestamp + chrono::Duration::hours(3);
    let total_minutes = (trace_end - trace_start).num_minutes();
    let mut glucose = Vec::with_capacity(total_minutes as usize + 1);
    for m in 0..=total_minutes {
        let t = trace_start + chrono::Duration::minutes(m);
        let mut g = BASELINE_MG_DL;
        for (meal_time, bumps) in &excursions {
            let rel = (t - *meal_time).num_seconds() as f64 / 60.0;
            if (0.0..=120.0).contains(&rel) {
                for b in bumps {
                    g += b.value_at(rel);
                }
            }
        }
        glucose.push(GlucoseSample {
            timestamp: t,
            glucose: g,
        });
    }

    let features = build_feature_table(&glucose, &meals, &activity, BaselineMode::Pre120min)?;
    Ok(UserDataset {
        user_id: spec.user_id.clone(),
        glucose,
        meals,
        activity,
        features,
    })
}

fn edge(from: &str, to: &str) -> Edge {
    Edge {
        from: from.into(),
        to: to.into(),
        orientation_provenance: Provenance::Given,
    }
}

/// Truth model over the standard variables: each macronutrient acts
/// directly on every response horizon, with later horizons carrying larger
/// cumulative effects and more independent noise. Effect arrays are ordered
/// [30 min, 60 min, 120 min]; a coefficient of exactly zero omits the edge
/// so the DAG stays faithful to the weights.
pub fn truth_scm(
    carb: [f64; 3],
    fiber: [f64; 3],
    protein: [f64; 3],
    fat: [f64; 3],
    outcome_noise_sd: [f64; 3],
) -> LinearScm {
    let horizons = [IAUC_30, IAUC_60, IAUC_120];
    let nutrients = [
        (CARBOHYDRATES, carb),
        (FIBER, fiber),
        (PROTEIN, protein),
        (FAT, fat),
    ];
    let mut edges = Vec::new();
    let mut coefficients = Vec::new();
    for (name, effects) in &nutrients {
        for (k, &target) in horizons.iter().enumerate() {
            if effects[k] != 0.0 {
                edges.push(edge(name, target));
                coefficients.push(Coefficient {
                    from: (*name).into(),
                    to: target.into(),
                    weight: effects[k],
                });
            }
        }
    }
    let dag = Dag::new(standard_variables(), edges).unwrap();
    let intercepts = BTreeMap::from([
        (CARBOHYDRATES.to_string(), 60.0),
        (PROTEIN.to_string(), 25.0),
        (FAT.to_string(), 20.0),
        (FIBER.to_string(), 8.0),
        (MET.to_string(), 1.5),
        (BASELINE_GLUCOSE.to_string(), BASELINE_MG_DL),
        (IAUC_30.to_string(), 180.0),
        (IAUC_60.to_string(), 320.0),
        (IAUC_120.to_string(), 540.0),
    ]);
    let noise = BTreeMap::from([
        (CARBOHYDRATES.to_string(), 400.0),
        (PROTEIN.to_string(), 64.0),
        (FAT.to_string(), 49.0),
        (FIBER.to_string(), 16.0),
        (MET.to_string(), 0.04),
        (BASELINE_GLUCOSE.to_string(), 0.0),
        (
            IAUC_30.to_string(),
            outcome_noise_sd[0] * outcome_noise_sd[0],
        ),
        (
            IAUC_60.to_string(),
            outcome_noise_sd[1] * outcome_noise_sd[1],
        ),
        (
            IAUC_120.to_string(),
            outcome_noise_sd[2] * outcome_noise_sd[2],
        ),
    ]);
    LinearScm::new(dag, coefficients, intercepts, noise).unwrap()
}

/// Default meal nutrient distributions matching the truth intercepts.
pub fn default_meal_distribution() -> BTreeMap<String, NutrientDistribution> {
    BTreeMap::from([
        (
            CARBOHYDRATES.to_string(),
            NutrientDistribution {
                mean: 60.0,
                std: 20.0,
            },
        ),
        (
            PROTEIN.to_string(),
            NutrientDistribution {
                mean: 25.0,
                std: 8.0,
            },
        ),
        (
            FAT.to_string(),
            NutrientDistribution {
                mean: 20.0,
                std: 7.0,
            },
        ),
        (
            FIBER.to_string(),
            NutrientDistribution { mean: 8.0, std: 4.0 },
        ),
    ])
}

/// Cohort with heterogeneous per-user effect magnitudes: the 30-minute
/// carbohydrate effect lies in [0.4, 0.9] and the 30-minute fiber effect in
/// [-0.7, -0.2], scaling up at the later horizons; protein and fat carry
/// strong 120-minute effects whose sign varies across users. Deterministic
/// per seed.
pub fn default_cohort(n_users: usize, seed: u64) -> Result<Vec<(UserDataset, LinearScm)>> {
    if n_users == 0 {
        return Err(Error::Data("cohort needs at least one user".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cohort = Vec::with_capacity(n_users);
    for i in 0..n_users {
        let carb30 = rng.gen_range(0.4..=0.9);
        let fiber30 = rng.gen_range(-0.7..=-0.2);
        let protein120 = rng.gen_range(1.9..=2.6) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let fat120 = rng.gen_range(2.2..=3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let truth = truth_scm(
            [carb30, 1.9 * carb30, 2.4 * carb30],
            [fiber30, 3.5 * fiber30, 7.0 * fiber30],
            [0.25 * protein120, 0.55 * protein120, protein120],
            [0.2 * fat120, 0.5 * fat120, fat120],
            [15.0, 25.0, 35.0],
        );
        let spec = GeneratorSpec {
            user_id: format!("user{i:02}"),
            truth: truth.clone(),
            meal_distribution: default_meal_distribution(),
            days: 60,
            meals_per_day: 3,
            seed: rng.gen(),
        };
        cohort.push((generate_user(&spec)?, truth));
    }
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_activity_csv, parse_cgm_csv, parse_meals_csv};
    use crate::scm::{feature_rows, fit_linear_scm};

    fn small_spec(seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            user_id: "t".into(),
            truth: truth_scm(
                [0.7, 1.3, 1.7],
                [-0.45, -1.6, -3.2],
                [-0.2, -0.5, -0.9],
                [0.2, 0.5, 0.9],
                [0.0, 0.0, 0.0],
            ),
            meal_distribution: default_meal_distribution(),
            days: 10,
            meals_per_day: 3,
            seed,
        }
    }

    #[test]
    fn same_seed_is_identical() {
        let a = generate_user(&small_spec(5)).unwrap();
        let b = generate_user(&small_spec(5)).unwrap();
        assert_eq!(a, b);
        let c = generate_user(&small_spec(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_ten_day_spec_yields_thirty_eligible_meals() {
        let user = generate_user(&small_spec(1)).unwrap();
        assert_eq!(user.meals.len(), 30);
        assert!(user.features.len() >= 28, "{}", user.features.len());
    }

    #[test]
    fn zero_noise_round_trip_recovers_iauc_within_two_percent() {
        let spec = small_spec(2);
        let user = generate_user(&spec).unwrap();
        // Recompute the noiseless truth targets per meal and compare with
        // what ingest recovered from the trace.
        let lin = |target: &str, row: &crate::ingest::MealFeatureRow| {
            spec.truth.intercept(target)
                + spec.truth.weight(CARBOHYDRATES, target).unwrap_or(0.0) * row.carbohydrates_g
                + spec.truth.weight(FIBER, target).unwrap_or(0.0) * row.fiber_g
                + spec.truth.weight(PROTEIN, target).unwrap_or(0.0) * row.protein_g
                + spec.truth.weight(FAT, target).unwrap_or(0.0) * row.fat_g
        };
        for row in &user.features {
            let expected30 = lin(IAUC_30, row).max(2.0);
            let rel = (row.iauc_30 - expected30).abs() / expected30;
            assert!(rel < 0.02, "iauc_30 {} vs {}", row.iauc_30, expected30);

            let expected60 = lin(IAUC_60, row).max(expected30 + 2.0);
            let got60 = row.iauc_60.unwrap();
            assert!(
                (got60 - expected60).abs() / expected60 < 0.02,
                "iauc_60 {got60} vs {expected60}"
            );
        }
    }

    #[test]
    fn infeasible_excursion_errors() {
        let mut spec = small_spec(3);
        spec.truth
            .intercepts
            .insert(IAUC_30.to_string(), 1.0e5);
        assert!(matches!(generate_user(&spec), Err(Error::Data(_))));
    }

    #[test]
    fn generated_csvs_reparse_cleanly() {
        let user = generate_user(&small_spec(4)).unwrap();
        let cgm = crate::ingest::write_cgm_csv(&user.glucose);
        let meals = crate::ingest::write_meals_csv(&user.meals);
        let activity = crate::ingest::write_activity_csv(&user.activity);
        assert_eq!(parse_cgm_csv(cgm.as_bytes()).unwrap().len(), user.glucose.len());
        assert_eq!(parse_meals_csv(meals.as_bytes()).unwrap().len(), user.meals.len());
        assert_eq!(
            parse_activity_csv(activity.as_bytes()).unwrap().len(),
            user.activity.len()
        );
    }

    #[test]
    fn cohort_is_reproducible_and_acyclic() {
        let a = default_cohort(3, 11).unwrap();
        let b = default_cohort(3, 11).unwrap();
        for ((ua, ta), (ub, tb)) in a.iter().zip(&b) {
            assert_eq!(ua, ub);
            assert_eq!(ta, tb);
            assert!(ta.dag.topological_order().is_ok());
            let carb = ta.weight(CARBOHYDRATES, IAUC_30).unwrap();
            let fiber = ta.weight(FIBER, IAUC_30).unwrap();
            assert!((0.4..=0.9).contains(&carb));
            assert!((-0.7..=-0.2).contains(&fiber));
        }
    }

    #[test]
    fn long_run_fit_recovers_truth_coefficients() {
        let spec = GeneratorSpec {
            days: 60,
            ..small_spec(8)
        };
        let user = generate_user(&spec).unwrap();
        let rows = feature_rows(&user.features);
        let fitted = fit_linear_scm(&spec.truth.dag, &rows).unwrap();
        let carb = fitted.weight(CARBOHYDRATES, IAUC_30).unwrap();
        // Triangle realization and smoothing add a little systematic error on
        // top of estimation noise.
        assert!((carb - 0.7).abs() < 0.05, "carb weight {carb}");
        let carb120 = fitted.weight(CARBOHYDRATES, IAUC_120).unwrap();
        assert!((carb120 - 1.7).abs() < 0.1, "carb 120-min weight {carb120}");
    }
}
