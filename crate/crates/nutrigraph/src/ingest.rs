//! Parse raw per-user CSV streams and derive the per-meal feature table:
//! macronutrients, calories, daily MET, pre-meal baseline glucose, and
//! incremental area under the glucose curve at three horizons.

use std::io::Read;

use chrono::{NaiveDateTime, Timelike};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KCAL_PER_G_CARB: f64 = 4.0;
pub const KCAL_PER_G_PROTEIN: f64 = 4.0;
pub const KCAL_PER_G_FAT: f64 = 9.0;

/// Smoothing window applied before iAUC integration.
pub const SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlucoseSample {
    pub timestamp: NaiveDateTime,
    pub glucose: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealEvent {
    pub timestamp: NaiveDateTime,
    pub carbohydrates_g: f64,
    pub protein_g: f64,
    pub fat_g: f64,
    pub fiber_g: f64,
    pub calories_kcal: f64,
}

impl MealEvent {
    /// Calories from the 4/4/9 conversion of the macronutrient masses.
    pub fn derived_calories(&self) -> f64 {
        KCAL_PER_G_CARB * self.carbohydrates_g
            + KCAL_PER_G_PROTEIN * self.protein_g
            + KCAL_PER_G_FAT * self.fat_g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivitySample {
    pub timestamp: NaiveDateTime,
    pub met: f64,
}

/// Pre-meal baseline definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Mean glucose over the 24 hours before the meal.
    #[default]
    Pre24h,
    /// Mean glucose over the 120 minutes before the meal.
    Pre120min,
}

impl BaselineMode {
    pub fn window_minutes(self) -> i64 {
        match self {
            BaselineMode::Pre24h => 24 * 60,
            BaselineMode::Pre120min => 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealFeatureRow {
    pub meal_time: NaiveDateTime,
    pub carbohydrates_g: f64,
    pub protein_g: f64,
    pub fat_g: f64,
    pub fiber_g: f64,
    pub calories_kcal: f64,
    pub daily_met: f64,
    pub baseline_glucose: f64,
    pub iauc_30: f64,
    /// Missing when the recording ends before the horizon.
    pub iauc_60: Option<f64>,
    pub iauc_120: Option<f64>,
    /// Derived temporal feature; exported but unused by the graph.
    pub minutes_since_last_meal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDataset {
    pub user_id: String,
    pub glucose: Vec<GlucoseSample>,
    pub meals: Vec<MealEvent>,
    pub activity: Vec<ActivitySample>,
    pub features: Vec<MealFeatureRow>,
}

fn parse_timestamp(s: &str, line: usize) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .map_err(|e| Error::Parse {
            line,
            message: format!("bad timestamp {s:?}: {e}"),
        })
}

fn parse_f64(s: &str, field: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("bad {field} value {s:?}"),
    })
}

fn check_header(got: &csv::StringRecord, want: &[&str], optional_tail: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().map(|s| s.trim()).collect();
    let ok = got.len() >= want.len()
        && got.len() <= want.len() + optional_tail.len()
        && got[..want.len()] == *want
        && got[want.len()..]
            .iter()
            .zip(optional_tail)
            .all(|(g, w)| g == w);
    if ok {
        Ok(())
    } else {
        Err(Error::Parse {
            line: 1,
            message: format!("expected header {:?}, got {:?}", want.join(","), got.join(",")),
        })
    }
}

/// Parse a `timestamp,glucose_mg_dl` stream. Duplicate timestamps are
/// collapsed by averaging; the result is strictly increasing in time.
pub fn parse_cgm_csv<R: Read>(source: R) -> Result<Vec<GlucoseSample>> {
    let mut reader = csv::Reader::from_reader(source);
    check_header(
        reader.headers().map_err(map_csv_err)?,
        &["timestamp", "glucose_mg_dl"],
        &[],
    )?;
    let mut samples: Vec<GlucoseSample> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(map_csv_err)?;
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, got {}", record.len()),
            });
        }
        let timestamp = parse_timestamp(&record[0], line)?;
        let glucose = parse_f64(&record[1], "glucose", line)?;
        if glucose < 0.0 {
            return Err(Error::Data(format!(
                "negative glucose {glucose} at line {line}"
            )));
        }
        samples.push(GlucoseSample { timestamp, glucose });
    }
    samples.sort_by_key(|s| s.timestamp);
    // Average duplicate timestamps.
    let mut collapsed: Vec<GlucoseSample> = Vec::with_capacity(samples.len());
    let mut i = 0;
    while i < samples.len() {
        let mut j = i;
        while j + 1 < samples.len() && samples[j + 1].timestamp == samples[i].timestamp {
            j += 1;
        }
        let avg =
            samples[i..=j].iter().map(|s| s.glucose).sum::<f64>() / (j - i + 1) as f64;
        collapsed.push(GlucoseSample {
            timestamp: samples[i].timestamp,
            glucose: avg,
        });
        i = j + 1;
    }
    for w in collapsed.windows(2) {
        if w[0].timestamp >= w[1].timestamp {
            return Err(Error::Data("non-monotonic glucose timestamps".into()));
        }
    }
    Ok(collapsed)
}

/// Parse a `timestamp,carbs_g,protein_g,fat_g,fiber_g[,calories_kcal]` stream.
/// Calories are derived via 4/4/9 when the column is absent; a present value
/// wins, with a warning when it deviates more than 10% from the derivation.
pub fn parse_meals_csv<R: Read>(source: R) -> Result<Vec<MealEvent>> {
    let mut reader = csv::Reader::from_reader(source);
    check_header(
        reader.headers().map_err(map_csv_err)?,
        &["timestamp", "carbs_g", "protein_g", "fat_g", "fiber_g"],
        &["calories_kcal"],
    )?;
    let has_calories = reader.headers().map_err(map_csv_err)?.len() == 6;
    let mut meals = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(map_csv_err)?;
        let timestamp = parse_timestamp(&record[0], line)?;
        let carbohydrates_g = parse_f64(&record[1], "carbs_g", line)?;
        let protein_g = parse_f64(&record[2], "protein_g", line)?;
        let fat_g = parse_f64(&record[3], "fat_g", line)?;
        let fiber_g = parse_f64(&record[4], "fiber_g", line)?;
        for (name, v) in [
            ("carbs_g", carbohydrates_g),
            ("protein_g", protein_g),
            ("fat_g", fat_g),
            ("fiber_g", fiber_g),
        ] {
            if v < 0.0 {
                return Err(Error::Data(format!("negative {name} at line {line}")));
            }
        }
        let mut meal = MealEvent {
            timestamp,
            carbohydrates_g,
            protein_g,
            fat_g,
            fiber_g,
            calories_kcal: 0.0,
        };
        if has_calories {
            let given = parse_f64(&record[5], "calories_kcal", line)?;
            if given < 0.0 {
                return Err(Error::Data(format!("negative calories at line {line}")));
            }
            let derived = meal.derived_calories();
            if derived > 0.0 && (given - derived).abs() / derived > 0.10 {
                warn!(
                    "meal at {timestamp}: calories {given} deviate >10% from 4/4/9 value {derived:.1}"
                );
            }
            meal.calories_kcal = given;
        } else {
            meal.calories_kcal = meal.derived_calories();
        }
        meals.push(meal);
    }
    meals.sort_by_key(|m| m.timestamp);
    Ok(meals)
}

/// Parse a `timestamp,met` stream.
pub fn parse_activity_csv<R: Read>(source: R) -> Result<Vec<ActivitySample>> {
    let mut reader = csv::Reader::from_reader(source);
    check_header(reader.headers().map_err(map_csv_err)?, &["timestamp", "met"], &[])?;
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(map_csv_err)?;
        let timestamp = parse_timestamp(&record[0], line)?;
        let met = parse_f64(&record[1], "met", line)?;
        if met <= 0.0 {
            return Err(Error::Data(format!("non-positive MET at line {line}")));
        }
        samples.push(ActivitySample { timestamp, met });
    }
    samples.sort_by_key(|s| s.timestamp);
    Ok(samples)
}

fn map_csv_err(e: csv::Error) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Centered rolling mean with shrunken windows at the boundaries. Output has
/// the same length as the input.
pub fn rolling_mean(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1 && window % 2 == 1, "window must be odd and >= 1");
    let half = window / 2;
    let n = series.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Centered rolling population standard deviation, same edge handling as
/// [`rolling_mean`].
pub fn rolling_std(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1 && window % 2 == 1, "window must be odd and >= 1");
    let half = window / 2;
    let n = series.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let w = &series[lo..=hi];
            let m = w.iter().sum::<f64>() / w.len() as f64;
            (w.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / w.len() as f64).sqrt()
        })
        .collect()
}

/// Mean glucose over the pre-meal lookback window `[meal - W, meal)`.
pub fn compute_baseline(
    glucose: &[GlucoseSample],
    meal_time: NaiveDateTime,
    mode: BaselineMode,
) -> Result<f64> {
    let start = meal_time - chrono::Duration::minutes(mode.window_minutes());
    let window: Vec<f64> = glucose
        .iter()
        .filter(|s| s.timestamp >= start && s.timestamp < meal_time)
        .map(|s| s.glucose)
        .collect();
    if window.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no glucose samples in the baseline window before {meal_time}"
        )));
    }
    Ok(window.iter().sum::<f64>() / window.len() as f64)
}

/// Incremental area under the glucose curve over `(meal, meal + horizon]`,
/// in mg/dL·min: smooth, subtract the baseline, clip negative deltas to zero,
/// integrate by the trapezoidal rule over minutes.
pub fn compute_iauc(
    glucose: &[GlucoseSample],
    meal_time: NaiveDateTime,
    horizon_min: u32,
    baseline: f64,
) -> Result<f64> {
    let end = meal_time + chrono::Duration::minutes(horizon_min as i64);
    let window: Vec<&GlucoseSample> = glucose
        .iter()
        .filter(|s| s.timestamp >= meal_time && s.timestamp <= end)
        .collect();
    let after = window.iter().filter(|s| s.timestamp > meal_time).count();
    if after < 2 {
        return Err(Error::InsufficientData(format!(
            "fewer than 2 glucose samples within {horizon_min} min after {meal_time}"
        )));
    }
    let values: Vec<f64> = window.iter().map(|s| s.glucose).collect();
    let smoothed = rolling_mean(&values, SMOOTHING_WINDOW);
    let minutes: Vec<f64> = window
        .iter()
        .map(|s| (s.timestamp - meal_time).num_seconds() as f64 / 60.0)
        .collect();
    let deltas: Vec<f64> = smoothed.iter().map(|g| (g - baseline).max(0.0)).collect();
    let mut area = 0.0;
    for i in 1..deltas.len() {
        area += 0.5 * (deltas[i] + deltas[i - 1]) * (minutes[i] - minutes[i - 1]);
    }
    Ok(area)
}

/// One row per meal with at least 30 minutes of subsequent glucose coverage;
/// rows with no computable baseline are excluded with a logged reason.
pub fn build_feature_table(
    glucose: &[GlucoseSample],
    meals: &[MealEvent],
    activity: &[ActivitySample],
    baseline_mode: BaselineMode,
) -> Result<Vec<MealFeatureRow>> {
    if glucose.is_empty() || meals.is_empty() || activity.is_empty() {
        return Err(Error::InsufficientData(
            "glucose, meal, and activity streams must all be present".into(),
        ));
    }
    let overall_met = activity.iter().map(|s| s.met).sum::<f64>() / activity.len() as f64;
    let mut rows = Vec::new();
    let mut last_meal: Option<NaiveDateTime> = None;
    for meal in meals {
        let minutes_since_last_meal =
            last_meal.map(|t| (meal.timestamp - t).num_seconds() as f64 / 60.0);
        last_meal = Some(meal.timestamp);

        let day = meal.timestamp.date();
        let day_met: Vec<f64> = activity
            .iter()
            .filter(|s| s.timestamp.date() == day)
            .map(|s| s.met)
            .collect();
        let daily_met = if day_met.is_empty() {
            warn!("no MET samples on {day}; falling back to overall mean");
            overall_met
        } else {
            day_met.iter().sum::<f64>() / day_met.len() as f64
        };

        let baseline = match compute_baseline(glucose, meal.timestamp, baseline_mode) {
            Ok(b) => b,
            Err(e) => {
                warn!("excluding meal at {}: {e}", meal.timestamp);
                continue;
            }
        };
        let iauc_30 = match compute_iauc(glucose, meal.timestamp, 30, baseline) {
            Ok(v) => v,
            Err(e) => {
                warn!("excluding meal at {}: {e}", meal.timestamp);
                continue;
            }
        };
        let iauc_60 = compute_iauc(glucose, meal.timestamp, 60, baseline).ok();
        let iauc_120 = compute_iauc(glucose, meal.timestamp, 120, baseline).ok();

        rows.push(MealFeatureRow {
            meal_time: meal.timestamp,
            carbohydrates_g: meal.carbohydrates_g,
            protein_g: meal.protein_g,
            fat_g: meal.fat_g,
            fiber_g: meal.fiber_g,
            calories_kcal: meal.calories_kcal,
            daily_met,
            baseline_glucose: baseline,
            iauc_30,
            iauc_60,
            iauc_120,
            minutes_since_last_meal,
        });
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("no eligible meals".into()));
    }
    rows.sort_by_key(|r| r.meal_time);
    Ok(rows)
}

/// First-half / full split: `train` is the first ceil(n/2) rows by time.
pub fn split_half(features: &[MealFeatureRow]) -> Result<(Vec<MealFeatureRow>, Vec<MealFeatureRow>)> {
    if features.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 feature rows, got {}",
            features.len()
        )));
    }
    let train_len = features.len().div_ceil(2);
    Ok((features[..train_len].to_vec(), features.to_vec()))
}

const FEATURE_HEADER: &str = "meal_time,carbohydrates_g,protein_g,fat_g,fiber_g,calories_kcal,daily_met,baseline_glucose,iauc_30,iauc_60,iauc_120,minutes_since_last_meal";

fn fmt_timestamp(t: NaiveDateTime) -> String {
    // Seconds are always written even when zero, so re-serialization is stable.
    let _ = t.second();
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Feature table CSV in the row field order.
pub fn write_feature_csv(rows: &[MealFeatureRow]) -> String {
    let mut out = String::from(FEATURE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt_timestamp(r.meal_time),
            r.carbohydrates_g,
            r.protein_g,
            r.fat_g,
            r.fiber_g,
            r.calories_kcal,
            r.daily_met,
            r.baseline_glucose,
            r.iauc_30,
            fmt_opt(r.iauc_60),
            fmt_opt(r.iauc_120),
            fmt_opt(r.minutes_since_last_meal),
        ));
    }
    out
}

/// Parse a feature table previously written by [`write_feature_csv`].
pub fn parse_feature_csv<R: Read>(source: R) -> Result<Vec<MealFeatureRow>> {
    let mut reader = csv::Reader::from_reader(source);
    check_header(
        reader.headers().map_err(map_csv_err)?,
        &FEATURE_HEADER.split(',').collect::<Vec<_>>(),
        &[],
    )?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(map_csv_err)?;
        let opt = |idx: usize| -> Result<Option<f64>> {
            let s = record[idx].trim();
            if s.is_empty() {
                Ok(None)
            } else {
                parse_f64(s, "field", line).map(Some)
            }
        };
        rows.push(MealFeatureRow {
            meal_time: parse_timestamp(&record[0], line)?,
            carbohydrates_g: parse_f64(&record[1], "carbohydrates_g", line)?,
            protein_g: parse_f64(&record[2], "protein_g", line)?,
            fat_g: parse_f64(&record[3], "fat_g", line)?,
            fiber_g: parse_f64(&record[4], "fiber_g", line)?,
            calories_kcal: parse_f64(&record[5], "calories_kcal", line)?,
            daily_met: parse_f64(&record[6], "daily_met", line)?,
            baseline_glucose: parse_f64(&record[7], "baseline_glucose", line)?,
            iauc_30: parse_f64(&record[8], "iauc_30", line)?,
            iauc_60: opt(9)?,
            iauc_120: opt(10)?,
            minutes_since_last_meal: opt(11)?,
        });
    }
    Ok(rows)
}

pub fn write_cgm_csv(samples: &[GlucoseSample]) -> String {
    let mut out = String::from("timestamp,glucose_mg_dl\n");
    for s in samples {
        out.push_str(&format!("{},{}\n", fmt_timestamp(s.timestamp), s.glucose));
    }
    out
}

pub fn write_meals_csv(meals: &[MealEvent]) -> String {
    let mut out = String::from("timestamp,carbs_g,protein_g,fat_g,fiber_g,calories_kcal\n");
    for m in meals {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_timestamp(m.timestamp),
            m.carbohydrates_g,
            m.protein_g,
            m.fat_g,
            m.fiber_g,
            m.calories_kcal
        ));
    }
    out
}

pub fn write_activity_csv(samples: &[ActivitySample]) -> String {
    let mut out = String::from("timestamp,met\n");
    for s in samples {
        out.push_str(&format!("{},{}\n", fmt_timestamp(s.timestamp), s.met));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn dt(day: u32, h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 1, day)
            .unwrap()
            .and_hms_opt(h, m, 0)
            .unwrap()
    }

    fn cgm(rows: &[(NaiveDateTime, f64)]) -> Vec<GlucoseSample> {
        rows.iter()
            .map(|&(timestamp, glucose)| GlucoseSample { timestamp, glucose })
            .collect()
    }

    #[test]
    fn parse_cgm_identity() {
        let src = "timestamp,glucose_mg_dl\n2024-01-01T00:00:00,100\n2024-01-01T00:01:00,102\n2024-01-01T00:02:00,101\n";
        let samples = parse_cgm_csv(src.as_bytes()).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[1].glucose, 102.0);
        assert!(samples[0].timestamp < samples[1].timestamp);
    }

    #[test]
    fn parse_cgm_averages_duplicates() {
        let src = "timestamp,glucose_mg_dl\n2024-01-01T00:00:00,100\n2024-01-01T00:00:00,104\n";
        let samples = parse_cgm_csv(src.as_bytes()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].glucose, 102.0);
    }

    #[test]
    fn parse_cgm_rejects_negative_glucose() {
        let src = "timestamp,glucose_mg_dl\n2024-01-01T00:00:00,-5\n";
        assert!(matches!(parse_cgm_csv(src.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn parse_cgm_reports_line_numbers() {
        let src = "timestamp,glucose_mg_dl\n2024-01-01T00:00:00,100\nnot-a-date,90\n";
        match parse_cgm_csv(src.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_meals_derives_calories() {
        let src = "timestamp,carbs_g,protein_g,fat_g,fiber_g\n2024-01-01T08:00:00,50,20,10,5\n";
        let meals = parse_meals_csv(src.as_bytes()).unwrap();
        assert_eq!(meals[0].calories_kcal, 4.0 * 50.0 + 4.0 * 20.0 + 9.0 * 10.0);
    }

    #[test]
    fn parse_meals_keeps_given_calories() {
        let src =
            "timestamp,carbs_g,protein_g,fat_g,fiber_g,calories_kcal\n2024-01-01T08:00:00,50,20,10,5,400\n";
        let meals = parse_meals_csv(src.as_bytes()).unwrap();
        assert_eq!(meals[0].calories_kcal, 400.0);
    }

    #[test]
    fn rolling_mean_constant_series() {
        assert_eq!(rolling_mean(&[1.0; 5], 5), vec![1.0; 5]);
    }

    #[test]
    fn rolling_mean_center_spike() {
        let out = rolling_mean(&[0.0, 0.0, 5.0, 0.0, 0.0], 5);
        assert_eq!(out[2], 1.0);
    }

    #[test]
    fn rolling_std_constant_is_zero() {
        assert_eq!(rolling_std(&[7.0; 9], 5), vec![0.0; 9]);
    }

    #[test]
    fn rolling_std_center_spike() {
        let out = rolling_std(&[0.0, 0.0, 5.0, 0.0, 0.0], 5);
        assert_eq!(out[2], 2.0);
    }

    // Brute-force reference: O(n·w) windowed statistics.
    fn brute_mean(series: &[f64], window: usize) -> Vec<f64> {
        let half = window / 2;
        (0..series.len())
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(series.len() - 1);
                let mut s = 0.0;
                let mut c = 0.0;
                for x in &series[lo..=hi] {
                    s += x;
                    c += 1.0;
                }
                s / c
            })
            .collect()
    }

    proptest! {
        #[test]
        fn rolling_mean_matches_brute_force(series in prop::collection::vec(-50.0..200.0f64, 1..100)) {
            let fast = rolling_mean(&series, 5);
            let brute = brute_mean(&series, 5);
            for (a, b) in fast.iter().zip(brute.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn iauc_shift_and_scale_invariants(
            values in prop::collection::vec(60.0..220.0f64, 31..60),
            shift in -20.0..20.0f64,
            scale in 0.1..4.0f64,
        ) {
            let base = dt(2, 8, 0);
            let samples: Vec<GlucoseSample> = values
                .iter()
                .enumerate()
                .map(|(i, g)| GlucoseSample {
                    timestamp: base + chrono::Duration::minutes(i as i64),
                    glucose: *g,
                })
                .collect();
            let baseline = 100.0;
            let a0 = compute_iauc(&samples, base, 30, baseline).unwrap();
            prop_assert!(a0 >= 0.0);

            let shifted: Vec<GlucoseSample> = samples
                .iter()
                .map(|s| GlucoseSample { timestamp: s.timestamp, glucose: s.glucose + shift })
                .collect();
            let a_shift = compute_iauc(&shifted, base, 30, baseline + shift).unwrap();
            prop_assert!((a0 - a_shift).abs() < 1e-6 * (1.0 + a0));

            let scaled: Vec<GlucoseSample> = samples
                .iter()
                .map(|s| GlucoseSample { timestamp: s.timestamp, glucose: s.glucose * scale })
                .collect();
            let a_scale = compute_iauc(&scaled, base, 30, baseline * scale).unwrap();
            prop_assert!((a_scale - scale * a0).abs() < 1e-6 * (1.0 + a0.abs() * scale));
        }
    }

    #[test]
    fn baseline_constant_history() {
        let base = dt(2, 12, 0);
        let samples: Vec<GlucoseSample> = (0..120)
            .map(|i| GlucoseSample {
                timestamp: base - chrono::Duration::minutes(120 - i),
                glucose: 90.0,
            })
            .collect();
        let b = compute_baseline(&samples, base, BaselineMode::Pre120min).unwrap();
        assert_eq!(b, 90.0);
    }

    #[test]
    fn baseline_mean_of_two() {
        let base = dt(2, 12, 0);
        let samples = cgm(&[
            (base - chrono::Duration::minutes(30), 80.0),
            (base - chrono::Duration::minutes(10), 100.0),
        ]);
        let b = compute_baseline(&samples, base, BaselineMode::Pre120min).unwrap();
        assert_eq!(b, 90.0);
    }

    #[test]
    fn baseline_sinusoid_matches_analytic_mean() {
        // Full 24h of a sinusoid with period 24h: the mean over the window is
        // the offset (the sine integrates to zero over whole periods).
        let base = dt(2, 12, 0);
        let samples: Vec<GlucoseSample> = (0..1440)
            .map(|i| {
                let t = base - chrono::Duration::minutes(1440 - i);
                let phase = 2.0 * std::f64::consts::PI * i as f64 / 1440.0;
                GlucoseSample {
                    timestamp: t,
                    glucose: 95.0 + 10.0 * phase.sin(),
                }
            })
            .collect();
        let b = compute_baseline(&samples, base, BaselineMode::Pre24h).unwrap();
        // Discrete mean of sin over exactly one period of equally spaced
        // samples is 0 to machine precision.
        assert_relative_eq!(b, 95.0, epsilon = 1e-9);
    }

    #[test]
    fn baseline_empty_window_errors() {
        let base = dt(2, 12, 0);
        let samples = cgm(&[(base + chrono::Duration::minutes(5), 90.0)]);
        assert!(compute_baseline(&samples, base, BaselineMode::Pre120min).is_err());
    }

    #[test]
    fn iauc_constant_at_baseline_is_zero() {
        let base = dt(2, 8, 0);
        let samples: Vec<GlucoseSample> = (0..=30)
            .map(|i| GlucoseSample {
                timestamp: base + chrono::Duration::minutes(i),
                glucose: 100.0,
            })
            .collect();
        assert_eq!(compute_iauc(&samples, base, 30, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn iauc_constant_excursion_near_rectangle() {
        let base = dt(2, 8, 0);
        let samples: Vec<GlucoseSample> = (0..=30)
            .map(|i| GlucoseSample {
                timestamp: base + chrono::Duration::minutes(i),
                glucose: 110.0,
            })
            .collect();
        let a = compute_iauc(&samples, base, 30, 100.0).unwrap();
        assert!((a - 300.0).abs() / 300.0 < 0.01, "area {a}");
    }

    #[test]
    fn iauc_triangular_excursion_matches_analytic_area() {
        let base = dt(2, 8, 0);
        // Peak +20 at 15 min, back to baseline at 30 min: area 300.
        let samples: Vec<GlucoseSample> = (0..=30)
            .map(|i| {
                let delta = if i <= 15 {
                    20.0 * i as f64 / 15.0
                } else {
                    20.0 * (30 - i) as f64 / 15.0
                };
                GlucoseSample {
                    timestamp: base + chrono::Duration::minutes(i),
                    glucose: 100.0 + delta,
                }
            })
            .collect();
        let a = compute_iauc(&samples, base, 30, 100.0).unwrap();
        assert!((a - 300.0).abs() / 300.0 < 0.02, "area {a}");
    }

    #[test]
    fn iauc_insufficient_samples_errors() {
        let base = dt(2, 8, 0);
        let samples = cgm(&[(base + chrono::Duration::minutes(1), 100.0)]);
        assert!(compute_iauc(&samples, base, 30, 90.0).is_err());
    }

    fn ten_meal_user() -> (Vec<GlucoseSample>, Vec<MealEvent>, Vec<ActivitySample>) {
        let mut glucose = Vec::new();
        let mut meals = Vec::new();
        let mut activity = Vec::new();
        for day in 1..=4u32 {
            for minute in 0..1440i64 {
                glucose.push(GlucoseSample {
                    timestamp: dt(day, 0, 0) + chrono::Duration::minutes(minute),
                    glucose: 95.0,
                });
            }
            for hour in [8u32, 13, 18] {
                meals.push(MealEvent {
                    timestamp: dt(day, hour, 0),
                    carbohydrates_g: 50.0,
                    protein_g: 20.0,
                    fat_g: 15.0,
                    fiber_g: 6.0,
                    calories_kcal: 415.0,
                });
            }
            activity.push(ActivitySample {
                timestamp: dt(day, 12, 0),
                met: 1.4,
            });
        }
        (glucose, meals, activity)
    }

    #[test]
    fn feature_table_one_row_per_clean_meal() {
        let (glucose, mut meals, activity) = ten_meal_user();
        meals.truncate(10);
        let rows = build_feature_table(&glucose, &meals, &activity, BaselineMode::Pre120min).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows.windows(2).all(|w| w[0].meal_time < w[1].meal_time));
        assert!(rows[0].minutes_since_last_meal.is_none());
        assert_eq!(rows[1].minutes_since_last_meal, Some(300.0));
    }

    #[test]
    fn feature_table_excludes_meal_without_history_under_pre24h() {
        let (glucose, meals, activity) = ten_meal_user();
        let rows = build_feature_table(&glucose, &meals, &activity, BaselineMode::Pre24h).unwrap();
        // Day-1 meals at 08:00/13:00 have <24h history but a partial window is
        // still non-empty; only a meal at the very start of recording drops.
        assert!(rows.len() >= 11);

        let mut meals2 = meals.clone();
        meals2[0].timestamp = dt(1, 0, 0); // coincides with recording start
        let rows2 = build_feature_table(&glucose, &meals2, &activity, BaselineMode::Pre24h).unwrap();
        assert_eq!(rows2.len(), rows.len() - 1);
    }

    #[test]
    fn split_half_rules() {
        let (glucose, meals, activity) = ten_meal_user();
        let rows = build_feature_table(&glucose, &meals[..10], &activity, BaselineMode::Pre120min).unwrap();
        let (train, full) = split_half(&rows).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(full.len(), 10);
        assert_eq!(&full[..5], &train[..]);

        let (train9, _) = split_half(&rows[..9]).unwrap();
        assert_eq!(train9.len(), 5);

        assert!(split_half(&rows[..3]).is_err());
    }

    #[test]
    fn csv_round_trip_is_idempotent() {
        let (glucose, meals, activity) = ten_meal_user();
        let g1 = write_cgm_csv(&glucose);
        let g2 = write_cgm_csv(&parse_cgm_csv(g1.as_bytes()).unwrap());
        assert_eq!(g1, g2);
        let m1 = write_meals_csv(&meals);
        let m2 = write_meals_csv(&parse_meals_csv(m1.as_bytes()).unwrap());
        assert_eq!(m1, m2);
        let a1 = write_activity_csv(&activity);
        let a2 = write_activity_csv(&parse_activity_csv(a1.as_bytes()).unwrap());
        assert_eq!(a1, a2);

        let rows = build_feature_table(&glucose, &meals, &activity, BaselineMode::Pre120min).unwrap();
        let f1 = write_feature_csv(&rows);
        let f2 = write_feature_csv(&parse_feature_csv(f1.as_bytes()).unwrap());
        assert_eq!(f1, f2);
    }
}
