//! Run configuration shared by the CLI and the evaluation harness.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::BaselineMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Significance level for conditional independence tests.
    pub alpha: f64,
    /// Maximum causal path length in edges.
    pub l_max: usize,
    /// Number of top-ranked paths kept.
    pub p_max: usize,
    pub baseline_mode: BaselineMode,
    pub budget_kcal: f64,
    pub horizons: Vec<u32>,
    pub queries_per_user: usize,
    pub seed: u64,
    /// Retrieval candidates tried before falling back.
    pub candidate_budget: usize,
    /// Required improvement margin over the typical response for acceptance.
    pub accept_margin: f64,
    pub data_dir: PathBuf,
    pub food_db: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            l_max: 3,
            p_max: 5,
            baseline_mode: BaselineMode::Pre24h,
            budget_kcal: 500.0,
            horizons: vec![30, 60, 120],
            queries_per_user: 5,
            seed: 0,
            candidate_budget: 10,
            accept_margin: 0.0,
            data_dir: PathBuf::from("data"),
            food_db: PathBuf::from("data/food_db.csv"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::Usage(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.l_max == 0 || self.l_max > 16 {
            return Err(Error::Usage(format!("l_max {} outside 1..=16", self.l_max)));
        }
        if self.p_max == 0 {
            return Err(Error::Usage("p_max must be positive".into()));
        }
        if self.budget_kcal <= 0.0 {
            return Err(Error::Usage("budget_kcal must be positive".into()));
        }
        if self.horizons.is_empty()
            || self
                .horizons
                .iter()
                .any(|h| !matches!(h, 30 | 60 | 120))
        {
            return Err(Error::Usage(format!(
                "horizons {:?} must be a non-empty subset of {{30, 60, 120}}",
                self.horizons
            )));
        }
        if self.queries_per_user == 0 {
            return Err(Error::Usage("queries_per_user must be positive".into()));
        }
        if self.candidate_budget == 0 {
            return Err(Error::Usage("candidate_budget must be positive".into()));
        }
        if self.accept_margin < 0.0 {
            return Err(Error::Usage("accept_margin must be non-negative".into()));
        }
        Ok(())
    }

    /// Load from a flat-key JSON file; absent keys take defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let config: Self = serde_json::from_slice(&bytes)?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_alpha_is_usage_error() {
        let mut c = RunConfig::default();
        c.alpha = 1.5;
        assert!(matches!(c.validate(), Err(Error::Usage(_))));
    }

    #[test]
    fn bad_horizon_is_usage_error() {
        let mut c = RunConfig::default();
        c.horizons = vec![45];
        assert!(matches!(c.validate(), Err(Error::Usage(_))));
    }

    #[test]
    fn partial_file_fills_defaults() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"alpha": 0.01, "seed": 7}"#).unwrap();
        let c = RunConfig::from_file(&path).unwrap();
        assert_eq!(c.alpha, 0.01);
        assert_eq!(c.seed, 7);
        assert_eq!(c.l_max, 3);
        assert_eq!(c.horizons, vec![30, 60, 120]);
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
    }
}
