//! `key=value` campaign configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::state::VolatilityMetric;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Branch coverage and state hashes.
    Composite,
    CoverageOnly,
    /// State hashes only; new branches alone do not preserve a seed.
    StateOnly,
}

impl FeedbackMode {
    pub fn uses_state(self) -> bool {
        self != FeedbackMode::CoverageOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackMode::Composite => "composite",
            FeedbackMode::CoverageOnly => "coverage_only",
            FeedbackMode::StateOnly => "state_only",
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeedbackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "composite" => Ok(FeedbackMode::Composite),
            "coverage_only" => Ok(FeedbackMode::CoverageOnly),
            "state_only" => Ok(FeedbackMode::StateOnly),
            _ => Err(format!(
                "unknown mode `{s}` (composite, coverage_only, state_only)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignConfig {
    pub budget: u64,
    pub workers: usize,
    pub p_gen: f64,
    pub max_len: usize,
    pub mode: FeedbackMode,
    pub campaign_seed: u64,
    pub regions_file: Option<PathBuf>,
    pub templates_file: Option<PathBuf>,
    pub corpus_dir: Option<PathBuf>,
    pub volatility_metric: VolatilityMetric,
    pub volatility_threshold: u32,
    pub output_dir: PathBuf,
    pub infer_budget: u64,
    pub infer_trials: usize,
    pub stats_every: u64,
    pub resume: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            budget: 50_000,
            workers: 1,
            p_gen: 0.1,
            max_len: 16,
            mode: FeedbackMode::Composite,
            campaign_seed: 0,
            regions_file: None,
            templates_file: None,
            corpus_dir: None,
            volatility_metric: VolatilityMetric::DistinctValues,
            volatility_threshold: 80,
            output_dir: PathBuf::from("out"),
            infer_budget: 5_000,
            infer_trials: 12,
            stats_every: 1_000,
            resume: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    Value {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CampaignConfig {
    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut c = CampaignConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected key=value, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |msg: String| ConfigError::Value {
                line,
                key: key.to_string(),
                msg,
            };
            fn num<T: FromStr>(v: &str) -> Result<T, String>
            where
                T::Err: fmt::Display,
            {
                v.parse::<T>().map_err(|e| e.to_string())
            }
            let path = |v: &str| -> Option<PathBuf> {
                if v.is_empty() {
                    None
                } else {
                    Some(base.join(v))
                }
            };
            match key {
                "budget" => c.budget = num(value).map_err(bad)?,
                "workers" => c.workers = num(value).map_err(bad)?,
                "p_gen" => c.p_gen = num(value).map_err(bad)?,
                "max_len" => c.max_len = num(value).map_err(bad)?,
                "mode" => c.mode = value.parse().map_err(bad)?,
                "campaign_seed" => c.campaign_seed = num(value).map_err(bad)?,
                "regions_file" => c.regions_file = path(value),
                "templates_file" => c.templates_file = path(value),
                "corpus_dir" => c.corpus_dir = path(value),
                "volatility_metric" => c.volatility_metric = value.parse().map_err(bad)?,
                "volatility_threshold" => c.volatility_threshold = num(value).map_err(bad)?,
                "output_dir" => c.output_dir = path(value).unwrap_or_else(|| base.to_path_buf()),
                "infer_budget" => c.infer_budget = num(value).map_err(bad)?,
                "infer_trials" => c.infer_trials = num(value).map_err(bad)?,
                "stats_every" => c.stats_every = num(value).map_err(bad)?,
                "resume" => c.resume = num(value).map_err(bad)?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.p_gen) {
            return Err(ConfigError::Invalid(format!(
                "p_gen {} outside [0, 1]",
                self.p_gen
            )));
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(ConfigError::Invalid("max_len must be at least 1".into()));
        }
        if self.stats_every == 0 {
            return Err(ConfigError::Invalid(
                "stats_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_resolves_paths() {
        let c = CampaignConfig::parse(
            "budget = 1000 # short\nmode=coverage_only\nregions_file=r.txt\np_gen=0.25\ncampaign_seed=7\n",
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(c.budget, 1000);
        assert_eq!(c.mode, FeedbackMode::CoverageOnly);
        assert_eq!(c.regions_file, Some(PathBuf::from("/cfg/r.txt")));
        assert_eq!(c.p_gen, 0.25);
        assert_eq!(c.workers, 1);
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(matches!(
            CampaignConfig::parse("bogus=1", base),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            CampaignConfig::parse("budget", base),
            Err(ConfigError::Syntax { .. })
        ));
        assert!(matches!(
            CampaignConfig::parse("budget=x", base),
            Err(ConfigError::Value { .. })
        ));
        assert!(matches!(
            CampaignConfig::parse("p_gen=2", base),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            CampaignConfig::parse("mode=fast", base),
            Err(ConfigError::Value { .. })
        ));
    }
}
