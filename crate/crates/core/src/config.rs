//! JSON map configuration files.
//!
//! ```json
//! {"v": 1, "epsilon": 1.0,
//!  "branches": [{"lo": 0, "hi": 0.5, "formula": "2*x"},
//!               {"lo": 0.5, "hi": 1, "formula": "2*x - 1", "min_slope": 2}]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map_model::{BranchSpec, MapError, PiecewiseMap};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub lo: f64,
    pub hi: f64,
    pub formula: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder_constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub v: u32,
    pub epsilon: f64,
    pub branches: Vec<BranchConfig>,
}

impl MapConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: MapConfig = serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        if cfg.v != SCHEMA_VERSION {
            return Err(ConfigError::Version(cfg.v));
        }
        if cfg.branches.is_empty() {
            return Err(ConfigError::Schema("at least one branch is required".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn to_map(&self) -> Result<PiecewiseMap, ConfigError> {
        let specs = self
            .branches
            .iter()
            .map(|b| BranchSpec {
                lo: b.lo,
                hi: b.hi,
                formula: b.formula.clone(),
                min_slope: b.min_slope,
                holder_constant: b.holder_constant,
            })
            .collect();
        Ok(PiecewiseMap::new(specs, self.epsilon)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIPLING: &str = r#"{"v": 1, "epsilon": 1,
        "branches": [{"lo": 0, "hi": 0.3333333333333333, "formula": "3*x", "min_slope": 3},
                     {"lo": 0.3333333333333333, "hi": 0.6666666666666666, "formula": "3*x-1", "min_slope": 3},
                     {"lo": 0.6666666666666666, "hi": 1, "formula": "3*x-2", "min_slope": 3}]}"#;

    #[test]
    fn parses_and_builds() {
        let cfg = MapConfig::from_json(TRIPLING).unwrap();
        let map = cfg.to_map().unwrap();
        assert_eq!(map.branch_count(), 3);
        assert_eq!(map.min_slope_global(), 3.0);
        let again = MapConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_schema_violations() {
        assert!(matches!(MapConfig::from_json(&TRIPLING.replace("\"v\": 1", "\"v\": 2")), Err(ConfigError::Version(2))));
        assert!(matches!(
            MapConfig::from_json(&TRIPLING.replace("\"min_slope\": 3}", "\"slope\": 3}")),
            Err(ConfigError::Schema(_))
        ));
        assert!(matches!(MapConfig::from_json(r#"{"v":1,"epsilon":1,"branches":[]}"#), Err(ConfigError::Schema(_))));
        let bad_formula = TRIPLING.replace("3*x-2", "3*y-2");
        assert!(matches!(MapConfig::from_json(&bad_formula).unwrap().to_map(), Err(ConfigError::Map(MapError::Parse { .. }))));
    }
}
