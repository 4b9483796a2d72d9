//! Merged run configuration, loadable from JSON or TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::graph::GraphConfig;
use crate::proposals::ProposalConfig;
use crate::segmenter::SelectionConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub features: FeatureConfig,
    pub proposals: ProposalConfig,
    pub graph: GraphConfig,
    pub selection: SelectionConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.proposals.validate()?;
        self.graph.validate()?;
        self.selection.validate()
    }

    /// Parses JSON when the text starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.toml` file, or JSON for any other extension. Missing keys take defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EnergyKind;
    use crate::lifted::MetricKind;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_detects_format() {
        assert_eq!(RunConfig::parse(" {\"graph\": {\"zeta\": 6.0}}").unwrap().graph.zeta, 6.0);
        assert_eq!(RunConfig::parse("[selection]\nmu1 = 2.0\n").unwrap().selection.mu1, 2.0);
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert!(matches!(RunConfig::parse("{\"graph\": {\"zeta\": 0.0}}"), Err(Error::Config(_))));
        assert!(RunConfig::parse("{\"colour\": 1}").is_err());
    }

    #[test]
    fn partial_files_merge_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("run.toml");
        std::fs::write(&toml_path, "[graph]\nzeta = 8.0\nmetric = \"rs\"\n[selection]\nmu2 = 0.5\n").unwrap();
        let cfg = RunConfig::load(&toml_path).unwrap();
        assert_eq!(cfg.graph.zeta, 8.0);
        assert_eq!(cfg.graph.metric, MetricKind::ReedsSheppForward);
        assert_eq!(cfg.graph.energy, EnergyKind::C1);
        assert_eq!(cfg.selection.mu2, 0.5);
        assert_eq!(cfg.features, FeatureConfig::default());

        let json_path = dir.path().join("run.json");
        std::fs::write(&json_path, r#"{"graph": {"zeta": -1}}"#).unwrap();
        assert!(matches!(RunConfig::load(&json_path), Err(Error::Config(_))));
        std::fs::write(&json_path, r#"{"grpah": {}}"#).unwrap();
        assert!(matches!(RunConfig::load(&json_path), Err(Error::Config(_))));
    }
}
