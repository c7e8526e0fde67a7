use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sidestream::attack::{Mitigation, ModelConfig, ProfileConfig, Setting};
use sidestream::engine::OperatorKind;
use sidestream::features::CdfFeaturizer;
use sidestream::generators::QueryId;
use sidestream::models::{Family, Grid};
use sidestream::observer::{CostModel, Mode};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Everything a run depends on. A simulated run is a pure function of this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub mode: Mode,
    /// Catalog, trace counts and the generator settings for the input data.
    pub profile: ProfileConfig,
    pub cost_model: CostModel,
    pub featurizer: CdfFeaturizer,
    pub model: ModelConfig,
    pub setting: Setting,
    pub split_ratio: f64,
    /// Victims for `attack`; empty means every NEXMark query.
    pub queries: Vec<QueryId>,
    pub mitigation: Mitigation,
    /// Operator kinds and victims per kind in the mitigation suite.
    pub suite_kinds: Vec<OperatorKind>,
    pub suite_per_kind: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        use OperatorKind::*;
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 0,
            mode: Mode::Simulated,
            profile: ProfileConfig::nexmark(),
            cost_model: CostModel::default(),
            featurizer: CdfFeaturizer::default(),
            model: ModelConfig::default(),
            setting: Setting::EvenSplit,
            split_ratio: 0.5,
            queries: Vec::new(),
            mitigation: Mitigation::Pad { target: None },
            suite_kinds: vec![Map, Filter, Join, Max, Average, AveragePartition],
            suite_per_kind: 4,
            out: PathBuf::from("out"),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub out: Option<PathBuf>,
    pub query: Vec<String>,
    pub model: Option<String>,
    pub setting: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self, CliError> {
        let bad = |e: String| CliError::Config(e);
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = &o.mode {
            self.mode = m.parse().map_err(bad)?;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if !o.query.is_empty() {
            self.queries = o
                .query
                .iter()
                .map(|q| q.parse::<QueryId>().map_err(|e| bad(e.to_string())))
                .collect::<Result<_, _>>()?;
        }
        if let Some(m) = &o.model {
            let family: Family = m.parse().map_err(bad)?;
            if self.model.grid.family() != family {
                self.model.grid = Grid::standard(family);
            }
        }
        if let Some(s) = &o.setting {
            self.setting = s.parse().map_err(bad)?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_owned()));
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie in (0, 1)");
        }
        if self.featurizer.k < 2 || !(0.0..0.5).contains(&self.featurizer.trim) {
            return bad("featurizer needs k >= 2 and trim in [0, 0.5)");
        }
        if self.model.grid.configs().is_empty() {
            return bad("model grid is empty");
        }
        if self.suite_per_kind == 0 {
            return bad("suite_per_kind must be at least 1");
        }
        self.cost_model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.profile.data.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn victims(&self) -> Vec<QueryId> {
        if self.queries.is_empty() {
            QueryId::NEXMARK.to_vec()
        } else {
            self.queries.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"seed": 9, "setting": "leave_one_query_out"}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.setting, Setting::LeaveOneQueryOut);
        assert_eq!(c.suite_per_kind, 4);
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            seed: Some(3),
            mode: Some("measured".into()),
            query: vec!["q2".into()],
            model: Some("gbt".into()),
            setting: Some("2".into()),
            ..Overrides::default()
        };
        let c = ExperimentConfig::default().apply(&o).unwrap();
        assert_eq!((c.seed, c.mode, c.setting), (3, Mode::Measured, Setting::LeaveOneQueryOut));
        assert_eq!(c.queries, vec![QueryId::Q2]);
        assert_eq!(c.model.grid.configs().len(), 45);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |o: Overrides| matches!(ExperimentConfig::default().apply(&o), Err(CliError::Config(_)));
        assert!(bad(Overrides { mode: Some("fast".into()), ..Overrides::default() }));
        assert!(bad(Overrides { query: vec!["Q9".into()], ..Overrides::default() }));
        let c = ExperimentConfig { version: 2, ..ExperimentConfig::default() };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sed": 1}"#).is_err());
    }
}
