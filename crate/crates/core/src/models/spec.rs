use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    RandomForest,
    GradientBoostedTrees,
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rf" | "random_forest" | "randomforest" => Ok(Family::RandomForest),
            "gbt" | "xgb" | "xgboost" | "gradient_boosted_trees" => Ok(Family::GradientBoostedTrees),
            other => Err(format!("unknown model family `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
    All,
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        let v = match self {
            MaxFeatures::Sqrt => (d as f64).sqrt() as usize,
            MaxFeatures::Log2 => (d as f64).log2() as usize,
            MaxFeatures::All => d,
        };
        v.clamp(1, d.max(1))
    }
}

/// `max_depth: None` means no limit (internally capped at [`DEPTH_CAP`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_estimators: 100, max_depth: None, max_features: MaxFeatures::Sqrt, bootstrap: true }
    }
}

/// `gamma` is the minimum loss reduction a split must achieve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub gamma: f64,
    #[serde(default = "BoostParams::default_eta")]
    pub eta: f64,
    #[serde(default = "BoostParams::default_lambda")]
    pub lambda: f64,
}

impl BoostParams {
    fn default_eta() -> f64 {
        0.3
    }

    fn default_lambda() -> f64 {
        1.0
    }
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams { n_estimators: 100, max_depth: 6, gamma: 0.0, eta: 0.3, lambda: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Hyperparams {
    RandomForest(ForestParams),
    GradientBoostedTrees(BoostParams),
}

impl Hyperparams {
    pub fn family(&self) -> Family {
        match self {
            Hyperparams::RandomForest(_) => Family::RandomForest,
            Hyperparams::GradientBoostedTrees(_) => Family::GradientBoostedTrees,
        }
    }

    pub fn default_for(family: Family) -> Self {
        match family {
            Family::RandomForest => Hyperparams::RandomForest(ForestParams::default()),
            Family::GradientBoostedTrees => Hyperparams::GradientBoostedTrees(BoostParams::default()),
        }
    }

    /// Compact `key=value` rendering for tables.
    pub fn describe(&self) -> String {
        match self {
            Hyperparams::RandomForest(p) => format!(
                "n_estimators={} max_depth={} max_features={} bootstrap={}",
                p.n_estimators,
                p.max_depth.map_or("none".to_owned(), |d| d.to_string()),
                serde_json::to_value(p.max_features).expect("enum").as_str().expect("string"),
                p.bootstrap
            ),
            Hyperparams::GradientBoostedTrees(p) => {
                format!("n_estimators={} max_depth={} gamma={}", p.n_estimators, p.max_depth, p.gamma)
            }
        }
    }
}

pub const DEPTH_CAP: usize = 64;
pub const DEFAULT_MAX_BINS: usize = 256;

/// A model family, its hyperparameters, and the seed that fixes every random choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub params: Hyperparams,
    pub seed: u64,
    #[serde(default = "default_bins")]
    pub max_bins: usize,
}

fn default_bins() -> usize {
    DEFAULT_MAX_BINS
}

impl ModelSpec {
    pub fn new(params: Hyperparams, seed: u64) -> Self {
        ModelSpec { params, seed, max_bins: DEFAULT_MAX_BINS }
    }
}

pub type ClassifierSpec = ModelSpec;

/// Hyperparameter grid; every combination is one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Grid {
    RandomForest {
        n_estimators: Vec<usize>,
        max_depth: Vec<Option<usize>>,
        max_features: Vec<MaxFeatures>,
        bootstrap: Vec<bool>,
    },
    GradientBoostedTrees {
        n_estimators: Vec<usize>,
        max_depth: Vec<usize>,
        gamma: Vec<f64>,
    },
}

impl Grid {
    /// The benchmark grids: 60 forest and 45 boosting configurations.
    pub fn standard(family: Family) -> Self {
        let n = vec![100, 150, 200, 250, 300];
        match family {
            Family::RandomForest => Grid::RandomForest {
                n_estimators: n,
                max_depth: vec![None, Some(10), Some(20)],
                max_features: vec![MaxFeatures::Sqrt, MaxFeatures::Log2],
                bootstrap: vec![true, false],
            },
            Family::GradientBoostedTrees => {
                Grid::GradientBoostedTrees { n_estimators: n, max_depth: vec![3, 6, 10], gamma: vec![0.0, 1.0, 5.0] }
            }
        }
    }

    pub fn single(params: Hyperparams) -> Self {
        match params {
            Hyperparams::RandomForest(p) => Grid::RandomForest {
                n_estimators: vec![p.n_estimators],
                max_depth: vec![p.max_depth],
                max_features: vec![p.max_features],
                bootstrap: vec![p.bootstrap],
            },
            Hyperparams::GradientBoostedTrees(p) => Grid::GradientBoostedTrees {
                n_estimators: vec![p.n_estimators],
                max_depth: vec![p.max_depth],
                gamma: vec![p.gamma],
            },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Grid::RandomForest { .. } => Family::RandomForest,
            Grid::GradientBoostedTrees { .. } => Family::GradientBoostedTrees,
        }
    }

    /// All configurations, last axis varying fastest.
    pub fn configs(&self) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        match self {
            Grid::RandomForest { n_estimators, max_depth, max_features, bootstrap } => {
                for &n in n_estimators {
                    for &d in max_depth {
                        for &f in max_features {
                            for &b in bootstrap {
                                out.push(Hyperparams::RandomForest(ForestParams {
                                    n_estimators: n,
                                    max_depth: d,
                                    max_features: f,
                                    bootstrap: b,
                                }));
                            }
                        }
                    }
                }
            }
            Grid::GradientBoostedTrees { n_estimators, max_depth, gamma } => {
                for &n in n_estimators {
                    for &d in max_depth {
                        for &g in gamma {
                            out.push(Hyperparams::GradientBoostedTrees(BoostParams {
                                n_estimators: n,
                                max_depth: d,
                                gamma: g,
                                ..BoostParams::default()
                            }));
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_sizes() {
        assert_eq!(Grid::standard(Family::RandomForest).configs().len(), 60);
        assert_eq!(Grid::standard(Family::GradientBoostedTrees).configs().len(), 45);
        let one = Hyperparams::RandomForest(ForestParams::default());
        assert_eq!(Grid::single(one).configs(), vec![one]);
    }

    #[test]
    fn spec_json_shape() {
        let s = ModelSpec::new(Hyperparams::RandomForest(ForestParams::default()), 3);
        let v = serde_json::to_value(s).unwrap();
        assert_eq!(v["family"], "random_forest");
        assert_eq!(v["max_features"], "sqrt");
        assert_eq!(serde_json::from_value::<ModelSpec>(v).unwrap(), s);
    }

    #[test]
    fn max_features_resolution() {
        assert_eq!(MaxFeatures::Sqrt.resolve(1024), 32);
        assert_eq!(MaxFeatures::Log2.resolve(1024), 10);
        assert_eq!(MaxFeatures::Log2.resolve(1), 1);
    }
}
