//! The two-phase attack: offline profiling and training, online recovery of
//! a victim query's operators, and their evaluation.

mod evaluate;
mod offline;
mod online;
mod report;

use thiserror::Error;

pub use evaluate::{
    evaluate_param_regression, evaluate_setting1, evaluate_setting2, train_classifier, OperatorScore, QrsrReport,
    QueryScore, RegressionRow, Setting,
};
pub use offline::{
    allocate, offline_phase, profile_catalog, train_artifacts, Artifacts, KindRegressors, ModelConfig, ProfileConfig,
    StageSlot,
};
pub use online::{
    apply_mitigation, evaluate_mitigation, kind_suite, online_phase, Mitigation, MitigationReport, RecoveredQuery,
    SideReport, StagePrediction, Victim,
};
pub use report::{write_qrsr_csv, write_stage_csv};

use crate::engine::EngineError;
use crate::features::FeatureError;
use crate::generators::GeneratorError;
use crate::models::ModelError;
use crate::observer::ObserverError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Feature(#[from] FeatureError),
    #[error("{0}")]
    Observer(#[from] ObserverError),
    #[error("{0}")]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Generator(#[from] GeneratorError),
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Query recovery success rate: the product of per-operator accuracies.
/// The empty product is 1.
pub fn qrsr(accuracies: &[f64]) -> f64 {
    accuracies.iter().product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrsr_examples() {
        assert_eq!(qrsr(&[0.8882, 1.0]), 0.8882);
        assert_eq!(qrsr(&[1.0, 0.37]), 0.37);
        assert_eq!(qrsr(&[]), 1.0);
        let q3 = qrsr(&[0.9946, 0.9933, 1.0, 0.9844]);
        assert!((q3 * 100.0 - 97.26).abs() <= 0.01 + 1e-9, "{q3}");
    }
}
