//! From timing traces to fixed-length feature vectors and labeled datasets.

mod cdf;
mod dataset;
mod split;

use thiserror::Error;

pub use cdf::{cdf_features, cdf_sample, min_max, trim_slice, trim_trace, CdfFeaturizer, FeatureVector, Featurizer};
pub use dataset::{build_dataset, read_csv, write_csv, DatasetMeta, LabeledDataset, Row};
pub use split::{leave_one_query_out, split_even, QueryHoldout};

use crate::engine::OperatorKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("trim fraction {0} outside [0, 0.5)")]
    InvalidFraction(String),
    #[error("nothing left after trimming")]
    EmptyAfterTrim,
    #[error("feature count k must be >= 2, got {0}")]
    InvalidK(usize),
    #[error("trace {0} has no label")]
    MissingLabel(usize),
    #[error("class {0} has fewer than 2 rows")]
    ClassTooSmall(OperatorKind),
    #[error("split ratio {0} outside (0, 1)")]
    InvalidRatio(String),
    #[error("query `{0}` is not in the dataset")]
    UnknownQuery(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
