use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureError, LabeledDataset};
use crate::engine::OperatorKind;
use crate::Scalar;

/// Stratified split: each class sends `round(ratio * n_c)` rows (at least one,
/// at most `n_c - 1`) to train and the rest to test. Rows keep their order.
pub fn split_even<T: Scalar>(
    ds: &LabeledDataset<T>,
    ratio: f64,
    seed: u64,
) -> Result<(LabeledDataset<T>, LabeledDataset<T>), FeatureError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(FeatureError::InvalidRatio(ratio.to_string()));
    }
    let targets = ds.targets();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; ds.len()];
    for (c, kind) in ds.classes().iter().enumerate() {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| targets[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(FeatureError::ClassTooSmall(*kind));
        }
        idx.shuffle(&mut rng);
        let n_train = ((ratio * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| in_train[i]);
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// One query's rows held out, plus the classes that only occur in it.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryHoldout<T> {
    pub train: LabeledDataset<T>,
    pub test: LabeledDataset<T>,
    /// Classes present in `test` but absent from `train`.
    pub unseen: Vec<OperatorKind>,
}

pub fn leave_one_query_out<T: Scalar>(ds: &LabeledDataset<T>, query_id: &str) -> Result<QueryHoldout<T>, FeatureError> {
    let held = |q: &Option<String>| q.as_deref() == Some(query_id);
    if !ds.rows.iter().any(|r| held(&r.query_id)) {
        return Err(FeatureError::UnknownQuery(query_id.to_owned()));
    }
    let train = ds.filter(|r| !held(&r.query_id));
    let test = ds.filter(|r| held(&r.query_id));
    let mut unseen: Vec<OperatorKind> = test
        .rows
        .iter()
        .map(|r| r.label)
        .filter(|k| !train.rows.iter().any(|r| r.label == *k))
        .collect();
    unseen.sort();
    unseen.dedup();
    Ok(QueryHoldout { train, test, unseen })
}
