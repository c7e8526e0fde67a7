use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::observer::{TimingTrace, TraceMeta};
use crate::Scalar;

/// `floor(fraction * n)` elements dropped from each end.
pub fn trim_slice<T>(xs: &[T], fraction: f64) -> Result<&[T], FeatureError> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(FeatureError::InvalidFraction(fraction.to_string()));
    }
    let cut = (fraction * xs.len() as f64).floor() as usize;
    let kept = &xs[cut..xs.len() - cut];
    if kept.is_empty() {
        return Err(FeatureError::EmptyAfterTrim);
    }
    Ok(kept)
}

/// Drops warm-up and tail effects from both ends of a trace.
pub fn trim_trace(trace: &TimingTrace, fraction: f64) -> Result<TimingTrace, FeatureError> {
    let kept = trim_slice(trace.deltas(), fraction)?;
    trace.with_deltas(kept.to_vec()).map_err(|_| FeatureError::EmptyAfterTrim)
}

/// Nearest-rank quantile sampling: `out[j] = sorted[floor(j * (n - 1) / (k - 1))]`.
pub fn cdf_sample<T: Scalar>(deltas: &[u64], k: usize) -> Result<Vec<T>, FeatureError> {
    if k < 2 {
        return Err(FeatureError::InvalidK(k));
    }
    if deltas.is_empty() {
        return Err(FeatureError::EmptyAfterTrim);
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    Ok((0..k).map(|j| T::of_u64(sorted[j * (n - 1) / (k - 1)])).collect())
}

/// Rescales to [0, 1]; a constant vector maps to zeros.
pub fn min_max<T: Scalar>(values: &mut [T]) {
    let lo = values.iter().copied().fold(T::infinity(), T::min);
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    for v in values {
        *v = if span > T::zero() { (*v - lo) / span } else { T::zero() };
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector<T> {
    pub values: Vec<T>,
    pub meta: TraceMeta,
}

impl<T> FeatureVector<T> {
    pub fn k(&self) -> usize {
        self.values.len()
    }
}

/// Quantile features of the whole (untrimmed) trace.
pub fn cdf_features<T: Scalar>(trace: &TimingTrace, k: usize) -> Result<FeatureVector<T>, FeatureError> {
    Ok(FeatureVector { values: cdf_sample(trace.deltas(), k)?, meta: trace.meta.clone() })
}

/// Turns a trace into a fixed-length vector.
pub trait Featurizer<T: Scalar>: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn featurize(&self, trace: &TimingTrace) -> Result<FeatureVector<T>, FeatureError>;
}

/// Trim, then sample `k` quantiles, optionally min-max normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdfFeaturizer {
    pub k: usize,
    pub trim: f64,
    pub normalize: bool,
}

impl Default for CdfFeaturizer {
    fn default() -> Self {
        CdfFeaturizer { k: 1024, trim: 0.05, normalize: false }
    }
}

impl<T: Scalar> Featurizer<T> for CdfFeaturizer {
    fn id(&self) -> &str {
        "cdf"
    }

    fn dim(&self) -> usize {
        self.k
    }

    fn featurize(&self, trace: &TimingTrace) -> Result<FeatureVector<T>, FeatureError> {
        let mut values = cdf_sample(trim_slice(trace.deltas(), self.trim)?, self.k)?;
        if self.normalize {
            min_max(&mut values);
        }
        Ok(FeatureVector { values, meta: trace.meta.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(d: Vec<u64>) -> TimingTrace {
        TimingTrace::new(None, None, d, TraceMeta::default()).unwrap()
    }

    #[test]
    fn trim_examples() {
        let xs: Vec<u64> = (0..100).collect();
        assert_eq!(trim_slice(&xs, 0.05).unwrap(), &xs[5..95]);
        let xs: Vec<u64> = (0..7).collect();
        assert_eq!(trim_slice(&xs, 0.05).unwrap().len(), 7);
        assert_eq!(trim_slice(&xs, 0.0).unwrap(), &xs[..]);
        assert!(matches!(trim_slice(&xs, 0.5), Err(FeatureError::InvalidFraction(_))));
        assert_eq!(trim_slice(&[1u64, 2], 0.49).unwrap(), &[1, 2]);
        assert_eq!(trim_trace(&trace((0..20).collect()), 0.1).unwrap().deltas(), &(2..18).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(cdf_sample::<f64>(&[4, 1, 3, 2], 4).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cdf_sample::<f32>(&[7; 5], 16).unwrap(), vec![7.0; 16]);
        // Upsampling repeats values.
        assert_eq!(cdf_sample::<f64>(&[2, 1], 4).unwrap(), vec![1.0, 1.0, 1.0, 2.0]);
        assert!(matches!(cdf_sample::<f64>(&[1], 1), Err(FeatureError::InvalidK(1))));
    }

    #[test]
    fn featurizer_trims_then_samples() {
        let f = CdfFeaturizer { k: 3, trim: 0.1, normalize: false };
        let fv: FeatureVector<f64> = f.featurize(&trace((0..10).rev().collect())).unwrap();
        assert_eq!(fv.values, vec![1.0, 4.0, 8.0]);
        let f = CdfFeaturizer { normalize: true, ..f };
        let fv: FeatureVector<f64> = f.featurize(&trace((0..10).collect())).unwrap();
        assert_eq!(fv.values, vec![0.0, 3.0 / 7.0, 1.0]);
    }
}
