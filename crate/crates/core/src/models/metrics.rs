use serde::{Deserialize, Serialize};

use crate::engine::OperatorKind;

/// Classification metrics. `confusion[t][p]` counts rows of true class `t`
/// predicted as `p`, indexed by `classes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<OperatorKind>,
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: OperatorKind,
    pub support: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Macro averages run over classes that occur in the truth or in the
/// predictions; an undefined ratio counts as 0.
pub fn classification_report(classes: &[OperatorKind], truth: &[usize], pred: &[usize]) -> MetricsReport {
    assert_eq!(truth.len(), pred.len());
    let c = classes.len();
    let mut confusion = vec![vec![0usize; c]; c];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[t][p] += 1;
    }
    let mut per_class = Vec::with_capacity(c);
    let (mut sp, mut sr, mut sf, mut active) = (0.0, 0.0, 0.0, 0usize);
    for (j, &class) in classes.iter().enumerate() {
        let support: usize = confusion[j].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[j]).sum();
        let correct = confusion[j][j];
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, support);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        if support > 0 || predicted > 0 {
            sp += precision;
            sr += recall;
            sf += f1;
            active += 1;
        }
        per_class.push(ClassMetrics { class, support, correct, precision, recall, f1 });
    }
    let a = active.max(1) as f64;
    let correct: usize = (0..c).map(|j| confusion[j][j]).sum();
    MetricsReport {
        classes: classes.to_vec(),
        n: truth.len(),
        accuracy: ratio(correct, truth.len()),
        precision: sp / a,
        recall: sr / a,
        f1: sf / a,
        per_class,
        confusion,
    }
}

/// The scale applied to reported mean squared errors.
pub const MSE_SCALE: f64 = 1e5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub n: usize,
    pub mse: f64,
    /// `mse / MSE_SCALE`, the figure tables report.
    pub mse_scaled: f64,
    /// 0 when the truth has no variance.
    pub r2: f64,
}

pub fn regression_report(truth: &[f64], pred: &[f64]) -> RegressionReport {
    assert_eq!(truth.len(), pred.len());
    let n = truth.len();
    let mean = truth.iter().sum::<f64>() / n.max(1) as f64;
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    let mse = ss_res / n.max(1) as f64;
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    RegressionReport { n, mse, mse_scaled: mse / MSE_SCALE, r2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use OperatorKind::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let r = classification_report(&[Map, Filter, Join], &y, &y);
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!(i == j || v == 0);
            }
        }
    }

    #[test]
    fn constant_predictor_on_balanced_pair() {
        let r = classification_report(&[Map, Filter], &[0, 0, 1, 1], &[0, 0, 0, 0]);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.precision, 0.25);
    }

    #[test]
    fn hand_computed_three_class() {
        // truth/pred pairs: A->A x3, A->B x1, B->B x2, B->C x1, C->C x1, C->A x2
        let truth = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
        let pred = [0, 0, 0, 1, 1, 1, 2, 2, 0, 0];
        let r = classification_report(&[Map, Filter, Join], &truth, &pred);
        assert_eq!(r.confusion, vec![vec![3, 1, 0], vec![0, 2, 1], vec![2, 0, 1]]);
        assert!((r.accuracy - 0.6).abs() < 1e-12);
        let p = [3.0 / 5.0, 2.0 / 3.0, 1.0 / 2.0];
        let rc = [3.0 / 4.0, 2.0 / 3.0, 1.0 / 3.0];
        let f: Vec<f64> = (0..3).map(|i| 2.0 * p[i] * rc[i] / (p[i] + rc[i])).collect();
        assert!((r.precision - p.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!((r.recall - rc.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!((r.f1 - f.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        let rows: Vec<usize> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![4, 3, 3]);
    }

    #[test]
    fn absent_classes_are_left_out_of_macro_average() {
        let r = classification_report(&[Map, Filter, Join], &[0, 1], &[0, 1]);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn regression_basics() {
        let r = regression_report(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_eq!((r.mse, r.r2), (0.0, 1.0));
        let r = regression_report(&[4.0, 4.0], &[3.0, 5.0]);
        assert_eq!((r.mse, r.r2), (1.0, 0.0));
        assert_eq!(r.mse_scaled, 1e-5);
        let r = regression_report(&[0.0, 2.0], &[2.0, 0.0]);
        assert!(r.r2 < 0.0);
    }
}
