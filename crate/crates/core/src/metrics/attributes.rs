//! Label-based and example-based attribute metrics.

use super::{MetricsError, Result};

/// Thresholded multi-label predictions: `probabilities` and `labels` are
/// row-major `[n, m]`.
#[derive(Debug, Clone)]
pub struct AttributePredictions {
    pub n: usize,
    pub m: usize,
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
    pub threshold: f64,
}

impl AttributePredictions {
    pub fn new(
        n: usize,
        m: usize,
        probabilities: Vec<f64>,
        labels: Vec<u8>,
        threshold: f64,
    ) -> Result<Self> {
        if probabilities.len() != n * m || labels.len() != n * m {
            return Err(MetricsError::Usage(format!(
                "expected {} values, got {} probabilities / {} labels",
                n * m,
                probabilities.len(),
                labels.len()
            )));
        }
        if probabilities.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(MetricsError::Usage("probabilities must lie in [0,1]".into()));
        }
        if labels.iter().any(|&b| b > 1) {
            return Err(MetricsError::Usage("labels must be 0/1".into()));
        }
        Ok(AttributePredictions {
            n,
            m,
            probabilities,
            labels,
            threshold,
        })
    }

    fn predicted(&self, i: usize, j: usize) -> bool {
        self.probabilities[i * self.m + j] >= self.threshold
    }

    fn label(&self, i: usize, j: usize) -> bool {
        self.labels[i * self.m + j] == 1
    }
}

/// Mean accuracy: average of TP/P and TN/N over attributes. Attributes
/// lacking positives (or negatives) in the labels contribute only their
/// defined half-term; the average is over defined half-terms so perfect
/// predictions still score 1.
pub fn mean_accuracy(preds: &AttributePredictions) -> Result<f64> {
    if preds.n == 0 || preds.m == 0 {
        return Err(MetricsError::Usage("mean_accuracy needs a nonempty matrix".into()));
    }
    let mut sum = 0.0;
    let mut terms = 0usize;
    for j in 0..preds.m {
        let (mut p, mut np, mut tp, mut tn) = (0usize, 0usize, 0usize, 0usize);
        for i in 0..preds.n {
            let (y, f) = (preds.label(i, j), preds.predicted(i, j));
            if y {
                p += 1;
                tp += f as usize;
            } else {
                np += 1;
                tn += !f as usize;
            }
        }
        if p > 0 {
            sum += tp as f64 / p as f64;
            terms += 1;
        } else {
            eprintln!("warning: attribute {j} has no positives; skipping its TP half-term");
        }
        if np > 0 {
            sum += tn as f64 / np as f64;
            terms += 1;
        } else {
            eprintln!("warning: attribute {j} has no negatives; skipping its TN half-term");
        }
    }
    Ok(sum / terms as f64)
}

/// Example-based (per-sample set) accuracy, precision, recall and F1.
/// Empty-set conventions: an empty prediction scores precision 1 only
/// against an empty label set (0 otherwise), symmetrically for recall;
/// an empty union counts as accuracy 1; F1 is 0 when prec = rec = 0.
pub fn instance_metrics(preds: &AttributePredictions) -> (f64, f64, f64, f64) {
    if preds.n == 0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let (mut acc, mut prec, mut rec) = (0.0, 0.0, 0.0);
    for i in 0..preds.n {
        let (mut inter, mut ny, mut nf) = (0usize, 0usize, 0usize);
        for j in 0..preds.m {
            let (y, f) = (preds.label(i, j), preds.predicted(i, j));
            ny += y as usize;
            nf += f as usize;
            inter += (y && f) as usize;
        }
        let union = ny + nf - inter;
        acc += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        prec += if nf == 0 {
            (ny == 0) as usize as f64
        } else {
            inter as f64 / nf as f64
        };
        rec += if ny == 0 {
            (nf == 0) as usize as f64
        } else {
            inter as f64 / ny as f64
        };
    }
    let n = preds.n as f64;
    let (acc, prec, rec) = (acc / n, prec / n, rec / n);
    let f1 = if prec + rec == 0.0 {
        0.0
    } else {
        2.0 * prec * rec / (prec + rec)
    };
    (acc, prec, rec, f1)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// labels [[1,0],[1,1],[0,0]], predictions [[1,0],[0,1],[0,1]]
    fn fixture() -> AttributePredictions {
        AttributePredictions::new(
            3,
            2,
            vec![0.9, 0.1, 0.2, 0.8, 0.3, 0.7],
            vec![1, 0, 1, 1, 0, 0],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn mean_accuracy_fixture_is_three_quarters() {
        assert!((mean_accuracy(&fixture()).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_flipped_predictions() {
        let labels = vec![1u8, 0, 0, 1];
        let perfect: Vec<f64> = labels.iter().map(|&b| b as f64).collect();
        let p = AttributePredictions::new(2, 2, perfect.clone(), labels.clone(), 0.5).unwrap();
        assert_eq!(mean_accuracy(&p).unwrap(), 1.0);
        let (a, pr, re, f1) = instance_metrics(&p);
        assert_eq!((a, pr, re, f1), (1.0, 1.0, 1.0, 1.0));
        let flipped: Vec<f64> = labels.iter().map(|&b| 1.0 - b as f64).collect();
        let p = AttributePredictions::new(2, 2, flipped, labels, 0.5).unwrap();
        assert_eq!(mean_accuracy(&p).unwrap(), 0.0);
    }

    #[test]
    fn instance_fixture_values() {
        let (acc, prec, rec, f1) = instance_metrics(&fixture());
        assert!((acc - 0.5).abs() < 1e-12);
        assert!((prec - 2.0 / 3.0).abs() < 1e-12);
        assert!((rec - 0.5).abs() < 1e-12);
        assert!((f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_f1_is_zero() {
        // all labels positive, no predictions: prec=rec=0
        let p = AttributePredictions::new(1, 2, vec![0.0, 0.0], vec![1, 1], 0.5).unwrap();
        let (_, prec, rec, f1) = instance_metrics(&p);
        assert_eq!((prec, rec, f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_input_is_usage_error() {
        let p = AttributePredictions::new(0, 2, vec![], vec![], 0.5).unwrap();
        assert!(matches!(mean_accuracy(&p), Err(MetricsError::Usage(_))));
    }

    #[test]
    fn single_sided_attribute_contributes_half_term() {
        // one attribute, all labels positive, predicted perfectly
        let p = AttributePredictions::new(2, 1, vec![1.0, 1.0], vec![1, 1], 0.5).unwrap();
        assert_eq!(mean_accuracy(&p).unwrap(), 1.0);
    }
}
