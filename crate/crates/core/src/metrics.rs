use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("macro-F1 of zero predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= n_classes || y >= n_classes {
            return Err(Error::InvalidConfig(format!("class index out of range for {n_classes} classes")));
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// Per-class F1, `None` for a class that appears in neither labels nor
/// predictions.
pub fn per_class_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Option<f64>>> {
    let m = confusion_matrix(predictions, labels, n_classes)?;
    Ok((0..n_classes)
        .map(|c| {
            let tp = m[c][c] as f64;
            let actual: usize = m[c].iter().sum();
            let predicted: usize = m.iter().map(|row| row[c]).sum();
            if actual == 0 && predicted == 0 {
                return None;
            }
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
            Some(if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            })
        })
        .collect())
}

/// Unweighted mean of per-class F1. Classes absent from both labels and
/// predictions are left out of the mean; a class that is predicted but
/// never present scores 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    let scores: Vec<f64> = per_class_f1(predictions, labels, n_classes)?.into_iter().flatten().collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Sample mean and sample standard deviation (n − 1; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn hand_cases() {
        assert_eq!(macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 5).unwrap(), 1.0);
        let v = macro_f1(&[0, 0, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert!((v - (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0).abs() < 1e-12);
        let v = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((v - (2.0 / 3.0) / 2.0).abs() < 1e-12);
        // class 2 predicted but absent from labels scores 0
        let v = macro_f1(&[0, 2], &[0, 1], 3).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        assert!(macro_f1(&[], &[], 2).is_err());
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_relabel_invariant(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
            perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let (p, y): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let f = macro_f1(&p, &y, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert_eq!(f == 1.0, p == y);
            let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
            let yy: Vec<usize> = y.iter().map(|&c| perm[c]).collect();
            prop_assert!((macro_f1(&pp, &yy, 4).unwrap() - f).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0; 25]).1, 0.0);
    }
}
