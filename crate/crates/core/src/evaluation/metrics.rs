use crate::error::{Error, Result};
use crate::types::Label;

fn check_lengths(n_scores: usize, n_labels: usize) -> Result<()> {
    if n_scores == 0 {
        return Err(Error::Contract(
            "metrics need at least one prediction".into(),
        ));
    }
    if n_scores != n_labels {
        return Err(Error::Contract(format!(
            "{n_scores} predictions for {n_labels} labels"
        )));
    }
    Ok(())
}

/// Fraction of predictions on the right side of `threshold`
/// (`p >= threshold` predicts disease).
pub fn accuracy(preds: &[f64], labels: &[Label], threshold: f64) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, y)| (**p >= threshold) == y.is_positive())
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Area under the ROC curve via the Mann–Whitney rank statistic; tied
/// scores share their average rank, i.e. a tie counts one half.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("AUC of NaN scores".into()));
    }
    let n_pos = labels.iter().filter(|y| y.is_positive()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg
            * order[i..=j]
                .iter()
                .filter(|&&k| labels[k].is_positive())
                .count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Disease as P, Healthy as N};

    #[test]
    fn perfect_and_tied() {
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[P, P, N, N]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[P, N, P, N]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.9], &[P, N]).unwrap(), 0.0);
        assert!(matches!(
            auc(&[0.1, 0.2], &[P, P]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(auc(&[], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn accuracy_threshold() {
        assert_eq!(
            accuracy(&[0.5, 0.49, 0.8, 0.1], &[P, N, N, N], 0.5).unwrap(),
            0.75
        );
    }
}
