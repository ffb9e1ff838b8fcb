use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensitivity at which PPV is reported.
pub const PPV_SENSITIVITY: f64 = 0.85;

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("scores contain NaN".into()));
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives keeps midranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, midrank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Threshold and confusion counts where PPV is read off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub ppv: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

/// PPV at the largest threshold `t` such that calling `score >= t` positive
/// reaches `target` sensitivity. All scores tied at `t` are called positive.
pub fn ppv_at_sensitivity(scores: &[f64], labels: &[bool], target: f64) -> Result<OperatingPoint> {
    check_inputs(scores, labels)?;
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Config(format!("target sensitivity must lie in (0, 1], got {target}")));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("PPV needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let sensitivity = tp as f64 / n_pos as f64;
        // Tolerance absorbs the representation error of targets like 0.85.
        if sensitivity >= target - 1e-12 {
            return Ok(OperatingPoint {
                threshold,
                sensitivity,
                ppv: tp as f64 / (tp + fp) as f64,
                true_positives: tp,
                false_positives: fp,
            });
        }
    }
    unreachable!("the lowest threshold captures every positive")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n: usize,
    pub n_positive: usize,
    pub auc: f64,
    #[serde(rename = "ppv_at_0.85")]
    pub ppv: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub auc: f64,
    #[serde(rename = "ppv_at_0.85")]
    pub ppv: f64,
    pub per_fold: Vec<FoldMetrics>,
}

/// Per-fold AUC and PPV at 85% sensitivity, and their arithmetic means.
/// `folds[i]` holds scores on the fold that was not used for selection.
pub fn cross_validate(folds: &[FoldScores]) -> Result<CvReport> {
    if folds.is_empty() {
        return Err(Error::Contract("cross-validation needs at least one fold".into()));
    }
    let mut per_fold = Vec::with_capacity(folds.len());
    for (i, f) in folds.iter().enumerate() {
        let op = ppv_at_sensitivity(&f.scores, &f.labels, PPV_SENSITIVITY)?;
        per_fold.push(FoldMetrics {
            fold: i + 1,
            n: f.scores.len(),
            n_positive: f.labels.iter().filter(|&&y| y).count(),
            auc: auc(&f.scores, &f.labels)?,
            ppv: op.ppv,
            threshold: op.threshold,
        });
    }
    let k = per_fold.len() as f64;
    Ok(CvReport {
        auc: per_fold.iter().map(|m| m.auc).sum::<f64>() / k,
        ppv: per_fold.iter().map(|m| m.ppv).sum::<f64>() / k,
        per_fold,
    })
}
