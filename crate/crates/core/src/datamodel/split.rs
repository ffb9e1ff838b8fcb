//! Stratified gold split into a training part and two evaluation folds.
//!
//! Part sizes are fixed globally by largest-remainder rounding. Gold
//! patients are shuffled within each label stratum, laid out stratum by
//! stratum, and dealt to parts along an evenly interleaved label sequence,
//! so every stratum is spread across parts in proportion (within one).

use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub fold1: f64,
    pub fold2: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            fold1: 0.1,
            fold2: 0.1,
        }
    }
}

impl SplitFractions {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.fold1, self.fold2]
    }
}

/// Patient indices into the cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub gold_train: Vec<usize>,
    pub folds: [Vec<usize>; 2],
    pub silver: Vec<usize>,
}

impl CohortSplit {
    /// Gold evaluation fold, 1-based.
    pub fn fold(&self, fold: usize) -> &[usize] {
        &self.folds[fold - 1]
    }

    /// The fold not used for validation, 1-based.
    pub fn other_fold(&self, fold: usize) -> &[usize] {
        &self.folds[2 - fold]
    }

    pub fn gold_test(&self) -> Vec<usize> {
        self.folds.concat()
    }
}

pub fn split_cohort(cohort: &Cohort, fractions: SplitFractions, seed: u64) -> Result<CohortSplit> {
    let fr = fractions.as_array();
    if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got {fr:?}"
        )));
    }
    let gold = cohort.gold_indices();
    if gold.is_empty() {
        return Err(Error::Config("cannot split: no gold patients".into()));
    }
    let n = gold.len();
    let targets = largest_remainder(n, &fr);

    let mut rng = Rng::seed_from_u64(seed);
    let mut strata: Vec<(u8, Vec<usize>)> = Vec::new();
    for value in [0u8, 1u8] {
        let mut members: Vec<usize> = gold
            .iter()
            .copied()
            .filter(|&i| cohort.patients[i].label.value == f64::from(value))
            .collect();
        if members.is_empty() {
            continue;
        }
        rng.shuffle(&mut members);
        strata.push((value, members));
    }

    let deal = interleave(n, &targets);
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut pos = 0;
    for (value, members) in &strata {
        let mut seen = [0usize; 3];
        for &idx in members {
            parts[deal[pos]].push(idx);
            seen[deal[pos]] += 1;
            pos += 1;
        }
        if let Some(empty) = seen.iter().position(|&c| c == 0) {
            return Err(Error::Stratification(format!(
                "gold stratum with label {value} has {} patients, too few to populate {}",
                members.len(),
                ["the training part", "fold 1", "fold 2"][empty]
            )));
        }
    }

    let [gold_train, fold1, fold2] = parts;
    Ok(CohortSplit {
        gold_train,
        folds: [fold1, fold2],
        silver: cohort.silver_indices(),
    })
}

fn largest_remainder(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let ideal: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut out = [0usize; 3];
    for (o, x) in out.iter_mut().zip(&ideal) {
        *o = x.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - out.iter().sum::<usize>();
    for &p in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[p] += 1;
        left -= 1;
    }
    out
}

/// Sequence of part labels with exact `targets` counts, each prefix as close
/// to proportional as possible (largest running deficit first).
fn interleave(n: usize, targets: &[usize; 3]) -> Vec<usize> {
    let mut assigned = [0usize; 3];
    let mut seq = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = None;
        let mut best_deficit = f64::NEG_INFINITY;
        for p in 0..3 {
            if assigned[p] == targets[p] {
                continue;
            }
            let deficit = targets[p] as f64 * (i + 1) as f64 / n as f64 - assigned[p] as f64;
            if deficit > best_deficit + 1e-12 {
                best_deficit = deficit;
                best = Some(p);
            }
        }
        let p = best.expect("targets sum to n");
        assigned[p] += 1;
        seq.push(p);
    }
    seq
}
