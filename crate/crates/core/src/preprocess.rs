//! From patient records to model inputs: aggregation over a window range,
//! gold oversampling with temporal truncation, and feature selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{ConceptId, Label, PatientRecord, TimeWindow};
use crate::embeddings::{select_features, AggregatedConcepts, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Failed truncation draws tolerated before falling back to the full range.
pub const MAX_TRUNCATION_RESAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub concept: ConceptId,
    pub count: u64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub patient_id: String,
    pub tokens: Vec<Token>,
    pub label: Label,
}

/// Sums counts per concept over window positions `range` (1-based,
/// inclusive), or over every window when `range` is `None`.
pub fn aggregate_counts(
    windows: &[TimeWindow],
    range: Option<(usize, usize)>,
) -> Result<AggregatedConcepts> {
    let (start, end) = match range {
        None => (1, windows.len()),
        Some((s, e)) => {
            if s < 1 || s > e || e > windows.len() {
                return Err(Error::Bounds(format!(
                    "window range [{s}, {e}] outside 1..={}",
                    windows.len()
                )));
            }
            (s, e)
        }
    };
    let mut totals: BTreeMap<&ConceptId, u64> = BTreeMap::new();
    for w in windows.iter().take(end).skip(start - 1) {
        for (c, n) in &w.events {
            *totals.entry(c).or_default() += u64::from(*n);
        }
    }
    Ok(AggregatedConcepts {
        pairs: totals.into_iter().map(|(c, n)| (c.clone(), n)).collect(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// Two independent uniform positions, sorted.
    #[default]
    SortedPair,
    /// Uniform over all pairs `start <= end`.
    UniformPair,
}

pub fn truncate_window_range(n_windows: usize, rng: &mut Rng, mode: TruncationMode) -> (usize, usize) {
    assert!(n_windows >= 1, "cannot truncate an empty record");
    match mode {
        TruncationMode::SortedPair => {
            let a = rng.int_inclusive(1, n_windows);
            let b = rng.int_inclusive(1, n_windows);
            (a.min(b), a.max(b))
        }
        TruncationMode::UniformPair => {
            let mut k = rng.below(n_windows * (n_windows + 1) / 2);
            for start in 1..=n_windows {
                let span = n_windows - start + 1;
                if k < span {
                    return (start, start + k);
                }
                k -= span;
            }
            unreachable!("pair index within range")
        }
    }
}

/// One training instance: a patient index plus its replica number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instance {
    pub patient: usize,
    pub replica: usize,
}

/// Repeats every gold patient `r` times; silver patients appear once.
pub fn oversample_gold(records: &[PatientRecord], indices: &[usize], r: usize) -> Result<Vec<Instance>> {
    if r == 0 {
        return Err(Error::Config("oversampling factor must be at least 1".into()));
    }
    let mut out = Vec::new();
    for &i in indices {
        let copies = if records[i].is_gold() { r } else { 1 };
        out.extend((0..copies).map(|replica| Instance { patient: i, replica }));
    }
    Ok(out)
}

/// `max(1, round(n_silver / n_gold))`.
pub fn default_oversample_factor(n_silver: usize, n_gold: usize) -> usize {
    if n_gold == 0 {
        return 1;
    }
    ((n_silver as f64 / n_gold as f64).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Gold records get a random window range; silver records never do.
    TrainGold,
    Eval,
}

fn tokens_for(
    agg: &AggregatedConcepts,
    table: &EmbeddingTable,
    anchor: &ConceptId,
    k_star: usize,
) -> Result<Vec<Token>> {
    let selected = select_features(agg, table, anchor, k_star)?;
    Ok(selected
        .pairs
        .into_iter()
        .map(|(concept, count)| {
            let vector = table.get(&concept).expect("selection keeps known concepts").to_vec();
            Token {
                concept,
                count,
                vector,
            }
        })
        .collect())
}

pub fn build_input(
    record: &PatientRecord,
    table: &EmbeddingTable,
    anchor: &ConceptId,
    k_star: usize,
    mode: InputMode,
    truncation: TruncationMode,
    rng: &mut Rng,
) -> Result<ModelInput> {
    if record.windows.is_empty() {
        return Err(Error::EmptyInput(format!("patient {} has no windows", record.patient_id)));
    }
    let make = |tokens| ModelInput {
        patient_id: record.patient_id.clone(),
        tokens,
        label: record.label,
    };
    if mode == InputMode::TrainGold && record.is_gold() {
        for _ in 0..MAX_TRUNCATION_RESAMPLES {
            let range = truncate_window_range(record.windows.len(), rng, truncation);
            let tokens = tokens_for(&aggregate_counts(&record.windows, Some(range))?, table, anchor, k_star)?;
            if !tokens.is_empty() {
                return Ok(make(tokens));
            }
        }
    }
    let tokens = tokens_for(&aggregate_counts(&record.windows, None)?, table, anchor, k_star)?;
    if tokens.is_empty() {
        return Err(Error::EmptyInput(format!(
            "patient {} has no concepts with embedding vectors",
            record.patient_id
        )));
    }
    Ok(make(tokens))
}
