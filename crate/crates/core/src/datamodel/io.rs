//! Line-delimited JSON cohort files and the ground-truth sidecar.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{Cohort, ConceptId, GroundTruth, PatientRecord};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

/// What [`load_cohort`] discarded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    /// Events dropped per concept missing from the embedding table.
    pub dropped: BTreeMap<ConceptId, usize>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item)
            .map_err(|e| Error::Validation(format!("serialization failed: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one JSON value per nonblank line, reporting 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

/// Reads and validates records without consulting an embedding table.
pub fn read_records(path: &Path) -> Result<Vec<PatientRecord>> {
    let mut ids = BTreeSet::new();
    let mut out = Vec::new();
    for (line, record) in read_jsonl::<PatientRecord>(path)? {
        record.validate().map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if !ids.insert(record.patient_id.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate patient id {}", record.patient_id),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Loads a cohort, dropping events whose concept has no pre-trained vector.
pub fn load_cohort(
    path: &Path,
    table: &EmbeddingTable,
    anchor: &ConceptId,
) -> Result<(Cohort, LoadReport)> {
    if !table.contains(anchor) {
        return Err(Error::Config(format!(
            "anchor concept {anchor} is missing from the embedding table"
        )));
    }
    let mut records = read_records(path)?;
    let mut report = LoadReport::default();
    for record in &mut records {
        for window in &mut record.windows {
            window.events.retain(|(c, _)| {
                let known = table.contains(c);
                if !known {
                    *report.dropped.entry(c.clone()).or_default() += 1;
                }
                known
            });
        }
    }
    for (concept, n) in &report.dropped {
        log::warn!("dropped {n} events for concept {concept} (no embedding vector)");
    }
    let cohort = Cohort {
        patients: records,
        anchor: anchor.clone(),
    };
    Ok((cohort, report))
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    write_jsonl(path, &cohort.patients)
}

pub fn write_ground_truth(path: &Path, truth: &[GroundTruth]) -> Result<()> {
    write_jsonl(path, truth)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, t)| t).collect())
}
