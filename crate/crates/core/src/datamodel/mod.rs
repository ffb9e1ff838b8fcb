//! Patient records and cohorts.

mod io;
mod silver;
mod split;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_cohort, read_ground_truth, read_jsonl, read_records, save_cohort, write_ground_truth,
    write_jsonl, LoadReport,
};
pub use silver::{anchor_count, init_silver_by_count};
pub use split::{split_cohort, CohortSplit, SplitFractions};
pub use synthetic::{generate_synthetic_cohort, GroundTruth, SyntheticCohort, SyntheticSpec};

/// Ontology-prefixed concept identifier such as `PheCode:415.2`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Validation("concept id must be nonempty".into()));
        }
        Ok(ConceptId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ConceptId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ConceptId::new(s)
    }
}

impl From<ConceptId> for String {
    fn from(c: ConceptId) -> String {
        c.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One time window: `(concept, count)` events recorded in that period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t: u32,
    pub events: Vec<(ConceptId, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Gold,
    Silver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub source: LabelSource,
    pub value: f64,
}

impl Label {
    pub fn gold(positive: bool) -> Self {
        Label {
            source: LabelSource::Gold,
            value: if positive { 1.0 } else { 0.0 },
        }
    }

    pub fn silver(p: f64) -> Result<Self> {
        let label = Label {
            source: LabelSource::Silver,
            value: p,
        };
        label.validate()?;
        Ok(label)
    }

    pub fn is_gold(&self) -> bool {
        self.source == LabelSource::Gold
    }

    pub fn validate(&self) -> Result<()> {
        match self.source {
            LabelSource::Gold if self.value != 0.0 && self.value != 1.0 => Err(Error::Validation(
                format!("gold label must be 0 or 1, got {}", self.value),
            )),
            LabelSource::Silver if !(0.0..=1.0).contains(&self.value) => Err(Error::Validation(
                format!("silver label must lie in [0, 1], got {}", self.value),
            )),
            _ => Ok(()),
        }
    }
}

/// Follow-up for survival analysis: time to event or censoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Survival {
    pub time: f64,
    #[serde(with = "event_flag")]
    pub event: bool,
}

pub(crate) mod event_flag {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(event: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*event))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("event must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub windows: Vec<TimeWindow>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival: Option<Survival>,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<()> {
        if self.patient_id.is_empty() {
            return Err(Error::Validation("patient_id must be nonempty".into()));
        }
        if self.windows.is_empty() {
            return Err(Error::Validation(format!(
                "patient {} has no time windows",
                self.patient_id
            )));
        }
        for pair in self.windows.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::Validation(format!(
                    "patient {}: window indices must strictly increase ({} then {})",
                    self.patient_id, pair[0].t, pair[1].t
                )));
            }
        }
        for w in &self.windows {
            let mut seen = BTreeSet::new();
            for (c, n) in &w.events {
                if *n == 0 {
                    return Err(Error::Validation(format!(
                        "patient {}: count for {c} in window {} must be at least 1",
                        self.patient_id, w.t
                    )));
                }
                if !seen.insert(c) {
                    return Err(Error::Validation(format!(
                        "patient {}: duplicate concept {c} in window {}",
                        self.patient_id, w.t
                    )));
                }
            }
        }
        self.label.validate()?;
        if let Some(s) = &self.survival {
            if !(s.time.is_finite() && s.time > 0.0) {
                return Err(Error::Validation(format!(
                    "patient {}: survival time must be positive, got {}",
                    self.patient_id, s.time
                )));
            }
        }
        Ok(())
    }

    pub fn is_gold(&self) -> bool {
        self.label.is_gold()
    }
}

/// The high-risk cohort plus its anchor concept.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub anchor: ConceptId,
}

impl Cohort {
    pub fn new(patients: Vec<PatientRecord>, anchor: ConceptId) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for p in &patients {
            p.validate()?;
            if !ids.insert(p.patient_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate patient id {}",
                    p.patient_id
                )));
            }
        }
        Ok(Cohort { patients, anchor })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn gold_indices(&self) -> Vec<usize> {
        (0..self.patients.len())
            .filter(|&i| self.patients[i].is_gold())
            .collect()
    }

    pub fn silver_indices(&self) -> Vec<usize> {
        (0..self.patients.len())
            .filter(|&i| !self.patients[i].is_gold())
            .collect()
    }

    /// Order-sensitive checksum over every gold `(id, value)` pair.
    pub fn gold_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in self.patients.iter().filter(|p| p.is_gold()) {
            eat(p.patient_id.as_bytes());
            eat(&p.label.value.to_bits().to_le_bytes());
        }
        h
    }

    /// Overwrites silver label values. `values[i]` pairs with `indices[i]`;
    /// gold patients are rejected.
    pub fn set_silver_labels(&mut self, indices: &[usize], values: &[f64]) -> Result<()> {
        if indices.len() != values.len() {
            return Err(Error::Contract("one value per silver index".into()));
        }
        for (&i, &v) in indices.iter().zip(values) {
            let p = self
                .patients
                .get_mut(i)
                .ok_or_else(|| Error::Contract(format!("patient index {i} out of range")))?;
            if p.is_gold() {
                return Err(Error::Contract(format!(
                    "refusing to overwrite gold label of {}",
                    p.patient_id
                )));
            }
            p.label = Label::silver(v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(events: Vec<(&str, u32)>) -> PatientRecord {
        PatientRecord {
            patient_id: "p1".into(),
            windows: vec![TimeWindow {
                t: 0,
                events: events
                    .into_iter()
                    .map(|(c, n)| (ConceptId::new(c).unwrap(), n))
                    .collect(),
            }],
            label: Label::gold(true),
            survival: None,
        }
    }

    #[test]
    fn label_bounds() {
        assert!(Label::silver(0.3).is_ok());
        assert!(Label::silver(1.2).is_err());
        let bad_gold = Label {
            source: LabelSource::Gold,
            value: 0.5,
        };
        assert!(bad_gold.validate().is_err());
    }

    #[test]
    fn record_invariants() {
        assert!(record(vec![("A", 1), ("B", 2)]).validate().is_ok());
        assert!(record(vec![("A", 1), ("A", 2)]).validate().is_err());
        assert!(record(vec![("A", 0)]).validate().is_err());
        let mut r = record(vec![("A", 1)]);
        r.windows.push(TimeWindow { t: 0, events: vec![] });
        assert!(r.validate().is_err());
        r.windows.clear();
        assert!(r.validate().is_err());
    }

    #[test]
    fn concept_id_rejects_empty() {
        assert!(ConceptId::new("").is_err());
        assert!(serde_json::from_str::<ConceptId>("\"\"").is_err());
    }

    #[test]
    fn silver_update_never_touches_gold() {
        let mut silver = record(vec![("A", 1)]);
        silver.patient_id = "p2".into();
        silver.label = Label::silver(0.2).unwrap();
        let mut cohort = Cohort::new(
            vec![record(vec![("A", 1)]), silver],
            ConceptId::new("A").unwrap(),
        )
        .unwrap();
        let before = cohort.gold_checksum();
        assert!(cohort.set_silver_labels(&[0], &[0.4]).is_err());
        cohort.set_silver_labels(&[1], &[0.9]).unwrap();
        assert_eq!(cohort.patients[1].label.value, 0.9);
        assert_eq!(cohort.gold_checksum(), before);
    }
}
