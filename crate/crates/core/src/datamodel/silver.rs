use super::{Cohort, ConceptId, Label, PatientRecord};
use crate::error::{Error, Result};

/// Total occurrences of `anchor` across every window of `record`.
pub fn anchor_count(record: &PatientRecord, anchor: &ConceptId) -> u64 {
    record
        .windows
        .iter()
        .flat_map(|w| w.events.iter())
        .filter(|(c, _)| c == anchor)
        .map(|(_, n)| u64::from(*n))
        .sum()
}

/// Sets every silver label to 1 when the anchor count reaches `threshold`
/// (inclusive) and to 0 otherwise. Gold labels are left alone.
pub fn init_silver_by_count(cohort: &mut Cohort, threshold: u64) -> Result<()> {
    if threshold == 0 {
        return Err(Error::Config("silver count threshold must be at least 1".into()));
    }
    let anchor = cohort.anchor.clone();
    for p in cohort.patients.iter_mut().filter(|p| !p.is_gold()) {
        let hit = anchor_count(p, &anchor) >= threshold;
        p.label = Label::silver(if hit { 1.0 } else { 0.0 })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{generate_synthetic_cohort, SyntheticSpec, TimeWindow};

    fn silver_with_anchor(count: u32) -> PatientRecord {
        let events = if count > 0 {
            vec![(ConceptId::new("A").unwrap(), count)]
        } else {
            vec![(ConceptId::new("B").unwrap(), 1)]
        };
        PatientRecord {
            patient_id: format!("p{count}"),
            windows: vec![TimeWindow { t: 1, events }],
            label: Label::silver(0.5).unwrap(),
            survival: None,
        }
    }

    #[test]
    fn threshold_boundaries() {
        let mut cohort = Cohort::new(
            vec![silver_with_anchor(0), silver_with_anchor(3)],
            ConceptId::new("A").unwrap(),
        )
        .unwrap();
        init_silver_by_count(&mut cohort, 1).unwrap();
        assert_eq!(cohort.patients[0].label.value, 0.0);
        init_silver_by_count(&mut cohort, 3).unwrap();
        assert_eq!(cohort.patients[1].label.value, 1.0);
        assert!(init_silver_by_count(&mut cohort, 0).is_err());
    }

    #[test]
    fn matches_independent_recount() {
        let spec = SyntheticSpec {
            n_gold: 10,
            n_silver: 50,
            seed: 17,
            ..SyntheticSpec::default()
        };
        let mut cohort = generate_synthetic_cohort(&spec).unwrap().cohort;
        let gold_before = cohort.gold_checksum();
        init_silver_by_count(&mut cohort, 3).unwrap();
        for p in cohort.patients.iter().filter(|p| !p.is_gold()) {
            let mut recount = 0u64;
            for w in &p.windows {
                for (c, n) in &w.events {
                    if c.as_str() == cohort.anchor.as_str() {
                        recount += u64::from(*n);
                    }
                }
            }
            let expected = if recount >= 3 { 1.0 } else { 0.0 };
            assert_eq!(p.label.value, expected, "{}", p.patient_id);
        }
        assert_eq!(cohort.gold_checksum(), gold_before);
    }
}
