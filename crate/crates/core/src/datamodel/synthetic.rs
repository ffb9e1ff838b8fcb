//! Synthetic cohorts with planted ground truth.
//!
//! Concept vocabulary:
//!
//! - the anchor, whose per-window count rises with the latent phenotype;
//! - `n_informative` disease concepts (`PheCode:{416+i}.1`), present more
//!   often and with higher counts among positives, with vectors close to the
//!   anchor's (cosine 0.75 to 0.9);
//! - two profiles of `n_profile` concepts (`CUI:C9xxxxxx` severe,
//!   `CUI:C8xxxxxx` mild) that mark the severity subgroup of a positive,
//!   built around opposite directions orthogonal to the anchor;
//! - background concepts (`CUI:C0xxxxxx`) with anchor cosine in [-0.3, 0.3].
//!
//! Survival times are exponential with rate `base_hazard * hazard_ratio` for
//! severe positives, `base_hazard` for mild positives and half of it for
//! negatives, censored at `censor_time`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{event_flag, Cohort, ConceptId, Label, PatientRecord, Survival, TimeWindow};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_gold: usize,
    pub n_silver: usize,
    pub prevalence: f64,
    pub vocab_size: usize,
    pub d_input: usize,
    pub silver_noise: f64,
    pub signal_strength: f64,
    pub seed: u64,
    pub n_informative: usize,
    pub n_profile: usize,
    /// Per-window probability of each own-subgroup profile concept.
    pub profile_rate: f64,
    /// Weight of the severe/mild axis in profile concept vectors.
    pub profile_separation: f64,
    /// Mean background concept draws per window.
    pub background_rate: f64,
    /// Fraction of positives in the severe subgroup.
    pub severe_fraction: f64,
    pub min_windows: usize,
    pub max_windows: usize,
    pub base_hazard: f64,
    pub hazard_ratio: f64,
    pub censor_time: f64,
    pub anchor: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_gold: 200,
            n_silver: 2000,
            prevalence: 0.3,
            vocab_size: 64,
            d_input: 16,
            silver_noise: 0.3,
            signal_strength: 2.0,
            seed: 0,
            n_informative: 8,
            n_profile: 4,
            profile_rate: 0.7,
            profile_separation: 0.55,
            background_rate: 3.0,
            severe_fraction: 0.5,
            min_windows: 3,
            max_windows: 8,
            base_hazard: 0.2,
            hazard_ratio: 3.0,
            censor_time: 20.0,
            anchor: "PheCode:415.2".into(),
        }
    }
}

impl SyntheticSpec {
    fn n_background(&self) -> usize {
        self.vocab_size
            .saturating_sub(1 + self.n_informative + 2 * self.n_profile)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {x}")))
            }
        };
        unit("prevalence", self.prevalence)?;
        unit("silver_noise", self.silver_noise)?;
        unit("severe_fraction", self.severe_fraction)?;
        unit("profile_rate", self.profile_rate)?;
        if !(self.profile_separation.is_finite() && self.profile_separation >= 0.0) {
            return Err(Error::Config(format!(
                "profile_separation must be nonnegative, got {}",
                self.profile_separation
            )));
        }
        if !(self.background_rate.is_finite() && self.background_rate >= 0.0) {
            return Err(Error::Config(format!(
                "background_rate must be nonnegative, got {}",
                self.background_rate
            )));
        }
        if self.n_gold == 0 || self.n_silver == 0 {
            return Err(Error::Config("n_gold and n_silver must be positive".into()));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return Err(Error::Config(format!(
                "signal_strength must be a nonnegative real, got {}",
                self.signal_strength
            )));
        }
        if self.d_input < 4 {
            return Err(Error::Config("d_input must be at least 4".into()));
        }
        if self.n_background() == 0 {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no background concepts",
                self.vocab_size
            )));
        }
        if self.min_windows == 0 || self.min_windows > self.max_windows {
            return Err(Error::Config(format!(
                "window range [{}, {}] is invalid",
                self.min_windows, self.max_windows
            )));
        }
        for (name, x) in [
            ("base_hazard", self.base_hazard),
            ("hazard_ratio", self.hazard_ratio),
            ("censor_time", self.censor_time),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {x}")));
            }
        }
        ConceptId::new(self.anchor.clone()).map_err(|_| Error::Config("anchor must be nonempty".into()))?;
        Ok(())
    }
}

/// One row of the ground-truth sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub patient_id: String,
    #[serde(with = "event_flag")]
    pub truth: bool,
    /// Set for severe positives only.
    #[serde(with = "event_flag")]
    pub severity_group: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub table: EmbeddingTable,
    /// In cohort order.
    pub truth: Vec<GroundTruth>,
}

struct Vocabulary {
    anchor: ConceptId,
    informative: Vec<ConceptId>,
    severe: Vec<ConceptId>,
    mild: Vec<ConceptId>,
    background: Vec<ConceptId>,
}

fn vocabulary(spec: &SyntheticSpec) -> Result<Vocabulary> {
    let ids = |f: &dyn Fn(usize) -> String, n: usize| -> Result<Vec<ConceptId>> {
        (0..n).map(|i| ConceptId::new(f(i))).collect()
    };
    Ok(Vocabulary {
        anchor: ConceptId::new(spec.anchor.clone())?,
        informative: ids(&|i| format!("PheCode:{}.1", 416 + i), spec.n_informative)?,
        severe: ids(&|i| format!("CUI:C9{i:06}"), spec.n_profile)?,
        mild: ids(&|i| format!("CUI:C8{i:06}"), spec.n_profile)?,
        background: ids(&|i| format!("CUI:C0{i:06}"), spec.n_background())?,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Random unit vector orthogonal to every (unit) vector in `basis`.
fn orthogonal_unit(rng: &mut Rng, dim: usize, basis: &[&[f64]]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for b in basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b.iter()).for_each(|(x, y)| *x -= c * y);
        }
        if dot(&v, &v) > 1e-6 {
            normalize(&mut v);
            return v;
        }
    }
}

fn combine(terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut v = vec![0.0; terms[0].1.len()];
    for (c, t) in terms {
        v.iter_mut().zip(t.iter()).for_each(|(x, y)| *x += c * y);
    }
    v
}

fn embedding_table(spec: &SyntheticSpec, vocab: &Vocabulary, mut rng: Rng) -> Result<EmbeddingTable> {
    let d = spec.d_input;
    let anchor = orthogonal_unit(&mut rng, d, &[]);
    let profile_axis = orthogonal_unit(&mut rng, d, &[&anchor]);
    let mut rows = vec![(vocab.anchor.clone(), anchor.clone())];

    let at_cosine = |rng: &mut Rng, cos: f64| {
        let u = orthogonal_unit(rng, d, &[&anchor]);
        combine(&[(cos, &anchor), ((1.0 - cos * cos).sqrt(), &u)])
    };
    for id in &vocab.informative {
        let cos = rng.uniform_range(0.75, 0.9);
        rows.push((id.clone(), at_cosine(&mut rng, cos)));
    }
    for (ids, sign) in [(&vocab.severe, 1.0), (&vocab.mild, -1.0)] {
        for id in ids {
            let u = orthogonal_unit(&mut rng, d, &[&anchor, &profile_axis]);
            let mut v = combine(&[(0.65, &anchor), (spec.profile_separation * sign, &profile_axis), (0.35, &u)]);
            normalize(&mut v);
            rows.push((id.clone(), v));
        }
    }
    for id in &vocab.background {
        let cos = rng.uniform_range(-0.3, 0.3);
        rows.push((id.clone(), at_cosine(&mut rng, cos)));
    }
    EmbeddingTable::from_rows(d, rows)
}

fn patient(
    spec: &SyntheticSpec,
    vocab: &Vocabulary,
    index: usize,
    mut rng: Rng,
) -> Result<(PatientRecord, GroundTruth)> {
    let positive = rng.bernoulli(spec.prevalence);
    let severe = positive && rng.bernoulli(spec.severe_fraction);
    let n_windows = rng.int_inclusive(spec.min_windows, spec.max_windows);
    let utilization = (0.6 * rng.normal()).exp();
    let signal = if positive { spec.signal_strength } else { 0.0 };
    let anchor_rate = 0.35 * utilization * (1.0 + 0.5 * signal);
    let multiplier = 1.0 + signal;
    let informative_p = (0.12 * multiplier).min(0.9);

    let mut windows = Vec::with_capacity(n_windows);
    for t in 1..=n_windows {
        let mut events: BTreeMap<ConceptId, u32> = BTreeMap::new();
        let anchor = rng.poisson(anchor_rate);
        if anchor > 0 {
            events.insert(vocab.anchor.clone(), anchor);
        }
        for c in &vocab.informative {
            if rng.bernoulli(informative_p) {
                events.insert(c.clone(), 1 + rng.poisson(0.5 * multiplier));
            }
        }
        for (severe_profile, ids) in [(true, &vocab.severe), (false, &vocab.mild)] {
            let p = if positive && severe_profile == severe { spec.profile_rate } else { 0.03 };
            for c in ids {
                if rng.bernoulli(p) {
                    events.insert(c.clone(), 1 + rng.poisson(1.0));
                }
            }
        }
        let n_background = rng.poisson(spec.background_rate).max(1) as usize;
        for _ in 0..n_background {
            let c = &vocab.background[rng.below(vocab.background.len())];
            *events.entry(c.clone()).or_insert(0) += 1 + rng.poisson(1.0);
        }
        windows.push(TimeWindow {
            t: t as u32,
            events: events.into_iter().collect(),
        });
    }

    let rate = spec.base_hazard
        * if severe {
            spec.hazard_ratio
        } else if positive {
            1.0
        } else {
            0.5
        };
    let event_time = rng.exponential(rate).max(1e-9);
    let survival = Survival {
        time: event_time.min(spec.censor_time),
        event: event_time < spec.censor_time,
    };

    let patient_id = format!("P{index:06}");
    let flipped = rng.bernoulli(spec.silver_noise);
    let label = if index < spec.n_gold {
        Label::gold(positive)
    } else {
        Label::silver(if positive != flipped { 1.0 } else { 0.0 })?
    };
    let record = PatientRecord {
        patient_id: patient_id.clone(),
        windows,
        label,
        survival: Some(survival),
    };
    let truth = GroundTruth {
        patient_id,
        truth: positive,
        severity_group: severe,
    };
    Ok((record, truth))
}

/// Deterministic in `spec`: the first `n_gold` patients are gold, the rest
/// silver.
pub fn generate_synthetic_cohort(spec: &SyntheticSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let root = Rng::seed_from_u64(spec.seed);
    let vocab = vocabulary(spec)?;
    let table = embedding_table(spec, &vocab, root.fork("embeddings"))?;

    let n = spec.n_gold + spec.n_silver;
    let mut patients = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let (record, t) = patient(spec, &vocab, i, root.fork_index("patient", i as u64))?;
        patients.push(record);
        truth.push(t);
    }
    let cohort = Cohort::new(patients, vocab.anchor)?;
    Ok(SyntheticCohort {
        cohort,
        table,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::auc;
    use crate::datamodel::anchor_count;
    use crate::embeddings::cosine_similarity;

    fn spec(n_gold: usize, n_silver: usize) -> SyntheticSpec {
        SyntheticSpec {
            n_gold,
            n_silver,
            seed: 11,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn noiseless_silver_equals_truth() {
        let s = SyntheticSpec {
            silver_noise: 0.0,
            ..spec(20, 200)
        };
        let out = generate_synthetic_cohort(&s).unwrap();
        for (p, t) in out.cohort.patients.iter().zip(&out.truth) {
            assert_eq!(p.label.value, if t.truth { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn full_prevalence_is_all_positive() {
        let s = SyntheticSpec {
            prevalence: 1.0,
            ..spec(10, 90)
        };
        let out = generate_synthetic_cohort(&s).unwrap();
        assert!(out.truth.iter().all(|t| t.truth));
        assert!(out.cohort.patients[..10].iter().all(|p| p.label.value == 1.0));
    }

    #[test]
    fn no_signal_means_uninformative_anchor() {
        let s = SyntheticSpec {
            signal_strength: 0.0,
            ..spec(200, 1800)
        };
        let out = generate_synthetic_cohort(&s).unwrap();
        let scores: Vec<f64> = out
            .cohort
            .patients
            .iter()
            .map(|p| anchor_count(p, &out.cohort.anchor) as f64)
            .collect();
        let labels: Vec<bool> = out.truth.iter().map(|t| t.truth).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.05, "auc {a}");
    }

    #[test]
    fn signal_raises_anchor_counts() {
        let out = generate_synthetic_cohort(&spec(100, 900)).unwrap();
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (p, t) in out.cohort.patients.iter().zip(&out.truth) {
            let c = anchor_count(p, &out.cohort.anchor) as f64;
            if t.truth {
                pos.push(c)
            } else {
                neg.push(c)
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&pos) > mean(&neg));
    }

    #[test]
    fn generation_is_a_pure_function_of_spec() {
        let a = generate_synthetic_cohort(&spec(10, 40)).unwrap();
        let b = generate_synthetic_cohort(&spec(10, 40)).unwrap();
        assert_eq!(a.cohort, b.cohort);
        assert_eq!(a.table, b.table);
        assert_eq!(a.truth, b.truth);
        let c = generate_synthetic_cohort(&SyntheticSpec { seed: 12, ..spec(10, 40) }).unwrap();
        assert_ne!(a.cohort, c.cohort);
    }

    #[test]
    fn informative_vectors_sit_closer_to_anchor() {
        let s = spec(5, 5);
        let out = generate_synthetic_cohort(&s).unwrap();
        let anchor = out.table.get(&out.cohort.anchor).unwrap();
        let mut min_informative: f64 = 1.0;
        let mut max_background: f64 = -1.0;
        for (id, v) in out.table.iter() {
            let cos = cosine_similarity(v, anchor).unwrap();
            if id.as_str().starts_with("PheCode:4") && id != &out.cohort.anchor {
                min_informative = min_informative.min(cos);
            } else if id.as_str().starts_with("CUI:C0") {
                max_background = max_background.max(cos);
            }
        }
        assert!(min_informative >= 0.75 - 1e-12);
        assert!(max_background <= 0.3 + 1e-12);
        assert_eq!(out.table.len(), s.vocab_size);
    }

    #[test]
    fn sidecar_serializes_flags_as_integers() {
        let row = GroundTruth {
            patient_id: "P000001".into(),
            truth: true,
            severity_group: false,
        };
        let json = serde_json::to_string(&row).unwrap();
        assert_eq!(json, r#"{"patient_id":"P000001","truth":1,"severity_group":0}"#);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_synthetic_cohort(&SyntheticSpec { prevalence: 1.5, ..spec(5, 5) }).is_err());
        assert!(generate_synthetic_cohort(&SyntheticSpec { n_gold: 0, ..spec(5, 5) }).is_err());
        assert!(generate_synthetic_cohort(&SyntheticSpec { vocab_size: 10, ..spec(5, 5) }).is_err());
    }
}
