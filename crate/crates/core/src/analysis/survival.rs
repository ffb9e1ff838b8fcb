use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    #[serde(with = "crate::datamodel::event_flag")]
    pub event: bool,
    pub group: usize,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool, group: usize) -> Result<Self> {
        if !(time > 0.0 && time.is_finite()) {
            return Err(Error::Validation(format!("survival time must be positive, got {time}")));
        }
        Ok(SurvivalRecord { time, event, group })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmStep {
    pub time: f64,
    pub at_risk: usize,
    pub events: usize,
    pub survival: f64,
}

/// Product-limit curve. Steps sit at distinct event times only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeier {
    pub steps: Vec<KmStep>,
}

impl KaplanMeier {
    pub fn survival_at(&self, t: f64) -> f64 {
        self.steps
            .iter()
            .take_while(|s| s.time <= t)
            .last()
            .map_or(1.0, |s| s.survival)
    }
}

fn sorted_times(records: &[SurvivalRecord]) -> Vec<(f64, bool)> {
    let mut v: Vec<(f64, bool)> = records.iter().map(|r| (r.time, r.event)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

pub fn kaplan_meier(records: &[SurvivalRecord]) -> Result<KaplanMeier> {
    if records.is_empty() {
        return Err(Error::EmptyInput("Kaplan-Meier needs at least one record".into()));
    }
    let data = sorted_times(records);
    let mut steps = Vec::new();
    let mut s = 1.0;
    let mut i = 0;
    while i < data.len() {
        let t = data[i].0;
        let at_risk = data.len() - i;
        let mut events = 0;
        while i < data.len() && data[i].0 == t {
            events += usize::from(data[i].1);
            i += 1;
        }
        if events > 0 {
            s *= 1.0 - events as f64 / at_risk as f64;
            steps.push(KmStep {
                time: t,
                at_risk,
                events,
                survival: s,
            });
        }
    }
    Ok(KaplanMeier { steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRank {
    pub chi2: f64,
    pub p: f64,
    pub observed_b: f64,
    pub expected_b: f64,
    pub variance: f64,
}

pub(crate) fn chi2_1df_upper(chi2: f64) -> f64 {
    if chi2 <= 0.0 {
        1.0
    } else if chi2.is_infinite() {
        0.0
    } else {
        gamma_ur(0.5, chi2 / 2.0)
    }
}

/// Two-group log-rank test, accumulated from group B's side.
pub fn logrank_test(a: &[SurvivalRecord], b: &[SurvivalRecord]) -> Result<LogRank> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("log-rank needs two nonempty groups".into()));
    }
    let mut all: Vec<(f64, bool, bool)> = a
        .iter()
        .map(|r| (r.time, r.event, false))
        .chain(b.iter().map(|r| (r.time, r.event, true)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut n_a, mut n_b) = (a.len() as f64, b.len() as f64);
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        let (mut d_a, mut d_b, mut left_a, mut left_b) = (0.0, 0.0, 0.0, 0.0);
        while i < all.len() && all[i].0 == t {
            let (_, event, in_b) = all[i];
            if in_b {
                left_b += 1.0;
                d_b += f64::from(u8::from(event));
            } else {
                left_a += 1.0;
                d_a += f64::from(u8::from(event));
            }
            i += 1;
        }
        let d = d_a + d_b;
        if d > 0.0 {
            let n = n_a + n_b;
            observed += d_b;
            expected += d * n_b / n;
            if n > 1.0 {
                variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1.0);
            }
        }
        n_a -= left_a;
        n_b -= left_b;
    }
    if !all.iter().any(|r| r.1) {
        return Err(Error::UndefinedMetric("log-rank test needs at least one event".into()));
    }
    let chi2 = if variance > 0.0 {
        (observed - expected).powi(2) / variance
    } else {
        0.0
    };
    Ok(LogRank {
        chi2,
        p: chi2_1df_upper(chi2),
        observed_b: observed,
        expected_b: expected,
        variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: f64,
    pub se: f64,
    pub hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CoxOutcome {
    Estimate(CoxFit),
    /// The partial likelihood keeps rising as beta runs to +inf (`hr_infinite`)
    /// or -inf; no finite estimate exists.
    Monotone { hr_infinite: bool },
}

impl CoxOutcome {
    pub fn fit(&self) -> Option<&CoxFit> {
        match self {
            CoxOutcome::Estimate(f) => Some(f),
            CoxOutcome::Monotone { .. } => None,
        }
    }
}

/// Per distinct event time: (events with x=1, total events, at risk x=1, at risk total).
fn event_table(records: &[SurvivalRecord], exposed: &[bool]) -> Vec<(f64, f64, f64, f64)> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| records[a].time.total_cmp(&records[b].time));
    let mut risk1 = exposed.iter().filter(|&&e| e).count() as f64;
    let mut risk = records.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let t = records[idx[i]].time;
        let (mut d1, mut d, mut left1, mut left) = (0.0, 0.0, 0.0, 0.0);
        while i < idx.len() && records[idx[i]].time == t {
            let j = idx[i];
            let x = f64::from(u8::from(exposed[j]));
            if records[j].event {
                d += 1.0;
                d1 += x;
            }
            left += 1.0;
            left1 += x;
            i += 1;
        }
        if d > 0.0 {
            out.push((d1, d, risk1, risk));
        }
        risk -= left;
        risk1 -= left1;
    }
    out
}

/// Breslow log partial likelihood, score and information at `beta`.
fn breslow(table: &[(f64, f64, f64, f64)], beta: f64) -> (f64, f64, f64) {
    let (mut ll, mut grad, mut info) = (0.0, 0.0, 0.0);
    let eb = beta.exp();
    for &(d1, d, r1, r) in table {
        let s0 = (r - r1) + r1 * eb;
        let mean = r1 * eb / s0;
        ll += beta * d1 - d * s0.ln();
        grad += d1 - d * mean;
        info += d * mean * (1.0 - mean);
    }
    (ll, grad, info)
}

/// Single binary covariate Cox model, Breslow ties, Newton-Raphson with
/// step halving until |score| < 1e-10.
pub fn cox_hr_binary(records: &[SurvivalRecord], exposed: &[bool]) -> Result<CoxOutcome> {
    if records.len() != exposed.len() {
        return Err(Error::Dimension {
            op: "cox_hr_binary",
            left: vec![records.len()],
            right: vec![exposed.len()],
        });
    }
    let n1 = exposed.iter().filter(|&&e| e).count();
    if n1 == 0 || n1 == records.len() {
        return Err(Error::Degenerate("Cox model needs subjects in both groups".into()));
    }
    let table = event_table(records, exposed);
    if table.is_empty() {
        return Err(Error::UndefinedMetric("Cox model needs at least one event".into()));
    }
    // An event term is informative only when its risk set is mixed.
    let mixed: Vec<_> = table.iter().filter(|t| t.2 > 0.0 && t.2 < t.3).collect();
    if mixed.is_empty() {
        return Err(Error::Degenerate("no event time has both groups at risk".into()));
    }
    if mixed.iter().all(|t| t.0 == t.1) {
        return Ok(CoxOutcome::Monotone { hr_infinite: true });
    }
    if mixed.iter().all(|t| t.0 == 0.0) {
        return Ok(CoxOutcome::Monotone { hr_infinite: false });
    }

    let mut beta = 0.0;
    let (mut ll, mut grad, mut info) = breslow(&table, beta);
    let mut iterations = 0;
    while grad.abs() >= 1e-10 {
        if iterations == 100 {
            return Err(Error::NonConvergence(format!("Cox Newton stalled at beta={beta}, score={grad}")));
        }
        iterations += 1;
        let mut step = grad / info;
        loop {
            let cand = beta + step;
            let (ll_c, grad_c, info_c) = breslow(&table, cand);
            if ll_c >= ll - 1e-12 * ll.abs() || step.abs() < 1e-14 {
                beta = cand;
                (ll, grad, info) = (ll_c, grad_c, info_c);
                break;
            }
            step /= 2.0;
        }
    }
    let se = 1.0 / info.sqrt();
    let z = beta / se;
    Ok(CoxOutcome::Estimate(CoxFit {
        beta,
        se,
        hr: beta.exp(),
        ci_low: (beta - 1.96 * se).exp(),
        ci_high: (beta + 1.96 * se).exp(),
        p: erfc(z.abs() / std::f64::consts::SQRT_2),
        iterations,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn rec(time: f64, event: bool) -> SurvivalRecord {
        SurvivalRecord::new(time, event, 0).unwrap()
    }

    #[test]
    fn km_hand_example() {
        let km = kaplan_meier(&[rec(1.0, true), rec(2.0, true), rec(1.5, false), rec(3.0, false)]).unwrap();
        assert_eq!(km.steps.len(), 2);
        assert!((km.survival_at(1.0) - 0.75).abs() < 1e-15);
        assert!((km.survival_at(2.0) - 0.375).abs() < 1e-15);
        assert_eq!(km.survival_at(0.5), 1.0);
        assert_eq!(km.steps[1].at_risk, 2);
    }

    #[test]
    fn km_all_censored_and_single_event() {
        let km = kaplan_meier(&[rec(1.0, false), rec(2.0, false)]).unwrap();
        assert!(km.steps.is_empty());
        assert_eq!(km.survival_at(10.0), 1.0);
        let one = kaplan_meier(&[rec(4.0, true)]).unwrap();
        assert_eq!(one.survival_at(4.0), 0.0);
    }

    #[test]
    fn nonpositive_time_rejected() {
        assert!(SurvivalRecord::new(0.0, true, 0).is_err());
    }

    #[test]
    fn logrank_hand_table() {
        // A: 1e 3e 4c 6e 8c ; B: 2e 2e 3c 5e 7e
        let a = [rec(1.0, true), rec(3.0, true), rec(4.0, false), rec(6.0, true), rec(8.0, false)];
        let b = [rec(2.0, true), rec(2.0, true), rec(3.0, false), rec(5.0, true), rec(7.0, true)];
        // time, nA, nB, dA, dB
        let rows = [
            (1.0, 5.0, 5.0, 1.0, 0.0),
            (2.0, 4.0, 5.0, 0.0, 2.0),
            (3.0, 4.0, 3.0, 1.0, 0.0),
            (5.0, 2.0, 2.0, 0.0, 1.0),
            (6.0, 2.0, 1.0, 1.0, 0.0),
            (7.0, 1.0, 1.0, 0.0, 1.0),
        ];
        let (mut o, mut e, mut v) = (0.0, 0.0, 0.0);
        for (_, na, nb, da, db) in rows {
            let n: f64 = na + nb;
            let d: f64 = da + db;
            o += db;
            e += d * nb / n;
            v += d * na * nb * (n - d) / (n * n * (n - 1.0));
        }
        let lr = logrank_test(&a, &b).unwrap();
        assert!((lr.observed_b - o).abs() < 1e-12);
        assert!((lr.expected_b - e).abs() < 1e-12);
        assert!((lr.variance - v).abs() < 1e-12);
        assert!((lr.chi2 - (o - e) * (o - e) / v).abs() < 1e-10);
        let swapped = logrank_test(&b, &a).unwrap();
        assert!((swapped.chi2 - lr.chi2).abs() < 1e-12);
    }

    #[test]
    fn logrank_identical_groups() {
        let g = [rec(1.0, true), rec(2.0, false), rec(3.0, true)];
        let lr = logrank_test(&g, &g).unwrap();
        assert!(lr.chi2.abs() < 1e-15);
        assert_eq!(lr.p, 1.0);
    }

    #[test]
    fn logrank_without_events_is_undefined() {
        let g = [rec(1.0, false)];
        assert!(matches!(logrank_test(&g, &g), Err(Error::UndefinedMetric(_))));
    }

    fn simulate(n: usize, hr: f64, seed: u64, censor: Option<f64>) -> (Vec<SurvivalRecord>, Vec<bool>) {
        let mut rng = Rng::seed_from_u64(seed);
        let mut recs = Vec::with_capacity(n);
        let mut exposed = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.bernoulli(0.5);
            let t = rng.exponential(if x { 0.1 * hr } else { 0.1 });
            let (time, event) = match censor {
                Some(c) if t > c => (c, false),
                _ => (t, true),
            };
            recs.push(SurvivalRecord::new(time, event, usize::from(x)).unwrap());
            exposed.push(x);
        }
        (recs, exposed)
    }

    #[test]
    fn cox_null_simulation() {
        let mut ok = 0;
        for seed in 0..5 {
            let (r, x) = simulate(500, 1.0, seed, None);
            let fit = *cox_hr_binary(&r, &x).unwrap().fit().unwrap();
            if (0.7..=1.4).contains(&fit.hr) && fit.p > 0.05 {
                ok += 1;
            }
        }
        assert!(ok >= 4);
    }

    #[test]
    fn cox_planted_ratio() {
        let (r, x) = simulate(1000, 3.0, 11, None);
        let fit = *cox_hr_binary(&r, &x).unwrap().fit().unwrap();
        assert!((2.4..=3.75).contains(&fit.hr), "hr {}", fit.hr);
        assert!(fit.ci_low < fit.hr && fit.hr < fit.ci_high);
    }

    #[test]
    fn cox_label_swap_inverts() {
        let (r, x) = simulate(300, 2.0, 3, Some(8.0));
        let flipped: Vec<bool> = x.iter().map(|v| !v).collect();
        let a = *cox_hr_binary(&r, &x).unwrap().fit().unwrap();
        let b = *cox_hr_binary(&r, &flipped).unwrap().fit().unwrap();
        assert!((a.hr * b.hr - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cox_monotone_flagged() {
        let r = [rec(1.0, true), rec(2.0, true), rec(3.0, false), rec(4.0, false)];
        let out = cox_hr_binary(&r, &[true, true, false, false]).unwrap();
        assert_eq!(out, CoxOutcome::Monotone { hr_infinite: true });
        let out = cox_hr_binary(&r, &[false, false, true, true]).unwrap();
        assert_eq!(out, CoxOutcome::Monotone { hr_infinite: false });
    }

    #[test]
    fn cox_and_logrank_agree_in_direction() {
        for seed in 0..40 {
            let hr = [0.4, 0.8, 1.0, 1.5, 2.5][seed as usize % 5];
            let (r, x) = simulate(120, hr, 1000 + seed, Some(12.0));
            let a: Vec<_> = r.iter().zip(&x).filter(|p| !*p.1).map(|p| *p.0).collect();
            let b: Vec<_> = r.iter().zip(&x).filter(|p| *p.1).map(|p| *p.0).collect();
            let lr = logrank_test(&a, &b).unwrap();
            let fit = *cox_hr_binary(&r, &x).unwrap().fit().unwrap();
            if lr.p < 0.05 {
                assert_eq!(fit.hr > 1.0, lr.observed_b > lr.expected_b, "seed {seed}");
            }
        }
    }

    proptest! {
        #[test]
        fn km_is_nonincreasing_from_one(
            data in proptest::collection::vec((0.1f64..10.0, any::<bool>()), 1..40)
        ) {
            let recs: Vec<_> = data.iter().map(|&(t, e)| rec(t, e)).collect();
            let km = kaplan_meier(&recs).unwrap();
            let mut prev = 1.0;
            for s in &km.steps {
                prop_assert!(s.survival <= prev && s.survival >= 0.0);
                prop_assert!(s.events > 0);
                prev = s.survival;
            }
        }
    }
}
