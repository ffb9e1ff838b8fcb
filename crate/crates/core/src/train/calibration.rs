use serde::{Deserialize, Serialize};

use crate::datamodel::{anchor_count, Cohort};
use crate::error::{Error, Result};
use crate::numerics::sigmoid;

pub const LOGISTIC_TOLERANCE: f64 = 1e-10;
pub const LOGISTIC_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub slope: f64,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn predict(&self, x: f64) -> f64 {
        sigmoid(self.intercept + self.slope * x)
    }
}

fn log_likelihood(x: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let z = a + b * xi;
            // y z - log(1 + e^z), stable for either sign of z
            yi * z - (z.max(0.0) + (-z.abs()).exp().ln_1p())
        })
        .sum()
}

/// `y ~ sigmoid(a + b x)` by Newton-Raphson with step halving.
pub fn fit_logistic_1d(x: &[f64], y: &[bool]) -> Result<LogisticFit> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Contract("logistic fit needs equally long, nonempty inputs".into()));
    }
    let n_pos = y.iter().filter(|&&v| v).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(Error::Separation(format!(
            "gold labels are single-class ({n_pos} of {} positive)",
            y.len()
        )));
    }
    let prevalence = n_pos as f64 / y.len() as f64;
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if lo == hi {
        return Ok(LogisticFit {
            intercept: (prevalence / (1.0 - prevalence)).ln(),
            slope: 0.0,
            iterations: 0,
        });
    }
    let extreme = |want: bool, max: bool| {
        x.iter()
            .zip(y)
            .filter(|p| *p.1 == want)
            .map(|p| *p.0)
            .fold(if max { f64::NEG_INFINITY } else { f64::INFINITY }, |acc, v| {
                if max { acc.max(v) } else { acc.min(v) }
            })
    };
    if extreme(false, true) <= extreme(true, false) || extreme(true, true) <= extreme(false, false) {
        return Err(Error::Separation(
            "scores separate gold classes; the logistic slope diverges".into(),
        ));
    }

    let yf: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v))).collect();
    let (mut a, mut b) = ((prevalence / (1.0 - prevalence)).ln(), 0.0);
    let mut ll = log_likelihood(x, &yf, a, b);
    for iteration in 0..=LOGISTIC_MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(&yf) {
            let p = sigmoid(a + b * xi);
            let w = p * (1.0 - p);
            ga += yi - p;
            gb += (yi - p) * xi;
            haa += w;
            hab += w * xi;
            hbb += w * xi * xi;
        }
        if ga.hypot(gb) < LOGISTIC_TOLERANCE {
            return Ok(LogisticFit {
                intercept: a,
                slope: b,
                iterations: iteration,
            });
        }
        if iteration == LOGISTIC_MAX_ITER {
            break;
        }
        let det = haa * hbb - hab * hab;
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(det > 0.0) {
            return Err(Error::NonConvergence(format!(
                "singular logistic Hessian at a={a}, b={b} (iteration {iteration})"
            )));
        }
        let mut da = (hbb * ga - hab * gb) / det;
        let mut db = (haa * gb - hab * ga) / det;
        loop {
            let next = log_likelihood(x, &yf, a + da, b + db);
            // Near the optimum rounding noise in `ll` can exceed the true gain.
            if next >= ll - 1e-12 * ll.abs().max(1.0) || da.abs().max(db.abs()) < 1e-15 {
                a += da;
                b += db;
                ll = next;
                break;
            }
            da /= 2.0;
            db /= 2.0;
        }
    }
    Err(Error::NonConvergence(format!(
        "logistic fit stopped after {LOGISTIC_MAX_ITER} iterations at a={a}, b={b}"
    )))
}

/// `ln(1 + anchor count)` for every patient, the score calibration maps to
/// a probability.
pub fn count_scores(cohort: &Cohort) -> Vec<f64> {
    cohort
        .patients
        .iter()
        .map(|p| (anchor_count(p, &cohort.anchor) as f64).ln_1p())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub fit: LogisticFit,
    pub silver_indices: Vec<usize>,
    pub probabilities: Vec<f64>,
}

/// Fits the score-to-probability map on `gold` patients and applies it to
/// every silver patient. `scores` holds one entry per cohort patient.
pub fn calibrate_silver(cohort: &Cohort, scores: &[f64], gold: &[usize]) -> Result<Calibration> {
    if scores.len() != cohort.len() {
        return Err(Error::Dimension {
            op: "calibrate_silver",
            left: vec![scores.len()],
            right: vec![cohort.len()],
        });
    }
    if let Some(&i) = gold.iter().find(|&&i| !cohort.patients[i].is_gold()) {
        return Err(Error::Contract(format!("patient {i} in the calibration set is not gold")));
    }
    let x: Vec<f64> = gold.iter().map(|&i| scores[i]).collect();
    let y: Vec<bool> = gold.iter().map(|&i| cohort.patients[i].label.value >= 0.5).collect();
    let fit = fit_logistic_1d(&x, &y)?;
    let silver_indices = cohort.silver_indices();
    let probabilities = silver_indices.iter().map(|&i| fit.predict(scores[i])).collect();
    Ok(Calibration {
        fit,
        silver_indices,
        probabilities,
    })
}

impl Calibration {
    pub fn apply(&self, cohort: &mut Cohort) -> Result<()> {
        cohort.set_silver_labels(&self.silver_indices, &self.probabilities)
    }
}

/// Anchor count per patient, the ranking baseline.
pub fn count_baseline(cohort: &Cohort) -> Vec<f64> {
    cohort
        .patients
        .iter()
        .map(|p| anchor_count(p, &cohort.anchor) as f64)
        .collect()
}
