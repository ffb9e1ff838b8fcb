//! Central-difference verification of analytic gradients.

use serde::Serialize;

use super::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference half step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor so near-zero gradients are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.max_relative_error < self.tolerance)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(|p| p.max_relative_error >= self.tolerance)
    }
}

/// Compares `analytic[i]` against central differences of `loss` with respect
/// to every entry of `params[i]`.
pub fn check_gradients(
    params: &[(String, Tensor)],
    loss: impl Fn(&[Tensor]) -> f64,
    analytic: &[Tensor],
    cfg: GradCheckConfig,
) -> GradCheckReport {
    assert!(cfg.step > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter");

    let mut work: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut checks = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut worst = ParamCheck {
            name: name.clone(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..work[pi].len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + cfg.step;
            let plus = loss(&work);
            work[pi].data_mut()[j] = orig - cfg.step;
            let minus = loss(&work);
            work[pi].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[pi].data()[j];
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (a - numeric).abs() / denom;
            if rel > worst.max_relative_error || !rel.is_finite() {
                worst.max_relative_error = if rel.is_finite() { rel } else { f64::INFINITY };
                worst.worst_index = j;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        checks.push(worst);
    }
    GradCheckReport {
        tolerance: cfg.tolerance,
        params: checks,
    }
}
