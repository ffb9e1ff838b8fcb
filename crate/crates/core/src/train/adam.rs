use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one tensor per parameter leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every leaf in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "Adam got {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let (pd, gd) = (p.data_mut(), g.data());
        for (((w, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            *w -= cfg.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g = Tensor::zeros(&[2]);
        let mut s = AdamState::new([&p]);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[&g], &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let g = Tensor::vector(vec![3.0, -0.01, 250.0]);
        let mut s = AdamState::new([&p]);
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut p], &[&g], &mut s, &cfg).unwrap();
        for (w, gi) in p.data().iter().zip(g.data()) {
            let expected = -cfg.learning_rate * gi.signum() * gi.abs() / (gi.abs() + cfg.eps);
            assert!((w - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn descends_convex_quadratic() {
        // f(x, y) = 3x^2 + 0.5y^2 + xy
        let f = |x: f64, y: f64| 3.0 * x * x + 0.5 * y * y + x * y;
        let mut p = Tensor::vector(vec![1.5, -2.0]);
        let start = f(1.5, -2.0);
        let mut s = AdamState::new([&p]);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        for _ in 0..100 {
            let (x, y) = (p.data()[0], p.data()[1]);
            let g = Tensor::vector(vec![6.0 * x + y, y + x]);
            adam_step(&mut [&mut p], &[&g], &mut s, &cfg).unwrap();
        }
        assert!(f(p.data()[0], p.data()[1]) < 1e-3 * start);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::vector(vec![0.0; 2]);
        let g = Tensor::vector(vec![0.0; 3]);
        let mut s = AdamState::new([&p]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut s, &AdamConfig::default()).is_err());
    }
}
