use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for a list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![S::zero(); n], vec![S::zero(); n])).unzip();
        Self { config, m, v, t: 0 }
    }
}

/// One bias-corrected Adam update. Parameters are untouched when any gradient entry is
/// not finite.
pub fn adam_step<S: Scalar>(params: &mut [&mut [S]], grads: &[Vec<S>], state: &mut AdamState<S>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameter slices, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Shape(format!("parameter slice {i}: {} vs {}", p.len(), g.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::GradientExplosion);
        }
    }
    let c = state.config;
    state.t += 1;
    let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
    let (one, eps) = (S::one(), S::lit(c.eps));
    let bc1 = S::lit(1.0 - c.beta1.powf(state.t as f64));
    let bc2 = S::lit(1.0 - c.beta2.powf(state.t as f64));
    let lr = S::lit(c.lr);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = vec![0.3, -2.0];
        let mut s = AdamState::new(AdamConfig::default(), [2]);
        adam_step(&mut [&mut w[..]], &[vec![0.0, 0.0]], &mut s).unwrap();
        assert_eq!(w, vec![0.3, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut w = vec![0.0; 3];
        let g: Vec<f64> = vec![5.0, -0.01, 123.0];
        let mut s = AdamState::new(AdamConfig::default(), [3]);
        adam_step(&mut [&mut w[..]], &[g.clone()], &mut s).unwrap();
        for (wv, gv) in w.iter().zip(&g) {
            let expected = -1e-3 * gv / (gv.abs() + 1e-8);
            assert!((wv - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn minimizes_square() {
        let mut w = vec![1.0f64];
        let mut s = AdamState::new(AdamConfig::default(), [1]);
        let mut prev = 1.0;
        for _ in 0..100 {
            let g = vec![2.0 * w[0]];
            adam_step(&mut [&mut w[..]], &[g], &mut s).unwrap();
            assert!(w[0] * w[0] < prev);
            prev = w[0] * w[0];
        }
        assert!(w[0].abs() < 1.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut w = vec![1.0f64];
        let mut s = AdamState::new(AdamConfig::default(), [1]);
        let err = adam_step(&mut [&mut w[..]], &[vec![f64::NAN]], &mut s).unwrap_err();
        assert!(matches!(err, Error::GradientExplosion));
        assert_eq!(w, vec![1.0]);
        assert_eq!(s.t, 0);
    }
}
