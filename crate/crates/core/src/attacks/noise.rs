use rand::seq::SliceRandom;
use rand::Rng;

use super::AttackKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{self, BoxMuller};

/// One sample's fixed random draw, rescaled by the scale search.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    /// Gaussian (AGNA), uniform on (-1, 1) (AUNA) or uniform on (0, 1) (BUNA) values.
    pub values: Vec<f64>,
    /// Salt-and-pepper visiting order and values.
    pub order: Vec<usize>,
    pub salt: Vec<bool>,
}

impl NoiseDraw {
    pub fn new(kind: AttackKind, n: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut draw = NoiseDraw { values: Vec::new(), order: Vec::new(), salt: Vec::new() };
        match kind {
            AttackKind::Agna => {
                let mut g = BoxMuller::new(rng);
                draw.values = (0..n).map(|_| g.next_normal()).collect();
            }
            AttackKind::Auna => draw.values = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            AttackKind::Buna => draw.values = (0..n).map(|_| rng.gen::<f64>()).collect(),
            AttackKind::Spna => {
                draw.order = (0..n).collect();
                draw.order.shuffle(&mut rng);
                draw.salt = (0..n).map(|_| rng.gen::<bool>()).collect();
            }
            _ => {}
        }
        draw
    }
}

fn clip<S: Scalar>(v: f64) -> S {
    S::lit(v.clamp(0.0, 1.0))
}

/// Applies a noise-type perturbation at `scale`.
pub fn noise_perturb<S: Scalar>(x: &[S], kind: AttackKind, scale: f64, draw: &NoiseDraw) -> Result<Vec<S>> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale {scale} must be finite and nonnegative")));
    }
    if matches!(kind, AttackKind::Buna | AttackKind::Cra | AttackKind::Spna) && scale > 1.0 {
        return Err(Error::InvalidArgument(format!("{kind} scale {scale} exceeds 1")));
    }
    let need = |len: usize| -> Result<()> {
        if len != x.len() {
            return Err(Error::Shape(format!("noise draw of length {len} for input of {}", x.len())));
        }
        Ok(())
    };
    Ok(match kind {
        AttackKind::Agna | AttackKind::Auna => {
            need(draw.values.len())?;
            x.iter().zip(&draw.values).map(|(&v, &g)| clip(v.as_f64() + scale * g)).collect()
        }
        AttackKind::Buna => {
            need(draw.values.len())?;
            x.iter().zip(&draw.values).map(|(&v, &u)| clip((1.0 - scale) * v.as_f64() + scale * u)).collect()
        }
        AttackKind::Cra => {
            let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v.as_f64()), hi.max(v.as_f64()))
            });
            let m = 0.5 * (lo + hi);
            x.iter().map(|&v| clip((1.0 - scale) * v.as_f64() + scale * m)).collect()
        }
        AttackKind::Spna => {
            need(draw.order.len())?;
            let count = ((scale * x.len() as f64).round() as usize).min(x.len());
            let mut out = x.to_vec();
            for &i in &draw.order[..count] {
                out[i] = if draw.salt[i] { S::one() } else { S::zero() };
            }
            out
        }
        _ => return Err(Error::InvalidArgument(format!("{kind} is not a noise attack"))),
    })
}

/// Index into `0..n` under half-sample symmetric extension (`.. 1 0 | 0 1 .. n-1 | n-1 ..`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        period as usize - 1 - m
    }
}

/// Gaussian blur of each of the `rows` equal-length rows of `x` along time. The kernel
/// is truncated at three standard deviations and renormalized.
pub fn gaussian_blur<S: Scalar>(x: &[S], rows: usize, sigma: f64) -> Result<Vec<S>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be finite and nonnegative")));
    }
    if rows == 0 || x.len() % rows != 0 {
        return Err(Error::Shape(format!("{} values do not split into {rows} rows", x.len())));
    }
    if sigma == 0.0 {
        return Ok(x.to_vec());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    let n = x.len() / rows;
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(n) {
        for i in 0..n as isize {
            let mut acc = 0.0;
            for (w, k) in kernel.iter().zip(-radius..=radius) {
                acc += w * row[reflect(i + k, n)].as_f64();
            }
            out.push(S::lit(acc));
        }
    }
    Ok(out)
}
