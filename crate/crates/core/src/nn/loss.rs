use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Softmax of `logits / temperature`, shifted by the maximum logit.
pub fn softmax_t<S: Scalar>(logits: &[S], temperature: f64) -> Result<Vec<S>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    Ok(softmax_unchecked(logits, S::lit(temperature)))
}

pub(crate) fn softmax_unchecked<S: Scalar>(logits: &[S], t: S) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let mut p: Vec<S> = logits.iter().map(|&z| ((z - max) / t).exp()).collect();
    let sum: S = p.iter().copied().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

const P_FLOOR: f64 = 1e-12;

/// `-ln p[label]`, with `p` floored at 1e-12.
pub fn cross_entropy<S: Scalar>(probabilities: &[S], label: usize) -> Result<S> {
    let p = probabilities.get(label).ok_or_else(|| {
        Error::InvalidArgument(format!("label {label} out of range for {} classes", probabilities.len()))
    })?;
    Ok(-p.max(S::lit(P_FLOOR)).ln())
}

/// Cross-entropy against a target distribution `q`.
pub fn soft_cross_entropy<S: Scalar>(probabilities: &[S], q: &[S]) -> Result<S> {
    if probabilities.len() != q.len() {
        return Err(Error::Shape(format!("{} probabilities, {} targets", probabilities.len(), q.len())));
    }
    let floor = S::lit(P_FLOOR);
    Ok(probabilities.iter().zip(q).map(|(&p, &qv)| -qv * p.max(floor).ln()).sum())
}

/// A training target: a class index or a distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub enum Target<S> {
    Hard(usize),
    Soft(Vec<S>),
}

impl<S: Scalar> Target<S> {
    pub fn label(&self) -> usize {
        match self {
            Target::Hard(l) => *l,
            Target::Soft(q) => crate::scalar::argmax(q),
        }
    }

    /// Loss of `softmax(z / t)` against the target and its gradient `(p - q) / t`
    /// with respect to the logits `z`.
    pub fn loss_and_grad(&self, logits: &[S], t: S) -> Result<(S, Vec<S>)> {
        let p = softmax_unchecked(logits, t);
        let loss = match self {
            Target::Hard(l) => cross_entropy(&p, *l)?,
            Target::Soft(q) => soft_cross_entropy(&p, q)?,
        };
        let mut g = p;
        match self {
            Target::Hard(l) => g[*l] -= S::one(),
            Target::Soft(q) => g.iter_mut().zip(q).for_each(|(gv, &qv)| *gv -= qv),
        }
        g.iter_mut().for_each(|v| *v /= t);
        Ok((loss, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_t(&[0.0, 0.0], 3.0).unwrap(), vec![0.5, 0.5]);
        let p = softmax_t(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax_t(&[10.0, 0.0], 1e6).unwrap();
        assert!(p.iter().all(|v| (v - 0.5f64).abs() < 1e-5));
        assert!(softmax_t(&[1.0], 0.0).is_err());
        assert!(softmax_t(&[1.0], -1.0).is_err());
    }

    #[test]
    fn softmax_shift_invariant() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 17.0).collect();
        let a = softmax_t(&z, 1.0).unwrap();
        let b = softmax_t(&shifted, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((cross_entropy(&[1.0 / e, 1.0 - 1.0 / e], 0).unwrap() - 1.0).abs() < 1e-15);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
        assert!((cross_entropy(&[0.0, 1.0], 0).unwrap() - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let z: Vec<f64> = vec![0.4, -0.7, 1.3];
        for (target, t) in [(Target::Hard(1), 1.0), (Target::Soft(vec![0.2, 0.5, 0.3]), 4.0)] {
            let (_, g) = target.loss_and_grad(&z, t).unwrap();
            for i in 0..z.len() {
                let h = 1e-6;
                let mut zp = z.clone();
                zp[i] += h;
                let mut zm = z.clone();
                zm[i] -= h;
                let fd = (target.loss_and_grad(&zp, t).unwrap().0 - target.loss_and_grad(&zm, t).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
            }
        }
    }
}
