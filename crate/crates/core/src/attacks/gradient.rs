use super::{AttackParams, Crafted};
use crate::classifiers::Differentiable;
use crate::error::{Error, Result};
use crate::nn::softmax_t;
use crate::scalar::{argmax, Scalar};

/// A positive multiple of `∂loss/∂z` for cross-entropy on `label` at temperature `t`:
/// the softmax over the other logits, and -1 at `label`. Unlike `p - onehot`, it does not
/// underflow to zero when the model is very confident.
pub fn loss_direction<S: Scalar>(z: &[S], label: usize, t: f64) -> Vec<S> {
    let max = z
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, v)| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(j, v)| if j == label { 0.0 } else { ((v.as_f64() - max) / t).exp() })
        .collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    }
    out[label] = -1.0;
    out.into_iter().map(S::lit).collect()
}

/// Logits at `x` and the direction of steepest loss increase for `label`.
pub fn loss_gradient<S: Scalar>(
    model: &dyn Differentiable<S>,
    x: &[S],
    label: usize,
) -> Result<(Vec<S>, Vec<S>)> {
    let t = model.temperature();
    let (z, mut g) = model.logits_vjp(x, &mut |z| vec![loss_direction(z, label, t)])?;
    Ok((z, g.pop().expect("one cotangent")))
}

fn clip<S: Scalar>(v: S) -> S {
    v.max(S::zero()).min(S::one())
}

/// `clip(x + eps * sign(grad))`, with `sign(0) = 0`.
pub fn fgsm_step<S: Scalar>(x: &[S], grad: &[S], eps: f64) -> Vec<S> {
    let e = S::lit(eps);
    x.iter()
        .zip(grad)
        .map(|(&v, &g)| {
            let s = if g > S::zero() {
                S::one()
            } else if g < S::zero() {
                -S::one()
            } else {
                S::zero()
            };
            clip(v + e * s)
        })
        .collect()
}

/// `clip(x + eps * grad / max|grad|)`; a zero gradient leaves `x` unchanged.
pub fn gradient_step<S: Scalar>(x: &[S], grad: &[S], eps: f64) -> Vec<S> {
    let m = grad.iter().fold(0.0f64, |m, g| m.max(g.as_f64().abs()));
    if m == 0.0 {
        return x.to_vec();
    }
    x.iter().zip(grad).map(|(&v, &g)| clip(v + S::lit(eps * g.as_f64() / m))).collect()
}

/// Positive saliency of each coordinate for raising `target`: with `a = ∂z_target/∂x_i`
/// and `b = Σ_{j≠target} ∂z_j/∂x_i`, `a·|b|` where `a > 0` and `b < 0`, else 0.
/// Also returns the logits at `x`.
pub fn compute_saliency<S: Scalar>(
    model: &dyn Differentiable<S>,
    x: &[S],
    target: usize,
) -> Result<(Vec<S>, Vec<f64>)> {
    let (z, g) = model.logits_vjp(x, &mut |z| {
        let a: Vec<S> = (0..z.len()).map(|j| if j == target { S::one() } else { S::zero() }).collect();
        let b: Vec<S> = (0..z.len()).map(|j| if j == target { S::zero() } else { S::one() }).collect();
        vec![a, b]
    })?;
    if target >= z.len() {
        return Err(Error::InvalidArgument(format!("target {target} out of range")));
    }
    let s = g[0]
        .iter()
        .zip(&g[1])
        .map(|(&a, &b)| {
            let (a, b) = (a.as_f64(), b.as_f64());
            if a > 0.0 && b < 0.0 {
                a * b.abs()
            } else {
                0.0
            }
        })
        .collect();
    Ok((z, s))
}

pub(super) fn sma<S: Scalar>(
    model: &dyn Differentiable<S>,
    x: &[S],
    true_label: usize,
    target: usize,
    params: &AttackParams,
) -> Result<(Crafted<S>, Vec<S>)> {
    let n = x.len();
    let budget = params.sma_budget(n);
    let theta = S::lit(params.sma_theta);
    let t = model.temperature();
    let mut cur = x.to_vec();
    let mut touched = vec![false; n];
    let mut queries = 0;
    let mut modified = 0;
    let mut first = None;
    loop {
        let (z, s) = compute_saliency(model, &cur, target)?;
        queries += 1;
        let probs = softmax_t(&z, t)?;
        let success = argmax(&z) != true_label;
        let first = first.get_or_insert_with(|| probs.clone()).clone();
        let pick = (0..n)
            .filter(|&i| !touched[i] && cur[i] < S::one() && s[i] > 0.0)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if s[b] >= s[i] => Some(b),
                _ => Some(i),
            });
        if success || modified == budget || pick.is_none() {
            let target = Some(target);
            return Ok((Crafted { x_adv: cur, probs, success, target, scale: modified as f64, queries }, first));
        }
        let i = pick.expect("checked");
        cur[i] = clip(cur[i] + theta);
        touched[i] = true;
        modified += 1;
    }
}

/// Objective evaluations of one L-BFGS run.
struct Objective<'a, S> {
    model: &'a dyn Differentiable<S>,
    x: &'a [S],
    true_label: usize,
    target: usize,
    c: f64,
    evals: usize,
    limit: usize,
}

struct Eval<S> {
    f: f64,
    grad: Vec<f64>,
    probs: Vec<S>,
    adversarial: bool,
}

impl<S: Scalar> Objective<'_, S> {
    fn eval(&mut self, y: &[f64]) -> Result<Eval<S>> {
        self.evals += 1;
        let ys: Vec<S> = y.iter().map(|&v| S::lit(v)).collect();
        let t = self.model.temperature();
        let target = self.target;
        let mut ce = 0.0;
        let (z, g) = self.model.logits_vjp(&ys, &mut |z| {
            let zt: Vec<f64> = z.iter().map(|v| v.as_f64() / t).collect();
            let m = zt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + zt.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            ce = lse - zt[target];
            let cot: Vec<S> = zt
                .iter()
                .enumerate()
                .map(|(j, v)| S::lit(((v - lse).exp() - f64::from(u8::from(j == target))) / t))
                .collect();
            vec![cot]
        })?;
        let mut dist = 0.0;
        let grad: Vec<f64> = y
            .iter()
            .zip(self.x)
            .zip(&g[0])
            .map(|((&yv, &xv), &gv)| {
                let d = yv - xv.as_f64();
                dist += d * d;
                2.0 * self.c * d + gv.as_f64()
            })
            .collect();
        Ok(Eval {
            f: self.c * dist + ce,
            grad,
            probs: softmax_t(&z, t)?,
            adversarial: argmax(&z) != self.true_label,
        })
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.limit
    }
}

fn project(y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One projected L-BFGS descent from `x` on `c·‖y - x‖² + CE(y, target)`, stopped at the
/// first misclassified iterate. The crossing is then located by bisection on the last step.
fn lbfgs_run<S: Scalar>(obj: &mut Objective<'_, S>, params: &AttackParams) -> Result<Option<(Vec<f64>, Vec<S>)>> {
    let x: Vec<f64> = obj.x.iter().map(|v| v.as_f64()).collect();
    let mut y = x.clone();
    let mut cur = obj.eval(&y)?;
    if cur.adversarial {
        return Ok(Some((y, cur.probs)));
    }
    let m = params.lbfgs_memory;
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    while !obj.exhausted() {
        if !cur.f.is_finite() {
            return Ok(None);
        }
        // Two-loop recursion.
        let mut q = cur.grad.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, yk, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(yk).for_each(|(qv, yv)| *qv -= a * yv);
            alphas.push(a);
        }
        if let Some((s, yk, _)) = hist.last() {
            let gamma = dot(s, yk) / dot(yk, yk);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, yk, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yk, &q);
            q.iter_mut().zip(s).for_each(|(qv, sv)| *qv += (a - b) * sv);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mask = |d: &mut [f64], y: &[f64]| {
            for (dv, &yv) in d.iter_mut().zip(y) {
                if (yv <= 0.0 && *dv < 0.0) || (yv >= 1.0 && *dv > 0.0) {
                    *dv = 0.0;
                }
            }
        };
        mask(&mut d, &y);
        if dot(&d, &cur.grad) >= 0.0 {
            hist.clear();
            d = cur.grad.iter().map(|v| -v).collect();
            mask(&mut d, &y);
        }
        let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if dmax == 0.0 {
            return Ok(None);
        }
        let mut step = if hist.is_empty() { params.lbfgs_first_step / dmax } else { 1.0 };
        let mut accepted = None;
        while !obj.exhausted() {
            let mut trial: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            project(&mut trial);
            let e = obj.eval(&trial)?;
            if e.adversarial {
                return refine(obj, &y, trial, e.probs, params).map(Some);
            }
            let moved: Vec<f64> = trial.iter().zip(&y).map(|(a, b)| a - b).collect();
            if e.f.is_finite() && e.f <= cur.f + 1e-4 * dot(&cur.grad, &moved) {
                accepted = Some((trial, e));
                break;
            }
            step *= 0.5;
        }
        let Some((next, e)) = accepted else { break };
        let s: Vec<f64> = next.iter().zip(&y).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = e.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yk);
        if sy > 1e-12 {
            if hist.len() == m {
                hist.remove(0);
            }
            hist.push((s, yk, 1.0 / sy));
        }
        y = next;
        cur = e;
    }
    Ok(None)
}

/// Bisects the segment from `good` (correctly classified) to `bad` (misclassified).
fn refine<S: Scalar>(
    obj: &mut Objective<'_, S>,
    good: &[f64],
    mut bad: Vec<f64>,
    mut probs: Vec<S>,
    params: &AttackParams,
) -> Result<(Vec<f64>, Vec<S>)> {
    let mut lo = good.to_vec();
    for _ in 0..params.lbfgs_refine_steps {
        let mid: Vec<f64> = lo.iter().zip(&bad).map(|(a, b)| 0.5 * (a + b)).collect();
        let e = obj.eval(&mid)?;
        if e.adversarial {
            bad = mid;
            probs = e.probs;
        } else {
            lo = mid;
        }
    }
    Ok((bad, probs))
}

pub(super) fn lbfgs<S: Scalar>(
    model: &dyn Differentiable<S>,
    x: &[S],
    true_label: usize,
    target: usize,
    params: &AttackParams,
) -> Result<Crafted<S>> {
    let mut queries = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<S>, f64)> = None;
    let run = |c: f64, queries: &mut usize, best: &mut Option<(f64, Vec<f64>, Vec<S>, f64)>| -> Result<bool> {
        let mut obj =
            Objective { model, x, true_label, target, c, evals: 0, limit: params.lbfgs_max_evals };
        let found = lbfgs_run(&mut obj, params)?;
        *queries += obj.evals;
        let Some((y, probs)) = found else { return Ok(false) };
        let dist: f64 = y.iter().zip(x).map(|(a, b)| (a - b.as_f64()).powi(2)).sum();
        if best.as_ref().map_or(true, |b| dist < b.0) {
            *best = Some((dist, y, probs, c));
        }
        Ok(true)
    };
    // Bracket the largest successful c by factors of ten, then bisect in log space.
    let mut c = params.lbfgs_c_init;
    let (mut lo, mut hi);
    if run(c, &mut queries, &mut best)? {
        lo = c;
        hi = f64::NAN;
        for _ in 0..params.lbfgs_c_expansions {
            c *= 10.0;
            if run(c, &mut queries, &mut best)? {
                lo = c;
            } else {
                hi = c;
                break;
            }
        }
    } else {
        hi = c;
        lo = f64::NAN;
        for _ in 0..params.lbfgs_c_expansions {
            c /= 10.0;
            if run(c, &mut queries, &mut best)? {
                lo = c;
                break;
            }
            hi = c;
        }
    }
    if lo.is_finite() && hi.is_finite() {
        for _ in 0..params.lbfgs_c_bisections {
            let mid = (lo * hi).sqrt();
            if run(mid, &mut queries, &mut best)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    match best {
        Some((_, y, probs, c)) => Ok(Crafted {
            x_adv: y.into_iter().map(S::lit).collect(),
            probs,
            success: true,
            target: Some(target),
            scale: c,
            queries,
        }),
        None => {
            let (z, _) = model.logits_vjp(x, &mut |_| Vec::new())?;
            Ok(Crafted {
                x_adv: x.to_vec(),
                probs: softmax_t(&z, model.temperature())?,
                success: false,
                target: Some(target),
                scale: c,
                queries: queries + 1,
            })
        }
    }
}
