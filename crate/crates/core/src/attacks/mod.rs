//! Adversarial perturbations that move a trace off its true label.
//!
//! Every attack works in normalized space and keeps the result inside the `[0, 1]` box.
//! Success means the top-1 label differs from the true label. SMA and LBFGSA steer
//! towards a random other class, but stop at the first label change.

mod eval;
mod gradient;
mod noise;
mod search;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::Classifier;
use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};
use crate::seed;
use crate::trace::{distance_slices, Distances, Trace};

pub use eval::{
    adversarial_set, attack_indices, correct_indices, correct_per_class, evaluate_attack, write_results_csv, AttackSummary,
    SampleOutcome, RESULTS_HEADER,
};
pub use gradient::{compute_saliency, fgsm_step, gradient_step, loss_direction, loss_gradient};
pub use noise::{gaussian_blur, noise_perturb, NoiseDraw};
pub use search::{scale_search, ScaleSearch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    Agna,
    Auna,
    Buna,
    Cra,
    Ga,
    Gba,
    Gsa,
    Lbfgsa,
    Sma,
    Spna,
}

impl AttackKind {
    pub const ALL: [AttackKind; 10] = [
        AttackKind::Agna,
        AttackKind::Auna,
        AttackKind::Buna,
        AttackKind::Cra,
        AttackKind::Ga,
        AttackKind::Gba,
        AttackKind::Gsa,
        AttackKind::Lbfgsa,
        AttackKind::Sma,
        AttackKind::Spna,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Agna => "AGNA",
            AttackKind::Auna => "AUNA",
            AttackKind::Buna => "BUNA",
            AttackKind::Cra => "CRA",
            AttackKind::Ga => "GA",
            AttackKind::Gba => "GBA",
            AttackKind::Gsa => "GSA",
            AttackKind::Lbfgsa => "LBFGSA",
            AttackKind::Sma => "SMA",
            AttackKind::Spna => "SPNA",
        }
    }

    pub fn needs_gradients(self) -> bool {
        matches!(self, AttackKind::Ga | AttackKind::Gsa | AttackKind::Lbfgsa | AttackKind::Sma)
    }

    /// Largest meaningful scale: blends and fractions stop at 1.
    pub fn max_scale(self) -> f64 {
        match self {
            AttackKind::Buna | AttackKind::Cra | AttackKind::Spna => 1.0,
            _ => f64::INFINITY,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attack '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    pub max_scale_doublings: u32,
    pub bisection_steps: u32,
    pub eps_min: f64,
    pub sma_theta: f64,
    /// Fraction of coordinates SMA may modify.
    pub sma_max_features: f64,
    pub lbfgs_c_bisections: u32,
    pub lbfgs_c_init: f64,
    /// Factor-of-ten steps allowed while bracketing c.
    pub lbfgs_c_expansions: u32,
    /// Objective evaluations per optimizer run.
    pub lbfgs_max_evals: usize,
    pub lbfgs_memory: usize,
    /// Largest coordinate change of the first, gradient-only step.
    pub lbfgs_first_step: f64,
    pub lbfgs_refine_steps: u32,
    pub seed: u64,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            max_scale_doublings: 20,
            bisection_steps: 10,
            eps_min: 1e-4,
            sma_theta: 0.1,
            sma_max_features: 0.05,
            lbfgs_c_bisections: 8,
            lbfgs_c_init: 10.0,
            lbfgs_c_expansions: 4,
            lbfgs_max_evals: 30,
            lbfgs_memory: 10,
            lbfgs_first_step: 0.05,
            lbfgs_refine_steps: 6,
            seed: 0,
        }
    }
}

impl AttackParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.eps_min,
            self.sma_theta,
            self.sma_max_features,
            self.lbfgs_c_init,
            self.lbfgs_first_step,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("attack parameters must be positive".into()));
        }
        if self.sma_max_features > 1.0 {
            return Err(Error::InvalidArgument("sma_max_features is a fraction in (0, 1]".into()));
        }
        if self.max_scale_doublings == 0
            || self.bisection_steps == 0
            || self.lbfgs_c_bisections == 0
            || self.lbfgs_max_evals == 0
            || self.lbfgs_memory == 0
        {
            return Err(Error::InvalidArgument("attack step counts must be positive".into()));
        }
        Ok(())
    }

    /// Coordinates SMA may modify for an input of `n` values.
    pub fn sma_budget(&self, n: usize) -> usize {
        ((self.sma_max_features * n as f64).floor() as usize).max(1)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialResult<S = f64> {
    pub kind: AttackKind,
    pub x_adv: Trace<S>,
    pub delta: Vec<S>,
    pub distances: Distances<S>,
    pub success: bool,
    pub orig_label: usize,
    pub adv_label: usize,
    /// Internal target class of SMA and LBFGSA.
    pub target: Option<usize>,
    /// Model confidence in its prediction for the original trace.
    pub orig_confidence: f64,
    /// Model confidence in `adv_label`.
    pub adv_confidence: f64,
    /// Final search parameter: noise scale, eps, sigma, modified coordinates or c.
    pub scale: f64,
    pub queries: usize,
}

/// What a per-kind procedure hands back to [`craft`].
pub(crate) struct Crafted<S> {
    x_adv: Vec<S>,
    probs: Vec<S>,
    success: bool,
    target: Option<usize>,
    scale: f64,
    queries: usize,
}

const NOISE_STREAM: u64 = 0x6e6f_6973;
const TARGET_STREAM: u64 = 0x7461_7267;

/// Random class other than `true_label`, fixed by the sample seed.
pub fn random_target(n_classes: usize, true_label: usize, seed: u64) -> Result<usize> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument("targeted attacks need at least two classes".into()));
    }
    let t = seed::rng(seed::mix(seed, TARGET_STREAM)).gen_range(0..n_classes - 1);
    Ok(if t >= true_label { t + 1 } else { t })
}

/// Runs the scale search of a one-parameter perturbation, keeping the best attempt.
fn search_kind<S: Scalar, M: Classifier<S> + ?Sized>(
    model: &M,
    true_label: usize,
    params: &AttackParams,
    max_scale: f64,
    perturb: impl Fn(f64) -> Result<Vec<S>>,
) -> Result<Crafted<S>> {
    let mut best: Option<(f64, Vec<S>, Vec<S>)> = None;
    let mut largest_fail: Option<(f64, Vec<S>, Vec<S>)> = None;
    let r = scale_search(params, max_scale, |s| {
        let y = perturb(s)?;
        let p = model.predict_proba(&y)?;
        let ok = argmax(&p) != true_label;
        if ok {
            if best.as_ref().map_or(true, |b| s < b.0) {
                best = Some((s, y, p));
            }
        } else if largest_fail.as_ref().map_or(true, |b| s > b.0) {
            largest_fail = Some((s, y, p));
        }
        Ok(ok)
    })?;
    let (scale, x_adv, probs) = if r.success { best } else { largest_fail }.expect("at least one probe");
    Ok(Crafted { x_adv, probs, success: r.success, target: None, scale, queries: r.probes })
}

/// Crafts a perturbation of `x` (normalized) that moves `model` off `true_label`.
/// `params.seed` is the per-sample seed; it fixes the noise draw and the target class.
pub fn craft<S: Scalar, M: Classifier<S> + ?Sized>(
    model: &M,
    x: &Trace<S>,
    true_label: usize,
    kind: AttackKind,
    params: &AttackParams,
) -> Result<AdversarialResult<S>> {
    params.validate()?;
    if !x.is_normalized() {
        return Err(Error::InvalidArgument("attacks work on normalized traces".into()));
    }
    let xs = x.values();
    if xs.len() != model.input_len() {
        return Err(Error::Shape(format!("trace of {} values for a model over {}", xs.len(), model.input_len())));
    }
    if true_label >= model.n_classes() {
        return Err(Error::InvalidArgument(format!("label {true_label} out of range")));
    }
    let grad_model = model.differentiable();
    if kind.needs_gradients() && grad_model.is_none() {
        return Err(Error::RequiresGradients);
    }
    // SMA's first saliency pass classifies x itself, so it needs no separate query.
    let (crafted, orig_confidence) = if kind == AttackKind::Sma {
        let target = random_target(model.n_classes(), true_label, params.seed)?;
        let (c, p0) = gradient::sma(grad_model.expect("checked"), xs, true_label, target, params)?;
        (c, p0[argmax(&p0)].as_f64())
    } else {
        let p0 = model.predict_proba(xs)?;
        let conf = p0[argmax(&p0)].as_f64();
        if argmax(&p0) != true_label {
            (Crafted { x_adv: xs.to_vec(), probs: p0, success: true, target: None, scale: 0.0, queries: 1 }, conf)
        } else {
            let mut c = match kind {
                AttackKind::Agna | AttackKind::Auna | AttackKind::Buna | AttackKind::Cra | AttackKind::Spna => {
                    let draw = NoiseDraw::new(kind, xs.len(), seed::mix(params.seed, NOISE_STREAM));
                    search_kind(model, true_label, params, kind.max_scale(), |s| noise_perturb(xs, kind, s, &draw))?
                }
                AttackKind::Gba => search_kind(model, true_label, params, kind.max_scale(), |s| {
                    gaussian_blur(xs, x.n_counters(), s)
                })?,
                AttackKind::Ga | AttackKind::Gsa => {
                    let (_, g) = loss_gradient(grad_model.expect("checked"), xs, true_label)?;
                    let mut c = search_kind(model, true_label, params, kind.max_scale(), |eps| {
                        Ok(if kind == AttackKind::Gsa { fgsm_step(xs, &g, eps) } else { gradient_step(xs, &g, eps) })
                    })?;
                    c.queries += 1;
                    c
                }
                AttackKind::Lbfgsa => {
                    let target = random_target(model.n_classes(), true_label, params.seed)?;
                    gradient::lbfgs(grad_model.expect("checked"), xs, true_label, target, params)?
                }
                AttackKind::Sma => unreachable!("handled above"),
            };
            c.queries += 1;
            (c, conf)
        }
    };
    let adv_label = argmax(&crafted.probs);
    let delta: Vec<S> = crafted.x_adv.iter().zip(xs).map(|(&a, &b)| a - b).collect();
    let distances = distance_slices(&crafted.x_adv, xs)?;
    Ok(AdversarialResult {
        kind,
        x_adv: x.with_values(crafted.x_adv)?,
        delta,
        distances,
        success: crafted.success,
        orig_label: true_label,
        adv_label,
        target: crafted.target,
        orig_confidence,
        adv_confidence: crafted.probs[adv_label].as_f64(),
        scale: crafted.scale,
        queries: crafted.queries,
    })
}

pub fn sma_attack<S: Scalar, M: Classifier<S> + ?Sized>(
    model: &M,
    x: &Trace<S>,
    true_label: usize,
    params: &AttackParams,
) -> Result<AdversarialResult<S>> {
    craft(model, x, true_label, AttackKind::Sma, params)
}

pub fn lbfgs_attack<S: Scalar, M: Classifier<S> + ?Sized>(
    model: &M,
    x: &Trace<S>,
    true_label: usize,
    params: &AttackParams,
) -> Result<AdversarialResult<S>> {
    craft(model, x, true_label, AttackKind::Lbfgsa, params)
}
