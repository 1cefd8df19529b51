//! Eavesdropper-side hardening: adversarial re-training and defensive distillation,
//! plus the rate at which hardening invalidates earlier adversarial traces.

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::classifiers::cnn::{check_compatible, examples, hard_targets};
use crate::classifiers::{build_cnn, train_cnn, Classifier, CnnConfig};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{fit, softmax_t, History, Network, Target, TrainConfig};
use crate::scalar::{argmax, Scalar};
use crate::seed;
use crate::trace::LabeledTrace;

/// Temperatures of the distillation sweep.
pub const TEMPERATURES: [f64; 9] = [1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainConfig {
    /// Attacks whose output feeds the re-training set.
    pub kinds: Vec<AttackKind>,
    /// Adversarial traces crafted per class and kind.
    pub n_per_class: usize,
    pub train: TrainConfig,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self { kinds: vec![AttackKind::Gsa], n_per_class: 50, train: TrainConfig { epochs: 3, ..TrainConfig::default() } }
    }
}

impl RetrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::InvalidArgument("n_per_class must be at least 1".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidArgument("re-training needs at least one attack kind".into()));
        }
        self.train.validate()
    }
}

/// Continues training a copy of `model` on the train split, with every batch half clean
/// and half adversarial. Adversarial traces carry their true labels.
pub fn adversarial_retrain<S: Scalar>(
    model: &Network<S>,
    dataset: &Dataset<S>,
    adversarial: &[LabeledTrace<S>],
    config: &TrainConfig,
) -> Result<(Network<S>, History)> {
    if model.norm_stats != dataset.norm_stats {
        return Err(Error::NormStatsMismatch);
    }
    check_compatible(model, dataset)?;
    for a in adversarial {
        if a.trace.len() != model.input_len() || !a.trace.is_normalized() || a.label >= dataset.n_classes {
            return Err(Error::InvalidArgument(format!(
                "adversarial trace (label {}, {} values) does not fit the model",
                a.label,
                a.trace.len()
            )));
        }
    }
    let (tx, ty) = hard_targets(dataset, Split::Train);
    let (vx, vy) = hard_targets(dataset, Split::Val);
    let ax: Vec<&[S]> = adversarial.iter().map(|a| a.trace.values()).collect();
    let ay: Vec<Target<S>> = adversarial.iter().map(|a| Target::Hard(a.label)).collect();
    let mut out = model.clone();
    let history = fit(&mut out, &examples(&tx, &ty), &examples(&vx, &vy), &examples(&ax, &ay), config)?;
    Ok((out, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub temperature: f64,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { temperature: 20.0, teacher_epochs: 5, student_epochs: 5, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Distilled<S = f64> {
    /// Trained at the distillation temperature and left at it.
    pub teacher: Network<S>,
    /// Trained on the teacher's soft labels, deployed at temperature 1.
    pub student: Network<S>,
    pub teacher_history: History,
    pub student_history: History,
}

/// Defensive distillation at `config.temperature`.
pub fn distill<S: Scalar>(dataset: &Dataset<S>, arch: &CnnConfig, config: &DistillConfig) -> Result<Distilled<S>> {
    let t = config.temperature;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {t} must be positive")));
    }
    let train_cfg = |epochs, stream| TrainConfig {
        epochs,
        temperature: t,
        seed: seed::mix(config.seed, stream),
        ..TrainConfig::default()
    };
    let fresh = build_cnn(arch, seed::mix(config.seed, 0))?;
    let (mut teacher, teacher_history) = train_cnn(&fresh, dataset, &train_cfg(config.teacher_epochs, 1))?;
    teacher.temperature = t;

    let (tx, _) = hard_targets(dataset, Split::Train);
    let soft: Vec<Target<S>> = teacher.predict_proba_many(&tx)?.into_iter().map(Target::Soft).collect();
    let (vx, vy) = hard_targets(dataset, Split::Val);
    let mut student = build_cnn(arch, seed::mix(config.seed, 2))?;
    student.norm_stats = dataset.norm_stats.clone();
    let student_history =
        fit(&mut student, &examples(&tx, &soft), &examples(&vx, &vy), &[], &train_cfg(config.student_epochs, 3))?;
    student.temperature = 1.0;
    Ok(Distilled { teacher, student, teacher_history, student_history })
}

/// Fraction of `adversarial` that `model` now assigns to the true label.
pub fn invalidation_rate<S: Scalar, M: Classifier<S> + ?Sized>(model: &M, adversarial: &[LabeledTrace<S>]) -> Result<f64> {
    if adversarial.is_empty() {
        return Err(Error::EmptyAdversarialSet);
    }
    let xs: Vec<&[S]> = adversarial.iter().map(|a| a.trace.values()).collect();
    let probs = model.predict_proba_many(&xs)?;
    let hits = probs.iter().zip(adversarial).filter(|(p, a)| argmax(p) == a.label).count();
    Ok(hits as f64 / adversarial.len() as f64)
}

/// Shannon entropy in nats.
pub fn entropy<S: Scalar>(p: &[S]) -> f64 {
    p.iter().map(|v| v.as_f64()).filter(|&v| v > 0.0).map(|v| -v * v.ln()).sum()
}

/// Mean entropy of `softmax(z / temperature)` over `xs`.
pub fn mean_entropy<S: Scalar>(net: &Network<S>, xs: &[&[S]], temperature: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::NoTraces);
    }
    let mut total = 0.0;
    for z in net.logits_many(xs)? {
        total += entropy(&softmax_t(&z, temperature)?);
    }
    Ok(total / xs.len() as f64)
}
