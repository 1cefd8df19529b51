//! Experiment configuration: a flat `key = value` file with dotted section prefixes.
//!
//! ```text
//! seed = 7
//! out = runs/desk
//! stages = 1,2,3,4
//! gen.classes = 20
//! gen.samples = 200
//! data.per_class = 200
//! classifier.family = cnn
//! train.epochs = 5
//! attack.kinds = all
//! attack.n = 100
//! defense.retrain = true
//! defense.distill.temperatures = 1,10,50
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use cloak_core::attacks::{AttackKind, AttackParams};
use cloak_core::classifiers::{CnnConfig, Family};
use cloak_core::synth::{parse_kv, GenConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generate with `gen.*` settings and `data.per_class` traces per class.
    Synthetic { gen: GenConfig, per_class: usize },
    /// A directory holding `train.csv`, `val.csv` and `test.csv`.
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierChoice {
    Cnn(CnnConfig),
    Classical { family: Family, pca: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub stages: Vec<u8>,
    pub data: DataSource,
    pub classifier: ClassifierChoice,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs of the linear head when the classifier is `linear`.
    pub linear_epochs: usize,
    pub attacks: Vec<AttackKind>,
    pub n_attack: usize,
    pub attack_params: AttackParams,
    pub retrain: bool,
    pub retrain_kinds: Vec<AttackKind>,
    pub retrain_per_class: usize,
    pub retrain_epochs: usize,
    pub temperatures: Vec<f64>,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    /// A hardened model below this clean val accuracy is reported as `NA`.
    pub degenerate_below: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let gen = GenConfig { n_samples: 200, ..GenConfig::default() };
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            stages: vec![1, 2, 3, 4],
            data: DataSource::Synthetic { gen, per_class: 200 },
            classifier: ClassifierChoice::Cnn(CnnConfig { input_len: 1000, ..CnnConfig::default() }),
            epochs: 5,
            batch_size: 64,
            linear_epochs: 30,
            attacks: AttackKind::ALL.to_vec(),
            n_attack: 100,
            attack_params: AttackParams::default(),
            retrain: true,
            retrain_kinds: vec![AttackKind::Gsa],
            retrain_per_class: 50,
            retrain_epochs: 3,
            temperatures: cloak_core::defenses::TEMPERATURES.to_vec(),
            teacher_epochs: 5,
            student_epochs: 10,
            degenerate_below: 0.5,
        }
    }
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| s.parse::<T>().map_err(|e| anyhow!("'{s}': {e}"))).collect()
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| anyhow!("bad value for {key}: '{v}' ({e})"))
}

fn bool_of(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("bad value for {key}: '{v}'"),
    }
}

impl ExperimentConfig {
    pub fn from_kv(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let mut gen_kv = String::new();
        let mut per_class = 200;
        let mut data_dir: Option<PathBuf> = None;
        let mut family: Option<String> = None;
        let mut pca = false;
        let mut cnn = CnnConfig::default();
        let mut input_len_set = false;
        let mut params = AttackParams::default();
        let p = &mut params;
        for (key, v) in map {
            let k = key.as_str();
            match k {
                "seed" => c.seed = parse(k, v)?,
                "out" => c.out = PathBuf::from(v),
                "stages" => c.stages = list(v).context("stages")?,
                "data.per_class" => per_class = parse(k, v)?,
                "data.dir" => data_dir = Some(PathBuf::from(v)),
                "classifier.family" => family = Some(v.clone()),
                "classifier.pca" => pca = bool_of(k, v)?,
                "cnn.input_len" => {
                    cnn.input_len = parse(k, v)?;
                    input_len_set = true;
                }
                "cnn.conv1_filters" => cnn.conv1_filters = parse(k, v)?,
                "cnn.conv1_k" => cnn.conv1_k = parse(k, v)?,
                "cnn.conv2_filters" => cnn.conv2_filters = parse(k, v)?,
                "cnn.conv2_k" => cnn.conv2_k = parse(k, v)?,
                "cnn.pool" => cnn.pool = parse(k, v)?,
                "cnn.dense" => cnn.dense = parse(k, v)?,
                "cnn.dropout" => cnn.dropout = parse(k, v)?,
                "train.epochs" => c.epochs = parse(k, v)?,
                "train.batch_size" => c.batch_size = parse(k, v)?,
                "train.linear_epochs" => c.linear_epochs = parse(k, v)?,
                "attack.kinds" => {
                    c.attacks = if v == "all" { AttackKind::ALL.to_vec() } else { list(v).context("attack.kinds")? }
                }
                "attack.n" => c.n_attack = parse(k, v)?,
                "attack.max_scale_doublings" => p.max_scale_doublings = parse(k, v)?,
                "attack.bisection_steps" => p.bisection_steps = parse(k, v)?,
                "attack.eps_min" => p.eps_min = parse(k, v)?,
                "attack.sma_theta" => p.sma_theta = parse(k, v)?,
                "attack.sma_max_features" => p.sma_max_features = parse(k, v)?,
                "attack.lbfgs_c_init" => p.lbfgs_c_init = parse(k, v)?,
                "attack.lbfgs_c_bisections" => p.lbfgs_c_bisections = parse(k, v)?,
                "attack.lbfgs_c_expansions" => p.lbfgs_c_expansions = parse(k, v)?,
                "attack.lbfgs_max_evals" => p.lbfgs_max_evals = parse(k, v)?,
                "attack.lbfgs_memory" => p.lbfgs_memory = parse(k, v)?,
                "attack.lbfgs_first_step" => p.lbfgs_first_step = parse(k, v)?,
                "attack.lbfgs_refine_steps" => p.lbfgs_refine_steps = parse(k, v)?,
                "defense.retrain" => c.retrain = bool_of(k, v)?,
                "defense.retrain.kinds" => c.retrain_kinds = list(v).context("defense.retrain.kinds")?,
                "defense.retrain.per_class" => c.retrain_per_class = parse(k, v)?,
                "defense.retrain.epochs" => c.retrain_epochs = parse(k, v)?,
                "defense.distill.temperatures" => {
                    c.temperatures = if v == "none" { Vec::new() } else { list(v).context("temperatures")? }
                }
                "defense.distill.teacher_epochs" => c.teacher_epochs = parse(k, v)?,
                "defense.distill.student_epochs" => c.student_epochs = parse(k, v)?,
                "report.degenerate_below" => c.degenerate_below = parse(k, v)?,
                _ => match k.strip_prefix("gen.") {
                    Some(g) => gen_kv.push_str(&format!("{g} = {v}\n")),
                    None => bail!("unknown configuration key '{k}'"),
                },
            }
        }
        c.attack_params = params;
        // Desk-scale traces are 200 samples long unless configured otherwise.
        let gen_text = if map.contains_key("gen.samples") { gen_kv.clone() } else { format!("samples = 200\n{gen_kv}") };
        let mut gen = GenConfig::from_kv(&gen_text).context("gen.*")?;
        if !map.contains_key("gen.seed") {
            gen.seed = cloak_core::seed::mix(c.seed, 0);
        }
        c.data = match data_dir {
            Some(d) => {
                if !gen_kv.is_empty() {
                    bail!("data.dir and gen.* are mutually exclusive");
                }
                DataSource::Dir(d)
            }
            None => DataSource::Synthetic { gen: gen.clone(), per_class },
        };
        c.classifier = match family.as_deref() {
            None | Some("cnn") => {
                if !input_len_set {
                    if let DataSource::Synthetic { gen, .. } = &c.data {
                        cnn.input_len = gen.n_counters * gen.n_samples;
                    }
                }
                if let DataSource::Synthetic { gen, .. } = &c.data {
                    cnn.n_classes = gen.n_classes;
                }
                ClassifierChoice::Cnn(cnn)
            }
            Some(name) => ClassifierChoice::Classical { family: name.parse()?, pca },
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut s = self.stages.clone();
        s.sort_unstable();
        s.dedup();
        if s.is_empty() || s != (1..=s.len() as u8).collect::<Vec<_>>() || s.len() > 4 {
            bail!("stages must be a prefix of 1,2,3,4, got {:?}", self.stages);
        }
        if let DataSource::Dir(d) = &self.data {
            if !d.join("train.csv").exists() {
                bail!("{} has no train.csv", d.display());
            }
        }
        if matches!(self.classifier, ClassifierChoice::Classical { .. }) && s.len() >= 3 {
            bail!("defenses (stage 3) need the cnn classifier");
        }
        if self.epochs == 0 || self.retrain_epochs == 0 || self.teacher_epochs == 0 || self.student_epochs == 0 {
            bail!("epoch counts must be positive");
        }
        if s.len() >= 2 && (self.attacks.is_empty() || self.n_attack == 0) {
            bail!("stage 2 needs at least one attack kind and attack.n >= 1");
        }
        if self.retrain && (self.retrain_kinds.is_empty() || self.retrain_per_class == 0) {
            bail!("re-training needs defense.retrain.kinds and defense.retrain.per_class >= 1");
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            bail!("distillation temperature {t} must be positive");
        }
        self.attack_params.validate()?;
        Ok(())
    }

    pub fn has_stage(&self, stage: u8) -> bool {
        self.stages.contains(&stage)
    }

    /// Seed of one pipeline stage.
    pub fn stage_seed(&self, stage: u8) -> u64 {
        cloak_core::seed::mix(self.seed, u64::from(stage))
    }
}
