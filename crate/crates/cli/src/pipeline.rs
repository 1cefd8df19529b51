//! The four-stage experiment: train, attack, harden, attack again.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use cloak_core::attacks::{
    adversarial_set, attack_indices, correct_per_class, evaluate_attack, write_results_csv, AttackKind, AttackSummary,
    SampleOutcome,
};
use cloak_core::classifiers::{accuracy, build_cnn, fit_classical, train_cnn, Classifier, CnnConfig, Model};
use cloak_core::dataset::{normalize_dataset, Dataset, Split};
use cloak_core::defenses::{adversarial_retrain, distill, invalidation_rate, mean_entropy, DistillConfig};
use cloak_core::nn::{History, Network, TrainConfig};
use cloak_core::seed::{mix, mix2};
use cloak_core::synth::generate_dataset;
use cloak_core::trace::LabeledTrace;
use cloak_core::tracefile::{export_dataset_dir, ingest_dataset_dir, write_traces, Header};

use crate::config::{ClassifierChoice, DataSource, ExperimentConfig};
use crate::report::{emit_report, save_stages, Format, StageReport, Table};

/// A stage that failed; artifacts of earlier stages stay on disk.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: u8,
    pub source: anyhow::Error,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for PipelineError {}

pub const REPORT_DIR: &str = "report";
const ENTROPY_TRACES: usize = 100;

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "n_evaluated",
    "success_rate",
    "mean_mad",
    "median_mad",
    "mean_msd",
    "orig_confidence",
    "adv_confidence",
    "mean_queries",
];

fn summary_values(s: &AttackSummary) -> [f64; 8] {
    [
        s.n_evaluated as f64,
        s.success_rate,
        s.mean_mad,
        s.median_mad,
        s.mean_msd,
        s.mean_orig_confidence,
        s.mean_adv_confidence,
        s.mean_queries,
    ]
}

/// Columns per defense in the hardened-attack table.
pub const HARDENED_COLUMNS: [&str; 5] = ["success_rate", "mean_mad", "median_mad", "orig_confidence", "adv_confidence"];

fn hardened_values(s: &AttackSummary) -> [f64; 5] {
    [s.success_rate, s.mean_mad, s.median_mad, s.mean_orig_confidence, s.mean_adv_confidence]
}

struct Hardened {
    name: String,
    net: Network<f64>,
    degenerate: bool,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    artifacts: Vec<PathBuf>,
    dataset: Option<Dataset<f64>>,
    model: Option<Model<f64>>,
    arch: Option<CnnConfig>,
    /// Successful stage-2 adversarial traces per kind; `None` when the kind could not run.
    unprotected: Vec<(AttackKind, Option<Vec<LabeledTrace<f64>>>)>,
    hardened: Vec<Hardened>,
}

/// Runs the configured stages in order. After every stage `stages.json` and the CSV
/// report under `report/` reflect everything finished so far.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Vec<StageReport>, PipelineError> {
    let fail = |stage| move |source| PipelineError { stage, source };
    cfg.validate().map_err(fail(0))?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display())).map_err(fail(0))?;
    let mut run = Run {
        cfg,
        out: &cfg.out,
        artifacts: Vec::new(),
        dataset: None,
        model: None,
        arch: None,
        unprotected: Vec::new(),
        hardened: Vec::new(),
    };
    let mut reports = Vec::new();
    for stage in 1..=4u8 {
        if !cfg.has_stage(stage) {
            break;
        }
        let start = Instant::now();
        let tables = match stage {
            1 => run.stage1(),
            2 => run.stage2(),
            3 => run.stage3(),
            _ => run.stage4(),
        }
        .map_err(fail(stage))?;
        reports.push(StageReport {
            stage,
            wall_time_s: start.elapsed().as_secs_f64(),
            artifacts: std::mem::take(&mut run.artifacts),
            tables,
        });
        save_stages(run.out, &reports).map_err(fail(stage))?;
        emit_report(&reports, Format::Csv, &run.out.join(REPORT_DIR)).map_err(fail(stage))?;
    }
    Ok(reports)
}

impl Run<'_> {
    fn path(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let rel = rel.as_ref().to_path_buf();
        let full = self.out.join(&rel);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent)?;
        }
        self.artifacts.push(rel);
        Ok(full)
    }

    fn write(&mut self, rel: impl AsRef<Path>, body: &str) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    }

    fn save_model(&mut self, rel: impl AsRef<Path>, model: &Model<f64>) -> Result<()> {
        let p = self.path(rel)?;
        Ok(model.save(&p)?)
    }

    fn save_outcomes(&mut self, dir: &str, kind: AttackKind, outcomes: &[SampleOutcome<f64>]) -> Result<Vec<LabeledTrace<f64>>> {
        let p = self.path(format!("attacks/{dir}/{kind}.csv"))?;
        let mut w = BufWriter::new(File::create(&p)?);
        write_results_csv(&mut w, outcomes)?;
        w.flush()?;
        let adv = adversarial_set(outcomes);
        self.save_traces(format!("attacks/{dir}/{kind}_adv.csv"), &adv)?;
        Ok(adv)
    }

    fn save_traces(&mut self, rel: String, traces: &[LabeledTrace<f64>]) -> Result<()> {
        let Some(first) = traces.first() else {
            return Ok(());
        };
        let n_classes = self.dataset().n_classes;
        let p = self.path(rel)?;
        let header = Header { n_classes: Some(n_classes), ..Header::for_trace(&first.trace) };
        let w = BufWriter::new(File::create(&p)?);
        Ok(write_traces(w, &header, traces.iter().map(|t| (t.label as i64, &t.trace)))?)
    }

    fn dataset(&self) -> &Dataset<f64> {
        self.dataset.as_ref().expect("stage 1 loads the dataset")
    }

    fn network(&self) -> &Network<f64> {
        self.model.as_ref().and_then(Model::as_network).expect("validated: defenses need the cnn")
    }

    fn accuracy_table() -> Table {
        Table::new("accuracy", "model", ["train_accuracy", "val_accuracy", "test_accuracy"].map(String::from).to_vec())
    }

    fn accuracies(&self, model: &dyn Classifier<f64>) -> Result<[f64; 3]> {
        let ds = self.dataset();
        Ok([accuracy(model, ds, Split::Train)?, accuracy(model, ds, Split::Val)?, accuracy(model, ds, Split::Test)?])
    }

    fn stage1(&mut self) -> Result<Vec<Table>> {
        let s1 = self.cfg.stage_seed(1);
        let ds = match &self.cfg.data {
            DataSource::Synthetic { gen, per_class } => {
                let ds = generate_dataset::<f64>(gen, *per_class)?;
                export_dataset_dir(&self.out.join("data"), &ds)?;
                for split in Split::ALL {
                    self.artifacts.push(PathBuf::from(format!("data/{split}.csv")));
                }
                self.write("data/gen.conf", &gen.to_kv())?;
                ds
            }
            DataSource::Dir(dir) => {
                let ds = ingest_dataset_dir::<f64>(dir).with_context(|| format!("reading {}", dir.display()))?;
                if ds.is_normalized() {
                    ds
                } else {
                    normalize_dataset(&ds)?.0
                }
            }
        };
        self.dataset = Some(ds);
        let model = match &self.cfg.classifier {
            ClassifierChoice::Cnn(arch) => {
                let mut arch = arch.clone();
                let (c, n) = self.dataset().geometry().context("empty dataset")?;
                arch.input_len = c * n;
                arch.n_classes = self.dataset().n_classes;
                let fresh = build_cnn::<f64>(&arch, mix(s1, 1))?;
                let tc = TrainConfig {
                    epochs: self.cfg.epochs,
                    batch_size: self.cfg.batch_size,
                    seed: mix(s1, 2),
                    ..TrainConfig::default()
                };
                let (net, history) = train_cnn(&fresh, self.dataset(), &tc)?;
                self.write("history.csv", &history.to_csv())?;
                self.arch = Some(arch);
                Model::Cnn(net)
            }
            ClassifierChoice::Classical { family, pca } => {
                Model::Classical(fit_classical(*family, self.dataset(), *pca, mix(s1, 1), self.cfg.linear_epochs)?)
            }
        };
        self.save_model("model.json", &model)?;
        let mut table = Self::accuracy_table();
        table.push("unprotected", self.accuracies(&model)?);
        self.model = Some(model);
        Ok(vec![table])
    }

    fn stage2(&mut self) -> Result<Vec<Table>> {
        let params = self.cfg.attack_params.with_seed(self.cfg.stage_seed(2));
        let mut table = Table::new("attacks_unprotected", "attack", SUMMARY_COLUMNS.map(String::from).to_vec());
        let model = self.model.take().expect("stage 1 trains the model");
        let result = (|| {
            for &kind in &self.cfg.attacks {
                match evaluate_attack(&model, self.dataset(), Split::Test, kind, &params, self.cfg.n_attack) {
                    Ok((summary, outcomes)) => {
                        let adv = self.save_outcomes("unprotected", kind, &outcomes)?;
                        table.push(kind.name(), summary_values(&summary));
                        self.unprotected.push((kind, Some(adv)));
                    }
                    Err(cloak_core::Error::RequiresGradients) => {
                        table.push_na(kind.name());
                        self.unprotected.push((kind, None));
                    }
                    Err(e) => return Err(anyhow::Error::from(e).context(format!("attack {kind}"))),
                }
            }
            Ok(())
        })();
        self.model = Some(model);
        result?;
        Ok(vec![table])
    }

    fn finish_defense(&mut self, name: String, net: Network<f64>, history: &History, accuracy: &mut Table) -> Result<()> {
        self.save_model(format!("defenses/{name}/model.json"), &Model::Cnn(net.clone()))?;
        self.write(format!("defenses/{name}/history.csv"), &history.to_csv())?;
        let acc = self.accuracies(&net)?;
        accuracy.push(name.clone(), acc);
        self.hardened.push(Hardened { name, net, degenerate: !(acc[1] >= self.cfg.degenerate_below) });
        Ok(())
    }

    fn stage3(&mut self) -> Result<Vec<Table>> {
        let s3 = self.cfg.stage_seed(3);
        let cfg = self.cfg;
        let mut acc_table = Self::accuracy_table();
        let mut tables = Vec::new();

        if cfg.retrain {
            let net = self.network().clone();
            let ds = self.dataset();
            let chosen = correct_per_class(&net, ds, Split::Train, cfg.retrain_per_class)?;
            let mut adv = Vec::new();
            for (j, &kind) in cfg.retrain_kinds.iter().enumerate() {
                let params = cfg.attack_params.with_seed(mix2(s3, 1, j as u64));
                let outcomes = attack_indices(&net, ds, Split::Train, kind, &params, &chosen)
                    .with_context(|| format!("crafting {kind} re-training traces"))?;
                adv.extend(adversarial_set(&outcomes));
            }
            let tc = TrainConfig {
                epochs: cfg.retrain_epochs,
                batch_size: cfg.batch_size,
                seed: mix(s3, 2),
                ..TrainConfig::default()
            };
            let (hard, history) = adversarial_retrain(&net, ds, &adv, &tc)?;
            self.save_traces("defenses/retrain/adversarial.csv".into(), &adv)?;
            self.finish_defense("retrain".into(), hard, &history, &mut acc_table)?;
        }

        if !cfg.temperatures.is_empty() {
            let arch = self.arch.clone().expect("validated: defenses need the cnn");
            let mut dd = Table::new(
                "distillation",
                "temperature",
                ["teacher_entropy", "teacher_val_accuracy", "student_val_accuracy"].map(String::from).to_vec(),
            );
            for (j, &t) in cfg.temperatures.iter().enumerate() {
                let dc = DistillConfig {
                    temperature: t,
                    teacher_epochs: cfg.teacher_epochs,
                    student_epochs: cfg.student_epochs,
                    seed: mix2(s3, 3, j as u64),
                };
                let d = distill(self.dataset(), &arch, &dc).with_context(|| format!("distilling at T={t}"))?;
                let name = format!("dd_T{t}");
                self.save_model(format!("defenses/{name}/teacher.json"), &Model::Cnn(d.teacher.clone()))?;
                self.write(format!("defenses/{name}/teacher_history.csv"), &d.teacher_history.to_csv())?;
                let xs: Vec<&[f64]> = self.dataset().split(Split::Val).take(ENTROPY_TRACES).map(|t| t.trace.values()).collect();
                let h = mean_entropy(&d.teacher, &xs, t)?;
                let teacher_val = accuracy(&d.teacher, self.dataset(), Split::Val)?;
                let student_val = accuracy(&d.student, self.dataset(), Split::Val)?;
                dd.push(format!("{t}"), [h, teacher_val, student_val]);
                self.finish_defense(name, d.student, &d.student_history, &mut acc_table)?;
            }
            tables.push(dd);
        }

        let columns: Vec<String> = self.hardened.iter().map(|h| h.name.clone()).collect();
        let mut inval = Table::new("invalidation", "attack", columns);
        for (kind, adv) in &self.unprotected {
            let mut row = Vec::new();
            for h in &self.hardened {
                row.push(match adv {
                    Some(adv) if !adv.is_empty() && !h.degenerate => invalidation_rate(&h.net, adv)?,
                    _ => f64::NAN,
                });
            }
            inval.push(kind.name(), row);
        }
        tables.insert(0, acc_table);
        tables.push(inval);
        Ok(tables)
    }

    fn stage4(&mut self) -> Result<Vec<Table>> {
        let params = self.cfg.attack_params.with_seed(self.cfg.stage_seed(4));
        let columns: Vec<String> = self
            .hardened
            .iter()
            .flat_map(|h| HARDENED_COLUMNS.map(|c| format!("{}.{c}", h.name)))
            .collect();
        let mut table = Table::new("attacks_hardened", "attack", columns);
        let hardened = std::mem::take(&mut self.hardened);
        let result = (|| {
            for &kind in &self.cfg.attacks {
                let mut row = Vec::new();
                for h in &hardened {
                    if h.degenerate {
                        row.extend([f64::NAN; HARDENED_COLUMNS.len()]);
                        continue;
                    }
                    let (summary, outcomes) =
                        evaluate_attack(&h.net, self.dataset(), Split::Test, kind, &params, self.cfg.n_attack)
                            .with_context(|| format!("attack {kind} against {}", h.name))?;
                    self.save_outcomes(&h.name, kind, &outcomes)?;
                    row.extend(hardened_values(&summary));
                }
                table.push(kind.name(), row);
            }
            Ok::<_, anyhow::Error>(())
        })();
        self.hardened = hardened;
        result?;
        Ok(vec![table])
    }
}
