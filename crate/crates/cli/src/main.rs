use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use cloak_cli::config::ExperimentConfig;
use cloak_cli::pipeline::{run_pipeline, REPORT_DIR};
use cloak_cli::report::{emit_report, load_stages, Format};
use cloak_cli::{load_dataset, normalized, normalized_for};
use cloak_collect::{list_counters, sample_process, write_trace_csv, SampleConfig, Target};
use cloak_core::attacks::{adversarial_set, evaluate_attack, write_results_csv, AttackKind, AttackParams};
use cloak_core::classifiers::{accuracy, build_cnn, fit_classical, train_cnn, CnnConfig, Family, Model};
use cloak_core::dataset::Split;
use cloak_core::defenses::{adversarial_retrain, distill, DistillConfig};
use cloak_core::nn::TrainConfig;
use cloak_core::seed::mix;
use cloak_core::synth::{generate_dataset, parse_kv, GenConfig};
use cloak_core::trace::LabeledTrace;
use cloak_core::tracefile::{export_dataset_dir, ingest_csv, write_traces, Header};

#[derive(Parser)]
#[command(name = "cloak", version, about = "Process fingerprinting from performance-counter traces and adversarial cloaking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Gen(GenArgs),
    /// Sample performance counters of a running process.
    Collect(CollectArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Craft adversarial traces against a trained model.
    Attack(AttackArgs),
    /// Harden a classifier.
    #[command(subcommand)]
    Defend(DefendCommand),
    /// Run the staged experiment from a configuration file.
    Pipeline(PipelineArgs),
    /// Re-emit the report tables of a finished run.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator settings as key = value lines; flags override them.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    counters: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    interval_us: Option<u32>,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    /// Output directory for train.csv, val.csv, test.csv and gen.conf.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CollectArgs {
    /// Print which counters this host can count and exit.
    #[arg(long)]
    list: bool,
    #[arg(long, conflicts_with = "cmd")]
    pid: Option<i32>,
    /// Program to spawn and sample, with its arguments.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    cmd: Vec<String>,
    #[arg(long, default_value_t = 10)]
    interval_us: u32,
    #[arg(long, default_value_t = 10)]
    duration_ms: u32,
    /// Number of counters, taken in canonical order.
    #[arg(long, default_value_t = 5)]
    counters: usize,
    #[arg(long)]
    label: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory or trace CSV.
    #[arg(long)]
    data: PathBuf,
    /// `cnn` or a classical family such as knn-fine or tree-coarse.
    #[arg(long, default_value = "cnn")]
    family: String,
    #[arg(long)]
    pca: bool,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    linear_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    kind: AttackKind,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-sample results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Successful adversarial traces, labeled with their true class.
    #[arg(long)]
    adv_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DefendCommand {
    /// Continue training on clean plus adversarial traces.
    Retrain(RetrainArgs),
    /// Train a teacher at temperature T and distill a student from its soft labels.
    Distill(DistillArgs),
}

#[derive(Args)]
struct RetrainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Adversarial trace CSV, as written by `attack --adv-out`.
    #[arg(long)]
    attacks: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "T", alias = "temperature")]
    temperature: f64,
    #[arg(long, default_value_t = 5)]
    teacher_epochs: usize,
    #[arg(long, default_value_t = 10)]
    student_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Student model path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    teacher_out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV tables are always written; `json` adds JSON copies.
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Defaults to the run's report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes with distinct exit codes.
enum Failure {
    Config(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Stage(e)
    }
}

impl From<cloak_core::Error> for Failure {
    fn from(e: cloak_core::Error) -> Self {
        Failure::Stage(e.into())
    }
}

impl From<cloak_collect::CollectError> for Failure {
    fn from(e: cloak_collect::CollectError) -> Self {
        Failure::Stage(e.into())
    }
}

trait ConfigErr<T> {
    fn config(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ConfigErr<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = set_threads().config().and_then(|()| dispatch(cli.command));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn set_threads() -> Result<()> {
    let Ok(v) = std::env::var("CLOAK_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| anyhow!("CLOAK_THREADS='{v}' is not a positive integer"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Collect(a) => collect(a),
        Command::Train(a) => train(a),
        Command::Attack(a) => attack(a),
        Command::Defend(DefendCommand::Retrain(a)) => retrain(a),
        Command::Defend(DefendCommand::Distill(a)) => distill_cmd(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Report(a) => report(a),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).config()
}

fn gen(a: GenArgs) -> Result<(), Failure> {
    let mut g = match &a.config {
        Some(p) => GenConfig::from_kv(&read_text(p)?).config()?,
        None => GenConfig::default(),
    };
    g.n_classes = a.classes.unwrap_or(g.n_classes);
    g.n_counters = a.counters.unwrap_or(g.n_counters);
    g.n_samples = a.samples.unwrap_or(g.n_samples);
    g.noise_std = a.noise_std.unwrap_or(g.noise_std);
    g.seed = a.seed.unwrap_or(g.seed);
    g.interval_us = a.interval_us.unwrap_or(g.interval_us);
    g.validate().config()?;
    let ds = generate_dataset::<f64>(&g, a.per_class)?;
    export_dataset_dir(&a.out, &ds)?;
    fs::write(a.out.join("gen.conf"), g.to_kv()).context("writing gen.conf")?;
    println!("{} traces of {} classes written to {}", ds.len(), ds.n_classes, a.out.display());
    Ok(())
}

fn collect(a: CollectArgs) -> Result<(), Failure> {
    if a.list {
        for (c, ok) in list_counters() {
            println!("{c}\t{}", if ok { "available" } else { "unavailable" });
        }
        return Ok(());
    }
    let target = match (a.pid, a.cmd.is_empty()) {
        (Some(pid), true) => Target::Pid(pid),
        (None, false) => Target::Command(a.cmd),
        _ => return Err(Failure::Config(anyhow!("give exactly one of --pid or --cmd"))),
    };
    let out = a.out.ok_or_else(|| Failure::Config(anyhow!("--out is required")))?;
    let cfg = SampleConfig {
        target,
        interval_us: a.interval_us,
        duration_ms: a.duration_ms,
        counters: cloak_core::trace::CounterKind::first(a.counters).config()?,
    };
    cfg.validate().config()?;
    let trace = sample_process(&cfg)?;
    write_trace_csv(&out, &trace, a.label)?;
    println!("{} samples of {} counters written to {}", trace.n_samples(), trace.n_counters(), out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let family: Option<Family> = if a.family == "cnn" { None } else { Some(a.family.parse().config()?) };
    let ds = normalized(load_dataset(&a.data, a.seed).config()?)?;
    let model = match family {
        None => {
            let (c, n) = ds.geometry().context("empty dataset")?;
            let arch = CnnConfig { input_len: c * n, n_classes: ds.n_classes, ..CnnConfig::default() };
            let tc = TrainConfig { epochs: a.epochs, batch_size: a.batch_size, seed: mix(a.seed, 2), ..TrainConfig::default() };
            tc.validate().config()?;
            let (net, history) = train_cnn(&build_cnn::<f64>(&arch, mix(a.seed, 1))?, &ds, &tc)?;
            if let Some(h) = &a.history {
                fs::write(h, history.to_csv()).with_context(|| format!("writing {}", h.display()))?;
            }
            Model::Cnn(net)
        }
        Some(f) => Model::Classical(fit_classical(f, &ds, a.pca, mix(a.seed, 1), a.linear_epochs)?),
    };
    model.save(&a.out)?;
    println!("val accuracy {:.4}", accuracy(&model, &ds, Split::Val)?);
    Ok(())
}

fn load_model(path: &Path) -> Result<Model<f64>, Failure> {
    Model::load(path).with_context(|| format!("loading {}", path.display())).config()
}

fn attack(a: AttackArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let ds = normalized_for(load_dataset(&a.data, 0).config()?, model.norm_stats()).config()?;
    let params = AttackParams::default().with_seed(a.seed);
    let (summary, outcomes) =
        evaluate_attack(&model, &ds, a.split, a.kind, &params, a.n)?;
    let mut w = std::io::BufWriter::new(fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    write_results_csv(&mut w, &outcomes)?;
    if let Some(p) = &a.adv_out {
        write_adversarial(p, &adversarial_set(&outcomes), ds.n_classes)?;
    }
    println!(
        "{}: {} evaluated{}, success {:.3}, median MAD {}",
        a.kind,
        summary.n_evaluated,
        if summary.short { " (short)" } else { "" },
        summary.success_rate,
        summary.median_mad
    );
    Ok(())
}

fn write_adversarial(path: &Path, adv: &[LabeledTrace<f64>], n_classes: usize) -> Result<(), Failure> {
    let Some(first) = adv.first() else {
        return Err(Failure::Stage(anyhow!("no successful adversarial traces to write")));
    };
    let header = Header { n_classes: Some(n_classes), ..Header::for_trace(&first.trace) };
    let w = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_traces(w, &header, adv.iter().map(|t| (t.label as i64, &t.trace)))?;
    Ok(())
}

fn retrain(a: RetrainArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let Some(net) = model.as_network() else {
        return Err(Failure::Config(anyhow!("re-training needs a cnn model")));
    };
    let ds = normalized_for(load_dataset(&a.data, a.seed).config()?, net.norm_stats.as_ref()).config()?;
    let adv = ingest_csv::<f64>(&a.attacks).with_context(|| format!("reading {}", a.attacks.display())).config()?;
    let tc = TrainConfig { epochs: a.epochs, seed: a.seed, ..TrainConfig::default() };
    tc.validate().config()?;
    let (hard, history) = adversarial_retrain(net, &ds, &adv.traces, &tc)?;
    Model::Cnn(hard.clone()).save(&a.out)?;
    if let Some(h) = &a.history {
        fs::write(h, history.to_csv()).with_context(|| format!("writing {}", h.display()))?;
    }
    println!("val accuracy {:.4}", accuracy(&hard, &ds, Split::Val)?);
    Ok(())
}

fn distill_cmd(a: DistillArgs) -> Result<(), Failure> {
    if !(a.temperature > 0.0 && a.temperature.is_finite()) {
        return Err(Failure::Config(anyhow!("temperature must be positive")));
    }
    let ds = normalized(load_dataset(&a.data, a.seed).config()?)?;
    let (c, n) = ds.geometry().context("empty dataset")?;
    let arch = CnnConfig { input_len: c * n, n_classes: ds.n_classes, ..CnnConfig::default() };
    let cfg = DistillConfig {
        temperature: a.temperature,
        teacher_epochs: a.teacher_epochs,
        student_epochs: a.student_epochs,
        seed: a.seed,
    };
    let d = distill(&ds, &arch, &cfg)?;
    Model::Cnn(d.student.clone()).save(&a.out)?;
    if let Some(p) = &a.teacher_out {
        Model::Cnn(d.teacher.clone()).save(p)?;
    }
    println!(
        "teacher val accuracy {:.4}, student val accuracy {:.4}",
        accuracy(&d.teacher, &ds, Split::Val)?,
        accuracy(&d.student, &ds, Split::Val)?
    );
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<(), Failure> {
    let mut map = parse_kv(&read_text(&a.config)?).config()?;
    if let Some(o) = &a.out {
        map.insert("out".into(), o.display().to_string());
    }
    if let Some(s) = a.seed {
        map.insert("seed".into(), s.to_string());
    }
    let cfg = ExperimentConfig::from_map(&map).config()?;
    let reports = run_pipeline(&cfg).map_err(|e| match e.stage {
        0 => Failure::Config(e.source),
        _ => Failure::Stage(anyhow::Error::new(e)),
    })?;
    if a.format == Format::Json {
        emit_report(&reports, Format::Json, &cfg.out.join(REPORT_DIR))?;
    }
    for r in &reports {
        println!("stage {} finished in {:.1} s", r.stage, r.wall_time_s);
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let reports = load_stages(&a.run).config()?;
    if reports.is_empty() {
        return Err(Failure::Config(anyhow!("{} holds no finished stages", a.run.display())));
    }
    let dir = a.out.unwrap_or_else(|| a.run.join(REPORT_DIR));
    for p in emit_report(&reports, a.format, &dir)? {
        println!("{}", p.display());
    }
    Ok(())
}
