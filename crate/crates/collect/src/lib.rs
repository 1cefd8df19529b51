//! Samples hardware performance counters of one process at a fixed interval and
//! returns raw interval counts as a [`Trace`].
//!
//! Counting goes through `perf_event_open(2)` and is only available on Linux. On other
//! hosts every counter is reported unavailable.

mod perf;
mod sampler;

use std::fmt;
use std::path::Path;
use std::process::Command;
use std::time::Duration;

use cloak_core::trace::{CounterKind, Trace};
use cloak_core::tracefile::{write_traces, Header};

pub use sampler::{interval_counts, sample_with, CounterSource, TimingReport};

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error("invalid sampling configuration: {0}")]
    Config(String),
    #[error("counter {0} is not available on this host")]
    Unavailable(CounterKind),
    #[error("process {0} does not exist")]
    NoSuchProcess(i32),
    #[error("target exited after {collected} of {expected} samples")]
    PartialTrace { collected: usize, expected: usize },
    #[error("interval of {requested_us} us not achievable: mean tick took {observed_us:.2} us")]
    Timing { requested_us: u32, observed_us: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] cloak_core::Error),
}

pub type Result<T, E = CollectError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Pid(i32),
    /// Program and arguments; spawned for the run and killed afterwards.
    Command(Vec<String>),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Pid(p) => write!(f, "pid {p}"),
            Target::Command(c) => write!(f, "'{}'", c.join(" ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleConfig {
    pub target: Target,
    pub interval_us: u32,
    pub duration_ms: u32,
    /// A prefix of the canonical counter order, so the trace CSV header can describe it.
    pub counters: Vec<CounterKind>,
}

impl SampleConfig {
    pub fn new(target: Target) -> Self {
        Self { target, interval_us: 10, duration_ms: 10, counters: CounterKind::ALL.to_vec() }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CollectError::Config(m));
        if self.interval_us == 0 {
            return err("interval_us must be at least 1".into());
        }
        let total_us = u64::from(self.duration_ms) * 1000;
        if total_us < u64::from(self.interval_us) {
            return err(format!("{} ms is shorter than one {} us interval", self.duration_ms, self.interval_us));
        }
        if total_us % u64::from(self.interval_us) != 0 {
            return err(format!("{} ms is not a whole number of {} us intervals", self.duration_ms, self.interval_us));
        }
        if self.counters.is_empty() || self.counters[..] != CounterKind::ALL[..self.counters.len().min(5)] {
            return err("counters must be a nonempty prefix of the canonical order".into());
        }
        match &self.target {
            Target::Pid(p) if *p <= 0 => err(format!("pid {p} is not a process")),
            Target::Command(c) if c.is_empty() => err("empty command".into()),
            _ => Ok(()),
        }
    }

    pub fn n_samples(&self) -> usize {
        (u64::from(self.duration_ms) * 1000 / u64::from(self.interval_us)) as usize
    }

    pub fn interval(&self) -> Duration {
        Duration::from_micros(u64::from(self.interval_us))
    }
}

/// Every counter in canonical order with whether this host can count it for a process.
pub fn list_counters() -> Vec<(CounterKind, bool)> {
    CounterKind::ALL.iter().map(|&c| (c, perf::available(c))).collect()
}

/// Samples the configured target for the configured duration.
pub fn sample_process(config: &SampleConfig) -> Result<Trace<f64>> {
    config.validate()?;
    if let Some(&(c, _)) = list_counters().iter().take(config.counters.len()).find(|(_, ok)| !ok) {
        return Err(CollectError::Unavailable(c));
    }
    match &config.target {
        Target::Pid(pid) => {
            let mut source = perf::PerfSource::attach(*pid, &config.counters)?;
            sample_with(&mut source, config).map(|(t, _)| t)
        }
        Target::Command(argv) => {
            let mut child = Command::new(&argv[0]).args(&argv[1..]).spawn()?;
            let pid = child.id() as i32;
            let result = perf::PerfSource::attach(pid, &config.counters)
                .and_then(|mut source| sample_with(&mut source, config).map(|(t, _)| t));
            let _ = child.kill();
            let _ = child.wait();
            result
        }
    }
}

/// Writes one raw trace as trace CSV, labeled −1 unless a class is given.
pub fn write_trace_csv(path: &Path, trace: &Trace<f64>, label: Option<usize>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let label = label.map_or(-1, |l| l as i64);
    write_traces(file, &Header::for_trace(trace), [(label, trace)])?;
    Ok(())
}
