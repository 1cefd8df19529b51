use std::time::Duration;

use cloak_collect::*;
use cloak_core::trace::CounterKind;
use cloak_core::tracefile::{ingest_csv, read_traces};

/// Counter `c` advances by `c + 1 + (tick % 3)` per read; the target exits after `life` reads.
struct Fake {
    k: usize,
    reads: u64,
    life: u64,
    delay: Duration,
}

impl CounterSource for Fake {
    fn read(&mut self) -> Result<Vec<u64>> {
        std::thread::sleep(self.delay);
        let t = self.reads;
        self.reads += 1;
        Ok((0..self.k as u64).map(|c| (0..t).map(|i| c + 1 + i % 3).sum()).collect())
    }

    fn alive(&mut self) -> bool {
        self.reads < self.life
    }
}

fn fake(k: usize) -> Fake {
    Fake { k, reads: 0, life: u64::MAX, delay: Duration::ZERO }
}

#[test]
fn config_preconditions() {
    let ok = SampleConfig::new(Target::Pid(1));
    assert!(ok.validate().is_ok());
    assert_eq!(ok.n_samples(), 1000);

    let short = SampleConfig { interval_us: 20_000, duration_ms: 10, ..ok.clone() };
    assert!(matches!(short.validate(), Err(CollectError::Config(_))));
    let ragged = SampleConfig { interval_us: 3, duration_ms: 1, ..ok.clone() };
    assert!(ragged.validate().is_err());
    let zero = SampleConfig { interval_us: 0, ..ok.clone() };
    assert!(zero.validate().is_err());
    let gap = SampleConfig { counters: vec![CounterKind::BranchInstructions], ..ok.clone() };
    assert!(gap.validate().is_err());
    let prefix = SampleConfig { counters: CounterKind::first(2).unwrap(), ..ok.clone() };
    assert!(prefix.validate().is_ok());
    assert!(SampleConfig::new(Target::Command(vec![])).validate().is_err());
    assert!(SampleConfig::new(Target::Pid(0)).validate().is_err());
}

#[test]
fn default_run_has_five_by_thousand_interval_counts() {
    let cfg = SampleConfig::new(Target::Pid(1));
    let (trace, report) = sample_with(&mut fake(5), &cfg).unwrap();
    assert_eq!((trace.n_counters(), trace.n_samples()), (5, 1000));
    assert!(!trace.is_normalized());
    assert_eq!(report.ticks, 1000);
    for (c, row) in trace.rows().enumerate() {
        for (t, &v) in row.iter().enumerate() {
            assert_eq!(v, (c + 1 + t % 3) as f64);
        }
    }
    assert!(trace.values().iter().all(|&v| v >= 0.0));
}

#[test]
fn csv_round_trips() {
    let cfg = SampleConfig { duration_ms: 1, ..SampleConfig::new(Target::Pid(1)) };
    let (trace, _) = sample_with(&mut fake(5), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let path = dir.path().join("unlabeled.csv");
    write_trace_csv(&path, &trace, None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let (header, rows) = read_traces::<_, f64>(text.as_bytes()).unwrap();
    assert_eq!(header.n_samples, 100);
    assert_eq!(rows, vec![(-1, trace.clone())]);
    assert!(ingest_csv::<f64>(&path).is_err());

    let path = dir.path().join("labeled.csv");
    write_trace_csv(&path, &trace, Some(3)).unwrap();
    let ds = ingest_csv::<f64>(&path).unwrap();
    assert_eq!(ds.traces.len(), 1);
    assert_eq!(ds.traces[0].label, 3);
    assert_eq!(ds.traces[0].trace, trace);
}

#[test]
fn vanished_target_is_a_partial_trace() {
    let cfg = SampleConfig { duration_ms: 1, ..SampleConfig::new(Target::Pid(1)) };
    let mut f = Fake { life: 40, ..fake(3) };
    let cfg = SampleConfig { counters: CounterKind::first(3).unwrap(), ..cfg };
    match sample_with(&mut f, &cfg) {
        Err(CollectError::PartialTrace { collected, expected }) => {
            assert_eq!(expected, 100);
            assert_eq!(collected, 39);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn slow_reads_are_a_timing_error() {
    let cfg = SampleConfig { duration_ms: 1, ..SampleConfig::new(Target::Pid(1)) };
    let mut f = Fake { delay: Duration::from_micros(40), ..fake(5) };
    assert!(matches!(sample_with(&mut f, &cfg), Err(CollectError::Timing { requested_us: 10, .. })));
}

#[test]
fn counter_listing_is_fixed() {
    let l = list_counters();
    assert_eq!(l.iter().map(|(c, _)| *c).collect::<Vec<_>>(), CounterKind::ALL.to_vec());
}

#[test]
fn live_sampling_matches_host_capabilities() {
    let cfg = SampleConfig::new(Target::Command(vec!["sleep".into(), "2".into()]));
    let all = list_counters().iter().all(|(_, ok)| *ok);
    match sample_process(&cfg) {
        Ok(t) => {
            assert!(all);
            assert_eq!((t.n_counters(), t.n_samples()), (5, 1000));
        }
        Err(CollectError::Unavailable(c)) => {
            assert!(!all);
            assert!(!list_counters()[c.index()].1);
        }
        // A loaded host may miss the interval; that is reported, not hidden.
        Err(CollectError::Timing { .. }) => assert!(all),
        Err(e) => panic!("{e}"),
    }
}
