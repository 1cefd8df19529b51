use std::hint::spin_loop;
use std::time::Instant;

use cloak_core::trace::Trace;

use crate::{CollectError, Result, SampleConfig};

/// Cumulative event counts of one target.
pub trait CounterSource {
    /// Current cumulative count of every counter, in configuration order.
    fn read(&mut self) -> Result<Vec<u64>>;
    /// False once the target has exited.
    fn alive(&mut self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub ticks: usize,
    pub mean_tick_us: f64,
    pub max_tick_us: f64,
}

/// Per-interval counts from `reads[0..=n]`, counter-major (`k × n`). A counter that
/// goes backwards contributes 0 for that interval.
pub fn interval_counts(reads: &[Vec<u64>]) -> Vec<f64> {
    let k = reads.first().map_or(0, Vec::len);
    let n = reads.len().saturating_sub(1);
    let mut out = vec![0.0; k * n];
    for (t, pair) in reads.windows(2).enumerate() {
        for c in 0..k {
            out[c * n + t] = pair[1][c].saturating_sub(pair[0][c]) as f64;
        }
    }
    out
}

/// Reads `source` once per interval against absolute deadlines, so a late tick is
/// followed by a short one rather than shifting the rest of the run.
pub fn sample_with<C: CounterSource + ?Sized>(source: &mut C, config: &SampleConfig) -> Result<(Trace<f64>, TimingReport)> {
    config.validate()?;
    let n = config.n_samples();
    let interval = config.interval();
    let mut reads = Vec::with_capacity(n + 1);
    let mut stamps = Vec::with_capacity(n + 1);
    reads.push(source.read()?);
    let start = Instant::now();
    stamps.push(start);
    for i in 1..=n {
        let deadline = start + interval * i as u32;
        while Instant::now() < deadline {
            spin_loop();
        }
        if !source.alive() {
            return Err(CollectError::PartialTrace { collected: i - 1, expected: n });
        }
        reads.push(source.read()?);
        stamps.push(Instant::now());
    }
    let ticks: Vec<f64> = stamps.windows(2).map(|w| (w[1] - w[0]).as_secs_f64() * 1e6).collect();
    let report = TimingReport {
        ticks: n,
        mean_tick_us: (stamps[n] - stamps[0]).as_secs_f64() * 1e6 / n as f64,
        max_tick_us: ticks.iter().copied().fold(0.0, f64::max),
    };
    if report.mean_tick_us > 1.5 * f64::from(config.interval_us) {
        return Err(CollectError::Timing { requested_us: config.interval_us, observed_us: report.mean_tick_us });
    }
    let trace = Trace::new(config.counters.clone(), n, interval_counts(&reads), false, config.interval_us)?;
    Ok((trace, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_are_counter_major() {
        let reads = vec![vec![0, 10], vec![3, 15], vec![7, 15]];
        assert_eq!(interval_counts(&reads), vec![3.0, 4.0, 5.0, 0.0]);
    }

    #[test]
    fn counters_going_backwards_clamp_to_zero() {
        let reads = vec![vec![5], vec![2], vec![9]];
        assert_eq!(interval_counts(&reads), vec![0.0, 7.0]);
    }
}
