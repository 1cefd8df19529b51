//! Leakage traces and the perturbation-size metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The five interval counters sampled per trace, in their fixed serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CounterKind {
    TotalInstructions,
    BranchInstructions,
    TotalCacheReferences,
    L1InstructionCacheMiss,
    L1DataCacheMiss,
}

impl CounterKind {
    pub const ALL: [CounterKind; 5] = [
        CounterKind::TotalInstructions,
        CounterKind::BranchInstructions,
        CounterKind::TotalCacheReferences,
        CounterKind::L1InstructionCacheMiss,
        CounterKind::L1DataCacheMiss,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CounterKind::TotalInstructions => "total_instructions",
            CounterKind::BranchInstructions => "branch_instructions",
            CounterKind::TotalCacheReferences => "total_cache_references",
            CounterKind::L1InstructionCacheMiss => "l1_icache_miss",
            CounterKind::L1DataCacheMiss => "l1_dcache_miss",
        }
    }

    /// The first `n` counters in canonical order.
    pub fn first(n: usize) -> Result<Vec<CounterKind>> {
        if n == 0 || n > Self::ALL.len() {
            return Err(Error::InvalidArgument(format!(
                "counter count must be in 1..=5, got {n}"
            )));
        }
        Ok(Self::ALL[..n].to_vec())
    }
}

impl fmt::Display for CounterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CounterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CounterKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown counter '{s}'")))
    }
}

/// A matrix of interval counts, `n_counters × n_samples`, stored counter-major.
///
/// The flat counter-major layout is also the single-channel input sequence consumed by
/// the classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<S = f64> {
    counters: Vec<CounterKind>,
    n_samples: usize,
    values: Vec<S>,
    normalized: bool,
    interval_us: u32,
}

impl<S: Scalar> Trace<S> {
    pub fn new(
        counters: Vec<CounterKind>,
        n_samples: usize,
        values: Vec<S>,
        normalized: bool,
        interval_us: u32,
    ) -> Result<Self> {
        if counters.is_empty() || n_samples == 0 {
            return Err(Error::Shape("trace needs at least one counter and one sample".into()));
        }
        if values.len() != counters.len() * n_samples {
            return Err(Error::Shape(format!(
                "{} values for {} counters x {} samples",
                values.len(),
                counters.len(),
                n_samples
            )));
        }
        if normalized {
            if let Some(v) = values.iter().find(|v| !(**v >= S::zero() && **v <= S::one())) {
                return Err(Error::InvalidArgument(format!(
                    "normalized trace value {v} outside [0, 1]"
                )));
            }
        } else if let Some(v) = values.iter().find(|v| !(**v >= S::zero())) {
            return Err(Error::InvalidArgument(format!("negative raw count {v}")));
        }
        Ok(Self { counters, n_samples, values, normalized, interval_us })
    }

    /// A normalized trace with the same geometry as `self` but new values.
    pub fn with_values(&self, values: Vec<S>) -> Result<Self> {
        Self::new(self.counters.clone(), self.n_samples, values, self.normalized, self.interval_us)
    }

    pub fn counters(&self) -> &[CounterKind] {
        &self.counters
    }

    pub fn n_counters(&self) -> usize {
        self.counters.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn row(&self, counter: usize) -> &[S] {
        &self.values[counter * self.n_samples..(counter + 1) * self.n_samples]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.values.chunks_exact(self.n_samples)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn interval_us(&self) -> u32 {
        self.interval_us
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.counters == other.counters && self.n_samples == other.n_samples
    }

    pub fn cast<T: Scalar>(&self) -> Trace<T> {
        Trace {
            counters: self.counters.clone(),
            n_samples: self.n_samples,
            values: self.values.iter().map(|v| T::lit(v.as_f64())).collect(),
            normalized: self.normalized,
            interval_us: self.interval_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace<S = f64> {
    pub trace: Trace<S>,
    pub label: usize,
}

/// Mean absolute and mean squared per-coordinate distance between two traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distances<S = f64> {
    pub mad: S,
    pub msd: S,
}

pub fn distance<S: Scalar>(a: &Trace<S>, b: &Trace<S>) -> Result<Distances<S>> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.n_counters(),
            a.n_samples(),
            b.n_counters(),
            b.n_samples()
        )));
    }
    if a.normalized != b.normalized {
        return Err(Error::InvalidArgument("cannot compare raw and normalized traces".into()));
    }
    distance_slices(a.values(), b.values())
}

/// [`distance`] on flat value slices.
pub fn distance_slices<S: Scalar>(a: &[S], b: &[S]) -> Result<Distances<S>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    let mut abs = S::zero();
    let mut sq = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        abs += d.abs();
        sq += d * d;
    }
    let n = S::from_usize_lossy(a.len());
    Ok(Distances { mad: abs / n, msd: sq / n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(values: Vec<f64>, n_samples: usize) -> Trace {
        let n_counters = values.len() / n_samples;
        Trace::new(CounterKind::first(n_counters).unwrap(), n_samples, values, true, 10).unwrap()
    }

    #[test]
    fn counter_order_is_fixed() {
        assert_eq!(CounterKind::ALL.len(), 5);
        for (i, c) in CounterKind::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(c.name().parse::<CounterKind>().unwrap(), *c);
        }
    }

    #[test]
    fn trace_rejects_bad_geometry_and_values() {
        let c = CounterKind::first(2).unwrap();
        assert!(Trace::new(c.clone(), 3, vec![0.0; 5], true, 10).is_err());
        assert!(Trace::<f64>::new(c.clone(), 0, vec![], true, 10).is_err());
        assert!(Trace::new(c.clone(), 1, vec![0.5, 1.5], true, 10).is_err());
        assert!(Trace::new(c.clone(), 1, vec![-1.0, 2.0], false, 10).is_err());
        assert!(Trace::new(c, 1, vec![12.0, 2.0], false, 10).is_ok());
    }

    #[test]
    fn distance_examples() {
        let a = t(vec![0.1, 0.2, 0.3, 0.4], 2);
        let d = distance(&a, &a).unwrap();
        assert_eq!((d.mad, d.msd), (0.0, 0.0));

        let b = t(a.values().iter().map(|v| v + 0.01).collect(), 2);
        let d = distance(&a, &b).unwrap();
        assert!((d.mad - 0.01).abs() < 1e-15);
        assert!((d.msd - 1e-4).abs() < 1e-15);

        let z = t(vec![0.0; 4], 4);
        let p = t(vec![0.2, 0.0, 0.0, 0.0], 4);
        let d = distance(&z, &p).unwrap();
        assert!((d.mad - 0.05).abs() < 1e-15);
        assert!((d.msd - 0.01).abs() < 1e-15);
    }

    #[test]
    fn distance_shape_mismatch() {
        let a = t(vec![0.0; 4], 2);
        let b = t(vec![0.0; 4], 4);
        assert!(matches!(distance(&a, &b), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_jensen(
            pair in (1usize..40).prop_flat_map(|n| (
                proptest::collection::vec(0.0f64..=1.0, n),
                proptest::collection::vec(0.0f64..=1.0, n),
            ))
        ) {
            let (a, b) = pair;
            let n = a.len();
            let ta = t(a, n);
            let tb = t(b, n);
            let d1 = distance(&ta, &tb).unwrap();
            let d2 = distance(&tb, &ta).unwrap();
            prop_assert_eq!(d1, d2);
            prop_assert!(d1.msd >= d1.mad * d1.mad - 1e-15);
            prop_assert_eq!(d1.mad == 0.0, ta == tb);
            prop_assert_eq!(d1.msd == 0.0, ta == tb);
        }
    }
}
