//! Deterministic synthetic leakage generator.
//!
//! Each class owns a template signal per counter: a base level, one sinusoid and a few
//! non-overlapping rectangular bursts. A trace is its class template plus i.i.d. Gaussian
//! noise, clipped to `[0, 1]`. Templates are redrawn until every pair of classes is far
//! apart relative to the noise level, so classes are separable by construction.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{split_dataset, Dataset, Split, SplitRatios};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{self, BoxMuller};
use crate::trace::{CounterKind, LabeledTrace, Trace};

/// Display names for the 20-class cipher workload set.
pub const CIPHER_CLASSES: [&str; 20] = [
    "AES-128-CBC",
    "BF-CBC",
    "BLOWFISH",
    "CAMELLIA-128-CBC",
    "DES-CBC",
    "DES-EDE3",
    "DSA2048",
    "ECDH",
    "ECDHB571",
    "ECDHK571",
    "ECDHP521",
    "ECDSA",
    "ECDSAB571",
    "ECDSAP521",
    "HMAC",
    "MD4",
    "MD5",
    "RC2",
    "RC2-CBC",
    "RC4",
];

/// Display names for the 5-class library version detection set.
pub const LIBRARY_VERSIONS: [&str; 5] = ["0.9.8", "1.0.0", "1.0.1", "1.0.2", "1.1.0"];

pub fn class_names(n_classes: usize) -> Vec<String> {
    match n_classes {
        20 => CIPHER_CLASSES.iter().map(|s| s.to_string()).collect(),
        5 => LIBRARY_VERSIONS.iter().map(|s| format!("openssl-{s}")).collect(),
        n => (0..n).map(|i| format!("class{i}")).collect(),
    }
}

const MAX_RETRIES: usize = 100;
const SIGNAL_LO: f64 = 0.05;
const SIGNAL_HI: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_classes: usize,
    pub n_counters: usize,
    pub n_samples: usize,
    /// Noise standard deviation in normalized units.
    pub noise_std: f64,
    pub seed: u64,
    pub interval_us: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { n_classes: 20, n_counters: 5, n_samples: 1000, noise_std: 0.02, seed: 0, interval_us: 10 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_samples == 0 || self.interval_us == 0 {
            return Err(Error::InvalidArgument("generator sizes must be positive".into()));
        }
        CounterKind::first(self.n_counters)?;
        if !(self.noise_std >= 0.0 && self.noise_std < 0.1) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be in [0, 0.1), got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Flat `key = value` form.
    pub fn to_kv(&self) -> String {
        format!(
            "classes = {}\ncounters = {}\nsamples = {}\nnoise_std = {}\nseed = {}\ninterval_us = {}\n",
            self.n_classes, self.n_counters, self.n_samples, self.noise_std, self.seed, self.interval_us
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        let mut cfg = GenConfig::default();
        for (key, value) in &map {
            let bad = || Error::InvalidArgument(format!("bad value for {key}: '{value}'"));
            match key.as_str() {
                "classes" => cfg.n_classes = value.parse().map_err(|_| bad())?,
                "counters" => cfg.n_counters = value.parse().map_err(|_| bad())?,
                "samples" => cfg.n_samples = value.parse().map_err(|_| bad())?,
                "noise_std" => cfg.noise_std = value.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "interval_us" => cfg.interval_us = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::InvalidArgument(format!("unknown generator key '{key}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Minimum Frobenius distance required between two class templates.
    pub fn separation_bound(&self) -> f64 {
        10.0 * self.noise_std * ((self.n_counters * self.n_samples) as f64).sqrt()
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected key = value, got '{line}'"),
        })?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Parse { line: i + 1, message: format!("duplicate key '{}'", k.trim()) });
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub offset: usize,
    pub width: usize,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterTemplate {
    pub base: f64,
    pub amplitude: f64,
    /// Sinusoid period in samples.
    pub period: f64,
    pub phase: f64,
    pub bursts: Vec<Burst>,
}

impl CounterTemplate {
    fn draw<R: Rng>(rng: &mut R, n_samples: usize) -> Self {
        let base = rng.gen_range(0.2..0.8);
        let room = (base - SIGNAL_LO).min(SIGNAL_HI - base);
        let amplitude = rng.gen_range(0.3..0.6) * room;
        let max_period = (n_samples as f64 / 2.0).max(16.0);
        let period = rng.gen_range(8.0..max_period);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let n_bursts = rng.gen_range(1..=3usize).min(n_samples);
        let segment = n_samples / n_bursts;
        let mut bursts = Vec::with_capacity(n_bursts);
        for k in 0..n_bursts {
            if segment == 0 {
                break;
            }
            let max_width = (segment / 2).max(1);
            let min_width = (n_samples / 40).clamp(1, max_width);
            let width = rng.gen_range(min_width..=max_width);
            let offset = k * segment + rng.gen_range(0..=segment - width);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let height = sign * rng.gen_range(0.5..1.0) * (room - amplitude);
            bursts.push(Burst { offset, width, height });
        }
        Self { base, amplitude, period, phase, bursts }
    }

    fn render(&self, n_samples: usize, out: &mut Vec<f64>) {
        let start = out.len();
        out.extend((0..n_samples).map(|t| {
            self.base + self.amplitude * (2.0 * PI * t as f64 / self.period + self.phase).sin()
        }));
        for b in &self.bursts {
            for v in &mut out[start + b.offset..start + b.offset + b.width] {
                *v += b.height;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTemplate {
    pub counters: Vec<CounterTemplate>,
    /// Rendered noiseless signal, counter-major.
    pub signal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub config: GenConfig,
    pub classes: Vec<ClassTemplate>,
}

fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Draws one template per class, rejection-resampling any class that lands closer than
/// [`GenConfig::separation_bound`] to an earlier one.
pub fn make_templates(config: &GenConfig) -> Result<TemplateSet> {
    config.validate()?;
    let bound = config.separation_bound();
    let stream = seed::mix(config.seed, 1);
    let mut classes: Vec<ClassTemplate> = Vec::with_capacity(config.n_classes);
    for class in 0..config.n_classes {
        let mut accepted = None;
        for attempt in 0..MAX_RETRIES {
            let mut rng = seed::rng(seed::mix2(stream, class as u64, attempt as u64));
            let counters: Vec<CounterTemplate> = (0..config.n_counters)
                .map(|_| CounterTemplate::draw(&mut rng, config.n_samples))
                .collect();
            let mut signal = Vec::with_capacity(config.n_counters * config.n_samples);
            for c in &counters {
                c.render(config.n_samples, &mut signal);
            }
            if classes.iter().all(|other| frobenius(&other.signal, &signal) >= bound) {
                accepted = Some(ClassTemplate { counters, signal });
                break;
            }
        }
        match accepted {
            Some(t) => classes.push(t),
            None => return Err(Error::TooCrowded { class, retries: MAX_RETRIES }),
        }
    }
    Ok(TemplateSet { config: config.clone(), classes })
}

/// Template of `class_id` plus seeded Gaussian noise, clipped to `[0, 1]`.
pub fn generate_trace<S: Scalar>(
    templates: &TemplateSet,
    class_id: usize,
    sample_seed: u64,
) -> LabeledTrace<S> {
    let cfg = &templates.config;
    let template = &templates.classes[class_id];
    let mut gauss = BoxMuller::new(seed::rng(sample_seed));
    let values = template
        .signal
        .iter()
        .map(|&v| S::lit((v + cfg.noise_std * gauss.next_normal()).clamp(0.0, 1.0)))
        .collect();
    let counters = CounterKind::first(cfg.n_counters).expect("validated");
    let trace = Trace::new(counters, cfg.n_samples, values, true, cfg.interval_us)
        .expect("template geometry is consistent");
    LabeledTrace { trace, label: class_id }
}

/// Seed of the `index`-th generated trace of `class_id`.
pub fn sample_seed(config: &GenConfig, class_id: usize, index: usize) -> u64 {
    seed::mix2(seed::mix(config.seed, 2), class_id as u64, index as u64)
}

/// `n_per_class` traces per class in class-major order, split 0.8/0.1/0.1 stratified.
pub fn generate_dataset<S: Scalar>(config: &GenConfig, n_per_class: usize) -> Result<Dataset<S>> {
    if n_per_class < 3 {
        return Err(Error::InvalidArgument("need at least 3 traces per class".into()));
    }
    let templates = make_templates(config)?;
    let traces: Vec<LabeledTrace<S>> = (0..config.n_classes * n_per_class)
        .into_par_iter()
        .map(|i| {
            let (class, k) = (i / n_per_class, i % n_per_class);
            generate_trace(&templates, class, sample_seed(config, class, k))
        })
        .collect();
    let ds = Dataset::new(traces, config.n_classes, Split::Train)?;
    split_dataset(&ds, SplitRatios::default(), seed::mix(config.seed, 3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig { n_classes: 6, n_counters: 3, n_samples: 64, seed: 9, ..GenConfig::default() }
    }

    #[test]
    fn templates_are_deterministic_and_bounded() {
        let a = make_templates(&small()).unwrap();
        let b = make_templates(&small()).unwrap();
        assert_eq!(a, b);
        for class in &a.classes {
            assert!(class.signal.iter().all(|v| (SIGNAL_LO - 1e-12..=SIGNAL_HI + 1e-12).contains(v)));
        }
    }

    #[test]
    fn single_class_is_trivially_separable() {
        let cfg = GenConfig { n_classes: 1, ..small() };
        assert_eq!(make_templates(&cfg).unwrap().classes.len(), 1);
    }

    #[test]
    fn default_templates_meet_separation_bound() {
        let cfg = GenConfig { seed: 1, ..GenConfig::default() };
        let set = make_templates(&cfg).unwrap();
        let bound = 10.0 * 0.02 * 5000f64.sqrt();
        let mut min = f64::INFINITY;
        for i in 0..set.classes.len() {
            for j in i + 1..set.classes.len() {
                min = min.min(frobenius(&set.classes[i].signal, &set.classes[j].signal));
            }
        }
        assert!(min >= bound, "min pairwise distance {min} < {bound}");
    }

    #[test]
    fn crowded_parameters_fail() {
        let cfg = GenConfig { n_classes: 50, n_counters: 1, noise_std: 0.09, ..small() };
        assert!(matches!(make_templates(&cfg), Err(Error::TooCrowded { .. })));
    }

    #[test]
    fn zero_noise_reproduces_template() {
        let cfg = GenConfig { noise_std: 0.0, ..small() };
        let set = make_templates(&cfg).unwrap();
        let t: LabeledTrace<f64> = generate_trace(&set, 2, 77);
        assert_eq!(t.trace.values(), set.classes[2].signal.as_slice());
        assert!(t.trace.is_normalized());
    }

    #[test]
    fn traces_are_deterministic() {
        let set = make_templates(&small()).unwrap();
        let a: LabeledTrace<f64> = generate_trace(&set, 1, 5);
        let b: LabeledTrace<f64> = generate_trace(&set, 1, 5);
        assert_eq!(a, b);
        let c: LabeledTrace<f64> = generate_trace(&set, 1, 6);
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_noise_std_matches() {
        let set = make_templates(&small()).unwrap();
        let n = 100;
        let traces: Vec<LabeledTrace<f64>> = (0..n).map(|k| generate_trace(&set, 0, k)).collect();
        let signal = &set.classes[0].signal;
        let noise = set.config.noise_std;
        for (i, &mu) in signal.iter().enumerate() {
            if mu < 4.0 * noise || mu > 1.0 - 4.0 * noise {
                continue;
            }
            let xs: Vec<f64> = traces.iter().map(|t| t.trace.values()[i]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            assert!((0.5 * noise..=1.5 * noise).contains(&sd), "entry {i}: sd {sd}");
        }
    }

    #[test]
    fn dataset_sizes() {
        let cfg = GenConfig { n_classes: 20, n_samples: 16, ..small() };
        let ds: Dataset<f64> = generate_dataset(&cfg, 100).unwrap();
        assert_eq!(ds.len(), 2000);
        assert_eq!(ds.split_len(Split::Train), 1600);
        assert!(generate_dataset::<f64>(&cfg, 2).is_err());
    }

    #[test]
    fn kv_round_trip_and_errors() {
        let cfg = GenConfig { noise_std: 0.015, seed: 42, ..small() };
        assert_eq!(GenConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(GenConfig::from_kv("colour = red").is_err());
        assert!(GenConfig::from_kv("noise_std = 0.5").is_err());
        assert!(GenConfig::from_kv("seed").is_err());
    }
}
