use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    /// One minus the cosine similarity.
    Cosine,
    /// Minkowski distance with p = 3.
    Cubic,
}

impl Metric {
    pub fn distance<S: Scalar>(self, a: &[S], b: &[S]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = (x - y).as_f64();
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Metric::Cubic => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x - y).as_f64().abs().powi(3))
                .sum::<f64>()
                .cbrt(),
            Metric::Cosine => {
                let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (x.as_f64(), y.as_f64());
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                if aa == 0.0 || bb == 0.0 {
                    1.0
                } else {
                    (1.0 - ab / (aa.sqrt() * bb.sqrt())).max(0.0)
                }
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Cubic => "cubic",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            "cubic" | "minkowski3" => Ok(Metric::Cubic),
            _ => Err(Error::InvalidArgument(format!("unknown metric '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Metric,
    /// Votes weighted by inverse distance.
    pub weighted: bool,
}

impl KnnConfig {
    pub const fn fine() -> Self {
        Self { k: 1, metric: Metric::Euclidean, weighted: false }
    }

    pub const fn medium() -> Self {
        Self { k: 10, metric: Metric::Euclidean, weighted: false }
    }

    pub const fn coarse() -> Self {
        Self { k: 100, metric: Metric::Euclidean, weighted: false }
    }

    pub const fn cosine() -> Self {
        Self { k: 10, metric: Metric::Cosine, weighted: false }
    }

    pub const fn cubic() -> Self {
        Self { k: 10, metric: Metric::Cubic, weighted: false }
    }

    pub const fn weighted() -> Self {
        Self { k: 10, metric: Metric::Euclidean, weighted: true }
    }
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self::fine()
    }
}

/// Brute-force nearest-neighbour vote over a stored training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Knn<S = f64> {
    pub config: KnnConfig,
    pub n_classes: usize,
    pub xs: Vec<Vec<S>>,
    pub ys: Vec<usize>,
}

impl<S: Scalar> Knn<S> {
    pub fn fit(config: KnnConfig, xs: &[&[S]], ys: &[usize], n_classes: usize) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::NoTrainingData);
        }
        if xs.len() != ys.len() {
            return Err(Error::Shape(format!("{} inputs, {} labels", xs.len(), ys.len())));
        }
        if config.k == 0 || config.k > xs.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {} must be in 1..={} (training set size)",
                config.k,
                xs.len()
            )));
        }
        if xs.iter().any(|x| x.len() != xs[0].len()) {
            return Err(Error::Shape("training inputs of differing length".into()));
        }
        if let Some(&y) = ys.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        Ok(Self { config, n_classes, xs: xs.iter().map(|x| x.to_vec()).collect(), ys: ys.to_vec() })
    }

    /// The `k` nearest training indices with their distances, nearest first; equal
    /// distances keep training order.
    pub fn neighbors(&self, x: &[S]) -> Result<Vec<(usize, f64)>> {
        if x.len() != self.xs[0].len() {
            return Err(Error::Shape(format!("query of length {} for inputs of {}", x.len(), self.xs[0].len())));
        }
        let mut d: Vec<(usize, f64)> =
            self.xs.iter().enumerate().map(|(i, t)| (i, self.config.metric.distance(x, t))).collect();
        let k = self.config.k;
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k);
        }
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(d)
    }

    /// Vote shares per class. A weighted vote with an exact match puts all mass on that
    /// neighbour's label.
    pub fn votes(&self, x: &[S]) -> Result<Vec<f64>> {
        let nb = self.neighbors(x)?;
        let mut v = vec![0.0; self.n_classes];
        if self.config.weighted {
            if let Some(&(i, _)) = nb.iter().find(|(_, d)| *d == 0.0) {
                v[self.ys[i]] = 1.0;
                return Ok(v);
            }
            for &(i, d) in &nb {
                v[self.ys[i]] += 1.0 / d;
            }
        } else {
            for &(i, _) in &nb {
                v[self.ys[i]] += 1.0;
            }
        }
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= total);
        Ok(v)
    }

    /// Majority label, ties to the smallest class index.
    pub fn classify(&self, x: &[S]) -> Result<usize> {
        Ok(argmax(&self.votes(x)?))
    }
}

impl<S: Scalar> Classifier<S> for Knn<S> {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_len(&self) -> usize {
        self.xs[0].len()
    }

    fn predict_proba(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(self.votes(x)?.into_iter().map(S::lit).collect())
    }
}
