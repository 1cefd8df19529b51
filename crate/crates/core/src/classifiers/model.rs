//! Every classifier family behind one serializable type.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::knn::{Knn, KnnConfig};
use super::linear::{linear_fit, LinearConfig};
use super::pca::{pca_fit, PcaModel};
use super::tree::{tree_fit, Tree, TreeConfig};
use super::{split_xy, Classifier, Differentiable};
use crate::dataset::{Dataset, NormStats, Split};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::scalar::Scalar;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const PCA_VARIANCE: f64 = 0.995;

/// A classical classifier family with its preset, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Knn(KnnConfig),
    Tree(TreeConfig),
    Linear,
}

impl Family {
    pub const NAMES: [&'static str; 10] = [
        "knn-fine",
        "knn-medium",
        "knn-coarse",
        "knn-cosine",
        "knn-cubic",
        "knn-weighted",
        "tree-fine",
        "tree-medium",
        "tree-coarse",
        "linear",
    ];
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "knn-fine" => Family::Knn(KnnConfig::fine()),
            "knn-medium" => Family::Knn(KnnConfig::medium()),
            "knn-coarse" => Family::Knn(KnnConfig::coarse()),
            "knn-cosine" => Family::Knn(KnnConfig::cosine()),
            "knn-cubic" => Family::Knn(KnnConfig::cubic()),
            "knn-weighted" => Family::Knn(KnnConfig::weighted()),
            "tree-fine" => Family::Tree(TreeConfig::fine()),
            "tree-medium" => Family::Tree(TreeConfig::medium()),
            "tree-coarse" => Family::Tree(TreeConfig::coarse()),
            "linear" => Family::Linear,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown classifier '{s}' (expected cnn or one of {})",
                    Family::NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Knn(c) => write!(f, "knn(k={}, {}{})", c.k, c.metric, if c.weighted { ", weighted" } else { "" }),
            Family::Tree(c) => write!(f, "tree(max_splits={})", c.max_splits),
            Family::Linear => f.write_str("linear"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head<S = f64> {
    Knn(Knn<S>),
    Tree(Tree),
    Linear(Network<S>),
}

/// A classical classifier, optionally behind a PCA projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Classical<S = f64> {
    pub input_len: usize,
    pub n_classes: usize,
    pub norm_stats: Option<NormStats>,
    pub pca: Option<PcaModel>,
    pub head: Head<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model<S = f64> {
    Cnn(Network<S>),
    Classical(Classical<S>),
}

/// Fits `family` on the train split, projecting onto the principal components first
/// when `pca` is set.
pub fn fit_classical<S: Scalar>(
    family: Family,
    dataset: &Dataset<S>,
    pca: bool,
    seed: u64,
    linear_epochs: usize,
) -> Result<Classical<S>> {
    let (xs, ys) = split_xy(dataset, Split::Train);
    if xs.is_empty() {
        return Err(Error::NoTrainingData);
    }
    let input_len = xs[0].len();
    let pca = if pca { Some(pca_fit(&xs, PCA_VARIANCE)?) } else { None };
    let reduced: Option<Vec<Vec<S>>> = match &pca {
        Some(p) => Some(xs.iter().map(|x| p.transform(x)).collect::<Result<_>>()?),
        None => None,
    };
    let inputs: Vec<&[S]> = match &reduced {
        Some(r) => r.iter().map(|x| &x[..]).collect(),
        None => xs,
    };
    let n = dataset.n_classes;
    let head = match family {
        Family::Knn(c) => Head::Knn(Knn::fit(c, &inputs, &ys, n)?),
        Family::Tree(c) => Head::Tree(tree_fit(&inputs, &ys, n, c)?),
        Family::Linear => Head::Linear(linear_fit(&inputs, &ys, n, &LinearConfig { epochs: linear_epochs, seed })?),
    };
    Ok(Classical { input_len, n_classes: n, norm_stats: dataset.norm_stats.clone(), pca, head })
}

impl<S: Scalar> Classical<S> {
    fn kind(&self) -> &'static str {
        match self.head {
            Head::Knn(_) => "knn",
            Head::Tree(_) => "tree",
            Head::Linear(_) => "linear",
        }
    }

    fn project(&self, x: &[S]) -> Result<Option<Vec<S>>> {
        if x.len() != self.input_len {
            return Err(Error::Shape(format!("input of length {} for a model over {}", x.len(), self.input_len)));
        }
        self.pca.as_ref().map(|p| p.transform(x)).transpose()
    }

    fn to_json(&self) -> Value {
        let head = match &self.head {
            Head::Knn(k) => {
                let xs: Vec<Vec<f64>> = k.xs.iter().map(|x| x.iter().map(|v| v.as_f64()).collect()).collect();
                json!({ "config": k.config, "xs": xs, "ys": k.ys })
            }
            Head::Tree(t) => serde_json::to_value(t).expect("tree serializes"),
            Head::Linear(net) => net.to_json(),
        };
        json!({
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind(),
            "input_len": self.input_len,
            "n_classes": self.n_classes,
            "norm_stats": self.norm_stats,
            "pca": self.pca,
            "head": head,
        })
    }

    fn from_json(kind: &str, doc: &Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            input_len: usize,
            n_classes: usize,
            norm_stats: Option<NormStats>,
            pca: Option<PcaModel>,
            head: Value,
        }
        #[derive(Deserialize)]
        struct KnnDoc {
            config: KnnConfig,
            xs: Vec<Vec<f64>>,
            ys: Vec<usize>,
        }
        let d = Doc::deserialize(doc)?;
        let head = match kind {
            "knn" => {
                let k = KnnDoc::deserialize(&d.head)?;
                let xs: Vec<Vec<S>> = k.xs.iter().map(|x| x.iter().map(|&v| S::lit(v)).collect()).collect();
                let refs: Vec<&[S]> = xs.iter().map(|x| &x[..]).collect();
                Head::Knn(Knn::fit(k.config, &refs, &k.ys, d.n_classes)?)
            }
            "tree" => Head::Tree(Tree::deserialize(&d.head)?),
            "linear" => Head::Linear(Network::from_json(&d.head)?),
            _ => return Err(Error::Format(format!("unknown model kind '{kind}'"))),
        };
        let m = Self { input_len: d.input_len, n_classes: d.n_classes, norm_stats: d.norm_stats, pca: d.pca, head };
        let head_len = match &m.head {
            Head::Knn(k) => k.xs[0].len(),
            Head::Tree(t) => t.input_len,
            Head::Linear(n) => n.input_len(),
        };
        let expected = m.pca.as_ref().map_or(m.input_len, |p| p.n_components());
        if head_len != expected || m.pca.as_ref().is_some_and(|p| p.input_len() != m.input_len) {
            return Err(Error::Format("model dimensions are inconsistent".into()));
        }
        Ok(m)
    }
}

impl<S: Scalar> Classifier<S> for Classical<S> {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_len(&self) -> usize {
        self.input_len
    }

    fn predict_proba(&self, x: &[S]) -> Result<Vec<S>> {
        let reduced = self.project(x)?;
        let x = reduced.as_deref().unwrap_or(x);
        match &self.head {
            Head::Knn(k) => k.predict_proba(x),
            Head::Tree(t) => t.predict_proba(x),
            Head::Linear(n) => n.predict_proba(x),
        }
    }

    fn differentiable(&self) -> Option<&dyn Differentiable<S>> {
        match self.head {
            Head::Linear(_) => Some(self),
            _ => None,
        }
    }
}

impl<S: Scalar> Differentiable<S> for Classical<S> {
    fn logits_vjp(
        &self,
        x: &[S],
        cotangents: &mut dyn FnMut(&[S]) -> Vec<Vec<S>>,
    ) -> Result<(Vec<S>, Vec<Vec<S>>)> {
        let Head::Linear(net) = &self.head else {
            return Err(Error::RequiresGradients);
        };
        let reduced = self.project(x)?;
        let (z, grads) = net.logits_vjp(reduced.as_deref().unwrap_or(x), cotangents)?;
        let grads = match &self.pca {
            Some(p) => grads.iter().map(|g| p.backproject(g)).collect(),
            None => grads,
        };
        Ok((z, grads))
    }
}

impl<S: Scalar> Model<S> {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Cnn(_) => "cnn",
            Model::Classical(c) => c.kind(),
        }
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        match self {
            Model::Cnn(n) => n.norm_stats.as_ref(),
            Model::Classical(c) => c.norm_stats.as_ref(),
        }
    }

    pub fn as_network(&self) -> Option<&Network<S>> {
        match self {
            Model::Cnn(n) => Some(n),
            Model::Classical(_) => None,
        }
    }

    fn inner(&self) -> &dyn Classifier<S> {
        match self {
            Model::Cnn(n) => n,
            Model::Classical(c) => c,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Model::Cnn(n) => n.to_json(),
            Model::Classical(c) => c.to_json(),
        }
    }

    pub fn from_json(doc: &Value) -> Result<Self> {
        let version = doc.get("format_version").and_then(Value::as_u64);
        if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
            return Err(Error::Format(format!("unsupported format_version {version:?}")));
        }
        match doc.get("kind").and_then(Value::as_str) {
            Some("cnn") => Ok(Model::Cnn(Network::from_json(doc)?)),
            Some(kind) => Ok(Model::Classical(Classical::from_json(kind, doc)?)),
            None => Err(Error::Format("model document has no 'kind'".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_json())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }
}

impl<S: Scalar> From<Network<S>> for Model<S> {
    fn from(n: Network<S>) -> Self {
        Model::Cnn(n)
    }
}

impl<S: Scalar> From<Classical<S>> for Model<S> {
    fn from(c: Classical<S>) -> Self {
        Model::Classical(c)
    }
}

impl<S: Scalar> Classifier<S> for Model<S> {
    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }

    fn input_len(&self) -> usize {
        self.inner().input_len()
    }

    fn predict_proba(&self, x: &[S]) -> Result<Vec<S>> {
        self.inner().predict_proba(x)
    }

    fn predict_proba_many(&self, xs: &[&[S]]) -> Result<Vec<Vec<S>>> {
        self.inner().predict_proba_many(xs)
    }

    fn differentiable(&self) -> Option<&dyn Differentiable<S>> {
        self.inner().differentiable()
    }
}
