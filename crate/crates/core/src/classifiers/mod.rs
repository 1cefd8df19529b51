//! The trace CNN and the classical baselines, behind one prediction interface.

pub mod cnn;
pub mod knn;
pub mod linear;
pub mod model;
pub mod pca;
pub mod tree;

use rayon::prelude::*;

use crate::dataset::{Dataset, Split};
use crate::error::Result;
use crate::nn::Network;
use crate::scalar::{argmax, Scalar};

pub use cnn::{build_cnn, train_cnn, CnnConfig};
pub use knn::{Knn, KnnConfig, Metric};
pub use linear::{linear_fit, LinearConfig, LinearModel};
pub use model::{fit_classical, Classical, Family, Head, Model};
pub use pca::{pca_fit, PcaModel};
pub use tree::{tree_fit, Tree, TreeConfig};

/// A fitted classifier over flat counter-major trace values.
pub trait Classifier<S: Scalar>: Sync {
    fn n_classes(&self) -> usize;

    fn input_len(&self) -> usize;

    fn predict_proba(&self, x: &[S]) -> Result<Vec<S>>;

    fn predict(&self, x: &[S]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    fn predict_proba_many(&self, xs: &[&[S]]) -> Result<Vec<Vec<S>>> {
        xs.par_iter().map(|x| self.predict_proba(x)).collect()
    }

    /// Access to input gradients, for models that have them.
    fn differentiable(&self) -> Option<&dyn Differentiable<S>> {
        None
    }
}

/// Models exposing vector-Jacobian products of their logits.
pub trait Differentiable<S: Scalar>: Sync {
    /// Runs one forward pass, asks `cotangents` for logit cotangents given the logits,
    /// and returns the logits with `Jᵀ·c` for every cotangent `c`.
    fn logits_vjp(
        &self,
        x: &[S],
        cotangents: &mut dyn FnMut(&[S]) -> Vec<Vec<S>>,
    ) -> Result<(Vec<S>, Vec<Vec<S>>)>;

    /// Softmax temperature the model predicts with.
    fn temperature(&self) -> f64 {
        1.0
    }
}

impl<S: Scalar> Classifier<S> for Network<S> {
    fn n_classes(&self) -> usize {
        self.n_outputs()
    }

    fn input_len(&self) -> usize {
        Network::input_len(self)
    }

    fn predict_proba(&self, x: &[S]) -> Result<Vec<S>> {
        Network::predict_proba(self, x)
    }

    fn predict_proba_many(&self, xs: &[&[S]]) -> Result<Vec<Vec<S>>> {
        Network::predict_proba_many(self, xs)
    }

    fn differentiable(&self) -> Option<&dyn Differentiable<S>> {
        Some(self)
    }
}

impl<S: Scalar> Differentiable<S> for Network<S> {
    fn logits_vjp(
        &self,
        x: &[S],
        cotangents: &mut dyn FnMut(&[S]) -> Vec<Vec<S>>,
    ) -> Result<(Vec<S>, Vec<Vec<S>>)> {
        let pass = self.infer_pass(x)?;
        let z = pass.logits().data.clone();
        let grads = cotangents(&z).iter().map(|c| self.input_vjp(&pass, c)).collect();
        Ok((z, grads))
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Flat value slices and labels of one split.
pub fn split_xy<S: Scalar>(dataset: &Dataset<S>, split: Split) -> (Vec<&[S]>, Vec<usize>) {
    dataset.split(split).map(|t| (t.trace.values(), t.label)).unzip()
}

/// Fraction of `split` that `model` labels correctly; NaN for an empty split.
pub fn accuracy<S: Scalar, C: Classifier<S> + ?Sized>(model: &C, dataset: &Dataset<S>, split: Split) -> Result<f64> {
    let (xs, ys) = split_xy(dataset, split);
    if xs.is_empty() {
        return Ok(f64::NAN);
    }
    let probs = model.predict_proba_many(&xs)?;
    let correct = probs.iter().zip(&ys).filter(|(p, y)| argmax(p) == **y).count();
    Ok(correct as f64 / xs.len() as f64)
}
