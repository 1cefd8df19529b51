use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{fit, Example, History, LayerSpec, Network, Shape, Target, TrainConfig};
use crate::scalar::Scalar;

/// The twelve-layer trace CNN. The counter rows are concatenated into one
/// single-channel sequence of `input_len` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub input_len: usize,
    pub conv1_filters: usize,
    pub conv1_k: usize,
    pub pool: usize,
    pub conv2_filters: usize,
    pub conv2_k: usize,
    pub dense: usize,
    pub dropout: f64,
    pub n_classes: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            input_len: 5000,
            conv1_filters: 50,
            conv1_k: 10,
            pool: 10,
            conv2_filters: 100,
            conv2_k: 10,
            dense: 400,
            dropout: 0.25,
            n_classes: 20,
        }
    }
}

impl CnnConfig {
    pub fn specs(&self) -> Vec<LayerSpec> {
        let drop = LayerSpec::Dropout { rate: self.dropout };
        vec![
            LayerSpec::conv(self.conv1_filters, self.conv1_k),
            LayerSpec::MaxPool1d { window: self.pool },
            LayerSpec::batch_norm(),
            drop,
            LayerSpec::conv(self.conv2_filters, self.conv2_k),
            LayerSpec::MaxPool1d { window: self.pool },
            LayerSpec::batch_norm(),
            drop,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: self.dense },
            drop,
            LayerSpec::SoftmaxOutput { classes: self.n_classes },
        ]
    }
}

pub fn build_cnn<S: Scalar>(config: &CnnConfig, seed: u64) -> Result<Network<S>> {
    Network::from_specs(Shape::new(1, config.input_len), &config.specs(), seed)
}

pub(crate) fn check_compatible<S: Scalar>(net: &Network<S>, dataset: &Dataset<S>) -> Result<()> {
    if !dataset.is_normalized() {
        return Err(Error::InvalidArgument("training needs a normalized dataset".into()));
    }
    if net.n_outputs() != dataset.n_classes {
        return Err(Error::Shape(format!(
            "network has {} outputs, dataset {} classes",
            net.n_outputs(),
            dataset.n_classes
        )));
    }
    if let Some((c, n)) = dataset.geometry() {
        if c * n != net.input_len() {
            return Err(Error::Shape(format!("traces of {c}x{n} for input length {}", net.input_len())));
        }
    }
    Ok(())
}

/// Hard-label examples of one split.
pub fn hard_targets<S: Scalar>(dataset: &Dataset<S>, split: Split) -> (Vec<&[S]>, Vec<Target<S>>) {
    dataset.split(split).map(|t| (t.trace.values(), Target::Hard(t.label))).unzip()
}

pub fn examples<'a, S>(xs: &[&'a [S]], targets: &'a [Target<S>]) -> Vec<Example<'a, S>> {
    xs.iter().zip(targets).map(|(x, target)| Example { x, target }).collect()
}

/// Trains on the train split with validation metrics from the val split. The network
/// adopts the dataset's normalization statistics.
pub fn train_cnn<S: Scalar>(
    net: &Network<S>,
    dataset: &Dataset<S>,
    config: &TrainConfig,
) -> Result<(Network<S>, History)> {
    check_compatible(net, dataset)?;
    let (tx, ty) = hard_targets(dataset, Split::Train);
    let (vx, vy) = hard_targets(dataset, Split::Val);
    let mut out = net.clone();
    out.norm_stats = dataset.norm_stats.clone();
    let history = fit(&mut out, &examples(&tx, &ty), &examples(&vx, &vy), &[], config)?;
    Ok((out, history))
}
