use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{fit, Example, LayerSpec, Network, Shape, Target, TrainConfig};
use crate::scalar::Scalar;

/// Multinomial logistic regression trained with the network optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self { epochs: 30, seed: 0 }
    }
}

/// A single softmax layer over the flat input.
pub type LinearModel<S = f64> = Network<S>;

pub fn linear_fit<S: Scalar>(
    xs: &[&[S]],
    ys: &[usize],
    n_classes: usize,
    config: &LinearConfig,
) -> Result<LinearModel<S>> {
    if xs.is_empty() {
        return Err(Error::NoTrainingData);
    }
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} inputs, {} labels", xs.len(), ys.len())));
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= n_classes) {
        return Err(Error::InvalidArgument(format!("label {y} out of range")));
    }
    let mut net = Network::from_specs(
        Shape::new(1, xs[0].len()),
        &[LayerSpec::SoftmaxOutput { classes: n_classes }],
        config.seed,
    )?;
    let targets: Vec<Target<S>> = ys.iter().map(|&y| Target::Hard(y)).collect();
    let train: Vec<Example<'_, S>> = xs.iter().zip(&targets).map(|(x, target)| Example { x, target }).collect();
    let cfg = TrainConfig { epochs: config.epochs, seed: config.seed, ..TrainConfig::default() };
    fit(&mut net, &train, &[], &[], &cfg)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::Classifier;

    #[test]
    fn separates_two_blobs() {
        let data: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let c = (i % 2) as f64;
                vec![0.2 + 0.6 * c + 0.01 * (i / 2) as f64 % 0.1, 0.8 - 0.6 * c]
            })
            .collect();
        let xs: Vec<&[f64]> = data.iter().map(|x| &x[..]).collect();
        let ys: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let m = linear_fit(&xs, &ys, 2, &LinearConfig { epochs: 300, seed: 1 }).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(m.predict(x).unwrap(), *y);
        }
    }
}
