use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::layers::Mode;
use super::loss::Target;
use super::network::Network;
use super::tensor::Batch;
use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Softmax temperature of the training loss.
    pub temperature: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 64, seed: 0, temperature: 1.0, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example<'a, S> {
    pub x: &'a [S],
    pub target: &'a Target<S>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl History {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_accuracy,val_accuracy,train_loss,val_loss\n");
        for e in 0..self.epochs() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e + 1,
                self.train_accuracy[e],
                self.val_accuracy[e],
                self.train_loss[e],
                self.val_loss[e]
            ));
        }
        s
    }
}

/// Splits `0..n` into batches of `size`, folding a trailing singleton into the batch
/// before it so batch normalization always sees at least two samples.
pub fn batch_ranges(n: usize, size: usize) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = (0..n).step_by(size.max(1)).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("checked");
        out.last_mut().expect("checked").end = last.end;
    }
    out
}

/// Mean loss and accuracy of `net` in inference mode.
pub fn evaluate<S: Scalar>(net: &Network<S>, data: &[Example<'_, S>], temperature: f64) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let xs: Vec<&[S]> = data.iter().map(|e| e.x).collect();
    let logits = net.logits_many(&xs)?;
    let t = S::lit(temperature);
    let (mut loss, mut correct) = (0.0, 0usize);
    for (z, e) in logits.iter().zip(data) {
        loss += e.target.loss_and_grad(z, t)?.0.as_f64();
        correct += usize::from(argmax(z) == e.target.label());
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch Adam over `train`, reshuffled every epoch. When `mix` is nonempty each batch
/// takes half its samples from `train` and half from `mix`, cycling through `mix`.
pub fn fit<S: Scalar>(
    net: &mut Network<S>,
    train: &[Example<'_, S>],
    val: &[Example<'_, S>],
    mix: &[Example<'_, S>],
    config: &TrainConfig,
) -> Result<History> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::NoTrainingData);
    }
    let mut adam = AdamState::new(config.adam, net.param_sizes());
    let t = S::lit(config.temperature);
    let per_batch = if mix.is_empty() { config.batch_size } else { (config.batch_size / 2).max(1) };
    let mut history = History::default();
    let mut mix_order: Vec<usize> = Vec::new();
    let mut mix_pos = 0usize;
    let mut mix_round = 0u64;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(seed::mix2(config.seed, 1, epoch as u64)));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, range) in batch_ranges(order.len(), per_batch).into_iter().enumerate() {
            let mut batch: Vec<&Example<'_, S>> = order[range].iter().map(|&i| &train[i]).collect();
            for _ in 0..batch.len().min(mix.len()) {
                if mix_pos == mix_order.len() {
                    mix_order = (0..mix.len()).collect();
                    mix_order.shuffle(&mut seed::rng(seed::mix2(config.seed, 2, mix_round)));
                    mix_round += 1;
                    mix_pos = 0;
                }
                batch.push(&mix[mix_order[mix_pos]]);
                mix_pos += 1;
            }
            let xs: Vec<&[S]> = batch.iter().map(|e| e.x).collect();
            let input = Batch::from_samples(net.input_shape(), &xs)?;
            let mode = Mode::Train { seed: seed::mix2(config.seed, 3 + epoch as u64, b as u64) };
            let pass = net.forward(input, mode)?;
            let logits = pass.logits();
            let n = S::from_usize_lossy(batch.len());
            let mut dl = Batch::zeros(batch.len(), logits.shape);
            let mut batch_loss = 0.0;
            for (i, e) in batch.iter().enumerate() {
                let z = logits.sample(i);
                let (l, g) = e.target.loss_and_grad(z, t)?;
                batch_loss += l.as_f64();
                correct += usize::from(argmax(z) == e.target.label());
                let k = g.len();
                dl.data[i * k..(i + 1) * k].iter_mut().zip(&g).for_each(|(d, &gv)| *d = gv / n);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b + 1 });
            }
            loss_sum += batch_loss;
            seen += batch.len();
            let mut grads = net.zero_grads();
            net.backward(&pass, dl, false, Some(&mut grads));
            let flat: Vec<Vec<S>> = grads.into_iter().flatten().collect();
            adam_step(&mut net.params_mut(), &flat, &mut adam)?;
            net.apply_batch_stats(&pass);
        }
        let (val_loss, val_acc) = evaluate(net, val, config.temperature)?;
        history.train_loss.push(loss_sum / seen as f64);
        history.train_accuracy.push(correct as f64 / seen as f64);
        history.val_loss.push(val_loss);
        history.val_accuracy.push(val_acc);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_never_end_in_a_singleton() {
        assert_eq!(batch_ranges(129, 64), vec![0..64, 64..129]);
        assert_eq!(batch_ranges(128, 64), vec![0..64, 64..128]);
        assert_eq!(batch_ranges(1, 64), vec![0..1]);
        assert_eq!(batch_ranges(0, 64), Vec::<Range<usize>>::new());
    }
}
