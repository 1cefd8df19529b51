use serde::Deserialize;
use serde_json::{json, Value};

use super::layers::{Aux, BatchNorm, Conv1d, Dense, Layer, LayerSpec, Mode};
use super::loss::{softmax_unchecked, Target};
use super::tensor::{Batch, Shape};
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

pub const FORMAT_VERSION: u32 = 1;

/// Rows per chunk when evaluating many inputs, to bound activation memory.
const EVAL_CHUNK: usize = 128;

/// A feed-forward stack of layers ending in logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S = f64> {
    input: Shape,
    specs: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    layers: Vec<Layer<S>>,
    pub seed: u64,
    /// Softmax temperature used by [`Network::predict_proba`] and the input-gradient loss.
    pub temperature: f64,
    pub norm_stats: Option<NormStats>,
}

/// Activations and auxiliary data of one forward pass. `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`.
pub struct Pass<S> {
    pub acts: Vec<Batch<S>>,
    pub aux: Vec<Aux<S>>,
}

impl<S> Pass<S> {
    pub fn logits(&self) -> &Batch<S> {
        self.acts.last().expect("a pass holds at least the input")
    }
}

/// Parameter gradients, indexed `[layer][param]`.
pub type Grads<S> = Vec<Vec<Vec<S>>>;

impl<S: Scalar> Network<S> {
    pub fn from_specs(input: Shape, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        let mut shape = input;
        let mut shapes = Vec::with_capacity(specs.len());
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let layer = Layer::init(spec, shape, seed::mix(seed, i as u64))
                .map_err(|e| Error::Shape(format!("layer {} ({spec}): {e}", i + 1)))?;
            shape = spec.out_shape(shape).expect("validated by init");
            shapes.push(shape);
            layers.push(layer);
        }
        Ok(Self {
            input,
            specs: specs.to_vec(),
            shapes,
            layers,
            seed,
            temperature: 1.0,
            norm_stats: None,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn input_len(&self) -> usize {
        self.input.size()
    }

    pub fn n_outputs(&self) -> usize {
        self.shapes.last().map_or(0, |s| s.size())
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Output shape of every layer.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(<[S]>::len).sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [S]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| l.params()).map(<[S]>::len).collect()
    }

    pub fn zero_grads(&self) -> Grads<S> {
        self.layers
            .iter()
            .map(|l| l.params().iter().map(|p| vec![S::zero(); p.len()]).collect())
            .collect()
    }

    pub fn forward(&self, x: Batch<S>, mode: Mode) -> Result<Pass<S>> {
        if x.shape != self.input {
            return Err(Error::Shape(format!(
                "input {}x{} for a network expecting {}x{}",
                x.shape.channels, x.shape.len, self.input.channels, self.input.len
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        acts.push(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let mode = match mode {
                Mode::Train { seed } => Mode::Train { seed: seed::mix(seed, i as u64) },
                Mode::Infer => Mode::Infer,
            };
            let (y, a) = layer.forward(acts.last().expect("nonempty"), self.shapes[i], mode)?;
            acts.push(y);
            aux.push(a);
        }
        Ok(Pass { acts, aux })
    }

    /// Backpropagates a logit cotangent. Returns the input gradient when `want_dx` is set.
    pub fn backward(
        &self,
        pass: &Pass<S>,
        dlogits: Batch<S>,
        want_dx: bool,
        mut grads: Option<&mut Grads<S>>,
    ) -> Option<Batch<S>> {
        let mut dy = dlogits;
        for i in (0..self.layers.len()).rev() {
            let need_dx = i > 0 || want_dx;
            let g = grads.as_deref_mut().map(|g| g[i].as_mut_slice());
            if !need_dx && g.is_none() {
                break;
            }
            match self.layers[i].backward(&pass.acts[i], &pass.aux[i], &dy, need_dx, g) {
                Some(dx) => dy = dx,
                None => return None,
            }
        }
        want_dx.then_some(dy)
    }

    /// Folds the batch statistics of a train-mode pass into the running statistics.
    pub fn apply_batch_stats(&mut self, pass: &Pass<S>) {
        for (layer, aux) in self.layers.iter_mut().zip(&pass.aux) {
            if let (Layer::BatchNorm(b), Aux::Norm { stats: Some((mean, var)), .. }) = (layer, aux) {
                b.update_running(mean, var);
            }
        }
    }

    fn single(&self, x: &[S]) -> Result<Batch<S>> {
        Batch::from_samples(self.input, &[x])
    }

    /// Inference-mode forward pass of one input, kept for later backward passes.
    pub fn infer_pass(&self, x: &[S]) -> Result<Pass<S>> {
        self.forward(self.single(x)?, Mode::Infer)
    }

    /// `Jᵀ·cotangent` for the logits of an inference pass over a single input.
    pub fn input_vjp(&self, pass: &Pass<S>, cotangent: &[S]) -> Vec<S> {
        let dl = Batch { n: 1, shape: pass.logits().shape, data: cotangent.to_vec() };
        self.backward(pass, dl, true, None).expect("input gradient requested").data
    }

    pub fn logits(&self, x: &[S]) -> Result<Vec<S>> {
        let mut pass = self.infer_pass(x)?;
        Ok(pass.acts.pop().expect("nonempty").data)
    }

    pub fn logits_many(&self, xs: &[&[S]]) -> Result<Vec<Vec<S>>> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(EVAL_CHUNK) {
            let pass = self.forward(Batch::from_samples(self.input, chunk)?, Mode::Infer)?;
            out.extend(pass.logits().samples().map(<[S]>::to_vec));
        }
        Ok(out)
    }

    pub fn predict_proba(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(softmax_unchecked(&self.logits(x)?, S::lit(self.temperature)))
    }

    pub fn predict_proba_many(&self, xs: &[&[S]]) -> Result<Vec<Vec<S>>> {
        let t = S::lit(self.temperature);
        Ok(self.logits_many(xs)?.iter().map(|z| softmax_unchecked(z, t)).collect())
    }

    /// Cross-entropy of the prediction for `x` against `label`.
    pub fn loss(&self, x: &[S], label: usize) -> Result<S> {
        let z = self.logits(x)?;
        Ok(Target::Hard(label).loss_and_grad(&z, S::lit(self.temperature))?.0)
    }

    /// Exact `∂loss/∂x` by backpropagation in inference mode.
    pub fn loss_input_gradient(&self, x: &[S], label: usize) -> Result<Vec<S>> {
        let pass = self.infer_pass(x)?;
        let (_, g) = Target::Hard(label).loss_and_grad(&pass.logits().data, S::lit(self.temperature))?;
        Ok(self.input_vjp(&pass, &g))
    }

    /// Central-difference estimate of `∂loss/∂x`, two forward passes per coordinate.
    pub fn finite_diff_gradient(&self, x: &[S], label: usize, h: f64) -> Result<Vec<S>> {
        if h == 0.0 || !h.is_finite() {
            return Err(Error::DegenerateStep);
        }
        let hs = S::lit(h);
        let mut xp = x.to_vec();
        let mut grad = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            xp[i] = x[i] + hs;
            let up = self.loss(&xp, label)?;
            xp[i] = x[i] - hs;
            let down = self.loss(&xp, label)?;
            xp[i] = x[i];
            grad.push((up - down) / (hs + hs));
        }
        Ok(grad)
    }

    pub fn cast<T: Scalar>(&self) -> Network<T> {
        let v = |xs: &[S]| xs.iter().map(|x| T::lit(x.as_f64())).collect::<Vec<T>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv1d(c) => Layer::Conv1d(Conv1d {
                    in_channels: c.in_channels,
                    filters: c.filters,
                    kernel: c.kernel,
                    stride: c.stride,
                    weight: v(&c.weight),
                    bias: v(&c.bias),
                }),
                Layer::MaxPool1d { window } => Layer::MaxPool1d { window: *window },
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                    channels: b.channels,
                    eps: b.eps,
                    momentum: b.momentum,
                    gamma: v(&b.gamma),
                    beta: v(&b.beta),
                    running_mean: v(&b.running_mean),
                    running_var: v(&b.running_var),
                }),
                Layer::Dropout { rate } => Layer::Dropout { rate: *rate },
                Layer::Flatten => Layer::Flatten,
                Layer::Dense(d) => Layer::Dense(Dense {
                    inputs: d.inputs,
                    units: d.units,
                    weight: v(&d.weight),
                    bias: v(&d.bias),
                }),
            })
            .collect();
        Network {
            input: self.input,
            specs: self.specs.clone(),
            shapes: self.shapes.clone(),
            layers,
            seed: self.seed,
            temperature: self.temperature,
            norm_stats: self.norm_stats.clone(),
        }
    }

    /// The versioned JSON model document. Weights are nested arrays:
    /// `[filters][channels][kernel]` for convolutions, `[units][inputs]` for dense layers.
    pub fn to_json(&self) -> Value {
        let f = |xs: &[S]| xs.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        let layers: Vec<Value> = self
            .specs
            .iter()
            .zip(&self.layers)
            .map(|(spec, layer)| {
                let mut doc = serde_json::to_value(spec).expect("layer specs serialize");
                let obj = doc.as_object_mut().expect("tagged enum is an object");
                match layer {
                    Layer::Conv1d(c) => {
                        let w: Vec<Vec<Vec<f64>>> = c
                            .weight
                            .chunks(c.in_channels * c.kernel)
                            .map(|fw| fw.chunks(c.kernel).map(f).collect())
                            .collect();
                        obj.insert("weight".into(), json!(w));
                        obj.insert("bias".into(), json!(f(&c.bias)));
                    }
                    Layer::Dense(d) => {
                        let w: Vec<Vec<f64>> = d.weight.chunks(d.inputs).map(f).collect();
                        obj.insert("weight".into(), json!(w));
                        obj.insert("bias".into(), json!(f(&d.bias)));
                    }
                    Layer::BatchNorm(b) => {
                        obj.insert("gamma".into(), json!(f(&b.gamma)));
                        obj.insert("beta".into(), json!(f(&b.beta)));
                        obj.insert("running_mean".into(), json!(f(&b.running_mean)));
                        obj.insert("running_var".into(), json!(f(&b.running_var)));
                    }
                    _ => {}
                }
                doc
            })
            .collect();
        json!({
            "format_version": FORMAT_VERSION,
            "kind": "cnn",
            "input": { "channels": self.input.channels, "len": self.input.len },
            "seed": self.seed,
            "temperature": self.temperature,
            "norm_stats": self.norm_stats,
            "layers": layers,
        })
    }

    pub fn from_json(doc: &Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Input {
            channels: usize,
            len: usize,
        }
        #[derive(Deserialize)]
        struct Doc {
            format_version: u32,
            kind: String,
            input: Input,
            seed: u64,
            temperature: f64,
            norm_stats: Option<NormStats>,
            layers: Vec<Value>,
        }
        let d: Doc = Doc::deserialize(doc)?;
        if d.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format_version {}", d.format_version)));
        }
        if d.kind != "cnn" {
            return Err(Error::Format(format!("expected a cnn model, found '{}'", d.kind)));
        }
        let specs = d
            .layers
            .iter()
            .map(|l| LayerSpec::deserialize(l).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Network::<S>::from_specs(Shape::new(d.input.channels, d.input.len), &specs, d.seed)?;
        net.temperature = d.temperature;
        net.norm_stats = d.norm_stats;
        for (i, (layer, doc)) in net.layers.iter_mut().zip(&d.layers).enumerate() {
            let field = |name: &str| -> Result<&Value> {
                doc.get(name)
                    .ok_or_else(|| Error::Format(format!("layer {}: missing '{name}'", i + 1)))
            };
            let load = |name: &str, dst: &mut Vec<S>| -> Result<()> {
                let flat = flatten_numbers(field(name)?)?;
                if flat.len() != dst.len() {
                    return Err(Error::Format(format!(
                        "layer {}: '{name}' has {} values, expected {}",
                        i + 1,
                        flat.len(),
                        dst.len()
                    )));
                }
                *dst = flat.into_iter().map(S::lit).collect();
                Ok(())
            };
            match layer {
                Layer::Conv1d(c) => {
                    load("weight", &mut c.weight)?;
                    load("bias", &mut c.bias)?;
                }
                Layer::Dense(dl) => {
                    load("weight", &mut dl.weight)?;
                    load("bias", &mut dl.bias)?;
                }
                Layer::BatchNorm(b) => {
                    load("gamma", &mut b.gamma)?;
                    load("beta", &mut b.beta)?;
                    load("running_mean", &mut b.running_mean)?;
                    load("running_var", &mut b.running_var)?;
                }
                _ => {}
            }
        }
        Ok(net)
    }
}

fn flatten_numbers(v: &Value) -> Result<Vec<f64>> {
    fn walk(v: &Value, out: &mut Vec<f64>) -> Result<()> {
        match v {
            Value::Array(items) => items.iter().try_for_each(|x| walk(x, out)),
            Value::Number(n) => {
                let x = n.as_f64().ok_or_else(|| Error::Format("number out of range".into()))?;
                out.push(x);
                Ok(())
            }
            _ => Err(Error::Format("expected nested arrays of numbers".into())),
        }
    }
    let mut out = Vec::new();
    walk(v, &mut out)?;
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Format("non-finite parameter".into()));
    }
    Ok(out)
}
