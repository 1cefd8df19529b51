//! Process fingerprinting from hardware performance counter traces, and the adversarial
//! perturbations that hide a process from such a classifier.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the precision for callers that do not care.

pub mod attacks;
pub mod classifiers;
pub mod dataset;
pub mod defenses;
pub mod error;
pub mod nn;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod trace;
pub mod tracefile;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Trace = trace::Trace<f64>;
pub type Trace32 = trace::Trace<f32>;
pub type LabeledTrace = trace::LabeledTrace<f64>;
pub type LabeledTrace32 = trace::LabeledTrace<f32>;
pub type Dataset = dataset::Dataset<f64>;
pub type Dataset32 = dataset::Dataset<f32>;
pub type Network = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
pub type Model = classifiers::Model<f64>;
pub type Model32 = classifiers::Model<f32>;
pub type AdversarialResult = attacks::AdversarialResult<f64>;
pub type AdversarialResult32 = attacks::AdversarialResult<f32>;
