//! Unbiased stochastic optimization of the softmax likelihood.

mod brent;
pub mod data;
pub mod harness;
pub mod implicit;
pub mod lambert_w;
pub mod objective;
pub mod optimizers;
pub mod oracle;
pub mod sparse;
pub mod synth;
