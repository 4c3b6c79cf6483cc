//! Spatio-temporal traffic forecasting: adaptive graph attention over a
//! learned adjacency, gated bidirectional recurrence, and a dilated causal
//! temporal convolution stack, trained end to end with an L1 objective.

pub mod attention;
pub mod cli;
pub mod data;
pub mod eval;
pub(crate) mod init;
pub mod model;
pub mod recurrent;
pub mod synth;
pub mod tcn;
pub mod substrate;

#[cfg(test)]
pub(crate) mod testutil;
