//! Unsupervised acoustic feature learning with a ConvLSTM audio frame
//! predictor.
//!
//! The crate is organised along the pipeline:
//!
//! * [`audio`] turns WAV files into normalized log-mel frames and
//!   three-in/one-out training sequences.
//! * [`model`] holds the frame predictor: a ConvLSTM encoder whose code is
//!   pooled per channel into a softmax feature distribution, and a mirrored
//!   decoder that predicts the next frame.
//! * [`pairloss`] is the batch-pairwise KL similarity loss.
//! * [`train`] runs the two-stage (MSE, then MSE + pairwise) schedule and
//!   the MSE-only baseline.
//! * [`eval`] scores learned features with a frozen-encoder linear
//!   classifier and with t-SNE + k-means + Hungarian clustering accuracy.
//! * [`synth`] generates a labelled synthetic event corpus.
//! * [`pipeline`] wires everything together for the command-line tool.

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod pairloss;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
