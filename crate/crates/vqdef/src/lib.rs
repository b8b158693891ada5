//! Vector-quantization defenses against white-box attacks.
//!
//! The crate quantizes input images through one of three randomized channels
//! (pixel-level `randdisc`, disjoint-patch `prd`, sliding-window `swrd`)
//! before they reach a classifier, evaluates the resulting robustness against
//! FGSM/PGD, and estimates majority-vote certification bounds from a
//! Monte-Carlo KL divergence between codebook distributions.
//!
//! Start with the runnable examples (`cargo run --release -p vqdef --example
//! quantize_demo`) or the `vqdef` binary for the end-to-end experiment
//! harness.

pub mod attack;
pub mod certify;
pub mod classifier;
pub mod clustering;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod quantize;
pub mod seeding;

pub use error::{Error, Result};
