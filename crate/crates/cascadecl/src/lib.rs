//! Fake news classification from social-media propagation graphs.
//!
//! The library turns raw tweet/user records into labeled propagation graphs
//! (one graph per news item, cascades joined by a virtual news node), trains a
//! hierarchical-pooling graph neural network on them, and supports incremental
//! training across structurally different datasets with gradient episodic
//! memory (GEM) and elastic weight consolidation (EWC) so that earlier
//! datasets are not forgotten.
//!
//! The main entry points are:
//!
//! - [`cascade`] / [`features`] — record-to-graph pipeline and per-node
//!   feature extraction,
//! - [`gnn`] — the DiffPool-style graph classifier,
//! - [`continual`] — GEM / EWC incremental training,
//! - [`harness`] — 75/25 split, repeat averaging, metrics, reports,
//! - [`synth`] — seeded synthetic regime generator standing in for Twitter
//!   data,
//! - [`cli`] — the `cascadecl` command-line surface.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability.

pub mod archive;
pub mod autodiff;
pub mod builder;
pub mod cascade;
pub mod checkpoint;
pub mod cli;
pub mod continual;
pub mod features;
pub mod gnn;
pub mod harness;
pub mod metrics;
pub mod optim;
pub mod records;
pub mod synth;

/// Splits a 64-bit seed into a decorrelated stream for a given index.
///
/// Used wherever independent seeded RNG streams are derived from one base
/// seed (per news item, per repeat, per epoch shuffle).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = base
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
