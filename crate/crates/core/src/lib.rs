//! Chunk placement planning for partitioned, offloaded large-model training.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`profiles`]: load or synthesize a model profile and a hardware profile,
//!    then coarsen the operator graph so each checkpointed function is one node.
//! 2. [`chunking`]: pack single-use parameters into fixed-length chunks and map
//!    the coarse trace onto chunk accesses.
//! 3. [`rcache_sim`]: replay a training step through the rCache under Belady
//!    replacement and count gathers, reductions and GPU↔CPU traffic.
//! 4. [`cost_model`]: closed-form memory/communication costs for DDP, ZeRO and
//!    the two rCache extremes.
//! 5. [`search`]: compute the memory budget, pick the chunk length, and split
//!    free memory between rCache blocks and GPU-resident chunks.
//!
//! [`cli`] wires these together behind the `chunkplan` binary.

pub mod chunking;
pub mod cli;
pub mod cost_model;
pub mod error;
pub mod profiles;
pub mod rcache_sim;
pub mod search;
pub mod units;

pub use error::{Error, Result};
