//! Particle swarm search over variable-length encodings of flexible
//! convolutional auto-encoder (FCAE) architectures.
//!
//! The crate is split along the pipeline:
//!
//! - [`genome`]: the variable-length architecture encoding and its text descriptor.
//! - [`pso`]: the swarm engine (x-reference and gBest-reference velocity rules).
//! - [`nn`]: a small double-precision tensor engine with hand-written backward passes.
//! - [`fitness`]: short-training reconstruction fitness plus a cheap surrogate.
//! - [`data`]: IDX / CIFAR-10 loaders and synthetic image generators.
//! - [`trainer`]: deep training of the winning architecture and the classifier head.
//! - [`checkpoint`]: versioned binary model container.
//! - [`selfcheck`]: numeric self-checks of the engine, used by the CLI.

pub mod checkpoint;
pub mod data;
pub mod fitness;
pub mod genome;
pub mod nn;
pub mod pso;
pub mod rng;
pub mod selfcheck;
pub mod trainer;

pub use genome::{ArchGenome, ConvGene, DecodedArchitecture, GeneBounds, PoolGene};
pub use nn::Tensor;
pub use pso::{PsoConfig, ReferenceMode, TrajectoryRecord};
