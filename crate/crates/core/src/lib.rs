//! Core library for multilinear face-factor disentanglement at desk scale.
//!
//! The crate provides column-major dense tensors and matrices, exact
//! multilinear decoders with analytically derived gradients, a small
//! fully-connected autoencoder with a feature-rotation layer and a shading
//! head, adversarially balanced training on synthetic data with known
//! factors, and evaluation utilities (factor editing, interpolation,
//! relighting, linear probes).
//!
//! Conventions, fixed across the whole crate:
//! - all dense buffers are **column-major**;
//! - tensor modes and factor positions are **1-based** in public APIs;
//! - randomness flows through explicit `(seed, stream)` pairs and is
//!   reproducible bit-for-bit across runs on the same target.

pub mod arrayfile;
pub mod error;
pub mod eval;
pub mod grad;
pub mod mat;
pub mod multilinear;
pub mod neuro;
mod rng;
pub mod stack;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use eval::{
    edit_swap, interpolate, probe, probe_features, reconstruct_3d, relight, subspace_r2,
    EditResult, Factor, ProbeReport, Recon3d, RelightResult, SubspaceFit,
};
pub use mat::Mat;
pub use multilinear::{CoreModel, LatentCode};
pub use neuro::{
    BeganState, LossTerms, LossWeights, NetConfig, NetParams, ParamSet, Pseudo, Recon,
    VerificationEmbedding,
};
pub use rng::{rng_for, SeededRng};
pub use synth::{SynthConfig, SynthDataset};
pub use tensor::DenseTensor;
pub use train::{AdamMoments, Checkpoint, MetricsRow, TrainConfig};
