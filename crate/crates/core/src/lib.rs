//! Medical examination recommender over heterogeneous patient histories.
//!
//! The pipeline has two learning stages. Stage one denoises the binary
//! patient-entity interaction graph with a task-gated diffusion model and
//! rebuilds a sparse subgraph of the strongest edges. Stage two learns
//! patient representations on that subgraph: a relation-aware graph
//! attention encoder for spatial structure, a Transformer with learnable
//! spline (KAN) function maps for the temporal sequence, and cross-attention
//! fusion of the two, trained with a sampled-negative ranking loss.
//!
//! Crate layout mirrors the pipeline: [`ehr`] holds data and the synthetic
//! generator, [`diffusion`] the denoiser, [`rgat`]/[`kansformer`]/[`fusion`]
//! the encoders, [`trainer`] the two-stage loop, [`evaluation`] the ranking
//! metrics, and [`cli`] the command-line entry point.

pub mod cli;
pub mod diffusion;
pub mod ehr;
pub mod evaluation;
pub mod fusion;
pub mod kansformer;
pub mod nn;
pub mod rgat;
pub mod trainer;
