//! Restricted Boltzmann machines trained by contrastive divergence or by
//! sampling a simulated quantum annealer through a Chimera-graph embedding,
//! benchmarked on the bars-and-stripes corpus.

pub mod annealer;
pub mod bas;
pub mod chimera;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod math;
pub mod rbm;
pub mod rng;
pub mod sample;
pub mod train;

pub use annealer::{anneal_inference, anneal_samples, annealer_model_samples, rbm_to_ising, AnnealConfig, IsingInstance};
pub use bas::{BasRecord, Label};
pub use chimera::{embed_rbm, ChimeraEmbedding, ChimeraGraph, Unit};
pub use error::{Error, Result};
pub use eval::{accuracy, classify, reconstruct, Accuracy, ClassifyMethod, MetricsRow, Prediction};
pub use gibbs::{cd_model_samples, clamped_gibbs, ClampMask};
pub use rbm::{BinaryVector, RbmParams};
pub use sample::{SampleBatch, SampleSource};
pub use train::{train_loop, AnnealContext, SamplerKind, TrainConfig};
