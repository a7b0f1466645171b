//! Surprisal-based evaluation of recurrent and self-attention language
//! models against human reading data.
//!
//! The crate covers the whole chain: corpus preparation ([`corpus`]), a
//! small reverse-mode engine ([`autodiff`]), GRU and causal Transformer
//! language models ([`lm`]), SGD training with a checkpoint ladder
//! ([`trainer`]), reading-data ingestion ([`reading`]), linear mixed-effects
//! fits ([`mixed`]) and factor-smooth GAMs with difference curves ([`gam`]).

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod gam;
pub mod lm;
pub mod mixed;
pub mod reading;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
pub use lm::{ArchitectureSpec, ModelCheckpoint, ModelKind, SurprisalRow, SurprisalTable};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_ORDER: u64 = 1;
pub(crate) const STREAM_EMBEDDING: u64 = 2;
pub(crate) const STREAM_WEIGHTS: u64 = 3;

/// Independent deterministic generator for `(seed, stream)`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
