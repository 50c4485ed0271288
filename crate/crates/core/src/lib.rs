//! Document reranking with masked diffusion language models.
//!
//! The neural mask predictor sits behind [`provider::LogitsProvider`]; everything
//! else (decoders, losses, window scheduling, evaluation) lives here.

pub mod assign;
pub mod config;
pub mod corruption;
pub mod error;
pub mod evalx;
pub mod io;
pub mod orchestrate;
pub mod provider;
pub mod sampler;
pub mod scoring;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, ProviderError, Result};
pub use types::{
    assign_identifiers, permutation_to_ranking, CandidateList, CostMatrix, Document,
    IdentifierAlphabet, Permutation, ProbMatrix, Query, RankedEntry, RankedList, COST_FLOOR,
};
