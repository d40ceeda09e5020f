//! Story ending selection by gated fusion of three scoring channels:
//! a causal transformer language model over the narrative sequence, an LSTM
//! over per-sentence sentiment trajectories, and a commonsense distance over
//! word embeddings. A learned combination gate weighs the channels per story,
//! and the whole stack trains end to end at desk scale.

pub mod autodiff;
pub mod corpus;
pub mod knowledge;
pub mod error;
pub mod util;

pub use error::{Error, Result};
