//! Hybrid extractive/abstractive summarization with multilingual sentiment
//! classification.

pub mod abstractive;
pub mod container;
pub mod corpus;
pub mod extractive;
pub mod harness;
pub mod lexicon;
pub mod metrics;
pub mod quantize;
pub mod sentiment;
pub mod synth;
pub mod textproc;
pub mod train;
