//! Template-based response recommendation with a dual LSTM encoder.
//!
//! The pipeline mines weakly labeled question/answer pairs from chat
//! transcripts ([`corpus`]), trains a dual encoder scorer ([`encoder`],
//! built on [`numerics`]), clusters answer embeddings into a curated
//! template pool ([`templates`]), ranks templates for incoming questions
//! ([`retrieval`]) and evaluates ranking quality and human relevance
//! judgments ([`eval`]).

pub mod corpus;
pub mod encoder;
pub mod eval;
mod fsutil;
pub mod numerics;
pub mod retrieval;
pub mod templates;

pub use fsutil::write_atomic;
