//! Contact-center insights engine: call-driver generation, density-based
//! topic modeling, call classification, trend detection, FAQ extraction,
//! evaluation metrics and serving-cost estimation.

pub mod cluster;
pub mod community;
pub mod compress;
pub mod config;
pub mod costsim;
pub mod driver_gen;
pub mod error;
pub mod faq;
pub mod gateway;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod stream;
pub mod synth;
pub mod text;
pub mod topics;
pub mod transcript;

pub use error::{Error, Result};
pub use gateway::{EmbeddingVector, EntailmentLabel, EntailmentVerdict, Gateway};
pub use text::{normalize, word_count, NormalizedText};
pub use transcript::{CallDriver, Speaker, Transcript, Utterance};
