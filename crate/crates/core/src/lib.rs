//! Single-model, multi-task, multi-domain task-oriented dialogue.
//!
//! The crate takes multimodal dialogue turns (user utterance, system
//! response, API action, visual objects and belief state), flattens them
//! into token sequences, trains a small causal transformer with a language
//! modeling head plus four classifier heads, decodes belief states and
//! responses greedily and scores everything with the usual dialogue
//! metric battery.
//!
//! The pipeline, module by module:
//!
//! * [`corpus`]: data model, JSONL ingestion, validation, synthetic corpora
//! * [`serializer`]: flat input layout, belief formatting and parsing
//! * [`tokenizer`]: closed whitespace vocabulary
//! * [`model`]: transformer, classifier heads, losses, exact gradients
//! * [`trainer`]: AdamW, schedules, domain and task samplers, training loop
//! * [`decoder`]: greedy generation, API prediction, candidate ranking
//! * [`metrics`]: action, attribute, BLEU, retrieval and belief metrics
//! * [`eval`]: end-to-end evaluation over a corpus
//!
//! Runnable walkthroughs live in the `examples/` directory of this crate:
//!
//! ```bash
//! cargo run --release --example synth_corpus
//! ```

pub mod artifacts;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod serializer;
pub mod tokenizer;
pub mod trainer;

pub use corpus::{ApiAction, BeliefFrame, Dialogue, Domain, Turn, VisualObject};
pub use error::{Error, Result};
pub use model::{ModelConfig, Parameters};
pub use serializer::{Features, SerializedExample, SerializerConfig};
pub use tokenizer::Vocab;
