//! Zero-resource NER through target-oriented fine-tuning.
//!
//! The crate is organised by stage of the workflow:
//!
//! - [`corpus`]: CoNLL/line-JSON datasets, BIO validation, the role registry
//! - [`convert`]: NER ⇄ MRC reformulation, SQuAD-style ingestion, word substitution
//! - [`masking`]: static MLM instances
//! - [`model`]: built-in encoder, task heads, decoding, training, checkpoints
//! - [`pipeline`]: the staged fine-tuning scheduler with pseudo labels and resume
//! - [`eval`]: entity-level scoring
//! - [`synthetic`]: deterministic cue-word corpora for smoke tests and demos

pub mod convert;
pub mod corpus;
pub mod eval;
pub mod masking;
pub mod model;
pub mod pipeline;
pub mod synthetic;
