//! Probing harness for tweet representations.
//!
//! A corpus of annotated tweets is turned into eight elementary
//! property-prediction tasks (length, content, word order, slang, hashtag,
//! named entity, is-reply, reply time). Each representation under study is
//! frozen, and a single linear + softmax probe is trained on top of it per
//! task. The [`analysis`] module then compares providers by test F1, by F1
//! across tweet-length bins, and by F1 drop when test tweets are shuffled.
//!
//! Module map:
//!
//! * [`corpus`]: tokenizer, corpus interchange format, n-gram statistics.
//! * [`taskgen`]: task datasets with negative sampling, binning, splits.
//! * [`encoders`]: BOW / BOM / LDA baselines and external vector files.
//! * [`probe`]: softmax probe, metrics, gradient check.
//! * [`analysis`]: length profiles, permutation sensitivity, reports.
//! * [`pipeline`]: staged runs driven by a [`config::RunConfig`].
//!
//! With the default `parallel` feature, batch encoding, evaluation and
//! (provider, task) sweeps run on rayon. Results are merged in input order,
//! so parallel and sequential runs produce identical numbers.

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod exec;
pub mod pipeline;
pub mod probe;
pub mod synth;
pub mod taskgen;
mod util;

pub use analysis::{AnalysisReport, LengthProfile, SensitivityResult};
pub use corpus::{load_corpus, tokenize, Corpus, Tweet};
pub use encoders::{EmbeddingProvider, ProviderKind, RepresentationVector, TextRef};
pub use exec::Execution;
pub use probe::{Metrics, ProbeModel, TrainConfig};
pub use taskgen::{build_task, TaskDataset, TaskInstance, TaskKind, TaskParams};
