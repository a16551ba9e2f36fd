//! Temporal relation classification between event pairs: a BiLSTM pair
//! classifier with an optional common-sense prior, exact global inference
//! over temporal transitivity, and the standard three-metric evaluation.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod cse;
pub mod embeddings;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod synthetic;
pub mod tempgraph;

pub use corpus::{Corpus, Document, Event, Label, RelationInstance};
