//! Schema-guided recursive span extraction.
//!
//! A [`Schema`] tree lists the types to extract. Extraction proceeds depth by
//! depth: each query packs one or more prefix groups (a previously extracted
//! tuple plus its candidate child types) in front of the text, an encoder
//! produces hidden states, a rotary bilinear head scores token pairs, and
//! the token-linking decoder reads typed spans from the thresholded matrix.

pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod linking;
pub mod metrics;
pub mod query;
pub mod schema;
pub mod scoring;
pub mod synthetic;
pub mod tokenizer;
pub mod training;

pub use checkpoint::Checkpoint;
pub use dataset::{ExtractionTuple, Record, Span};
pub use encoder::{Encoder, HashEncoder, TinyEncoder};
pub use engine::{
    build_training_set, extract, extract_corpus, ExtractionConfig, GoldScorer, LinkScorer, ModelScorer, Packing,
    ResultSet, TrainingInstance, TypeOrder,
};
pub use error::{Error, Result};
pub use linking::{decode, encode_targets, DecodedMention, GoldMention};
pub use metrics::{evaluate, MetricReport, Task, TaskReport};
pub use query::{build_queries, EncodedQuery, Limits, PrefixGroup, PrefixItem};
pub use schema::{Schema, SchemaNode, TypePath};
pub use scoring::{score, threshold, BinaryLinkMatrix, ScoreMatrix, ScoringParams};
pub use tokenizer::{Marker, Tokenize, Tokenizer};
pub use training::{circle_loss, train, LossReport, Model, OptimizerConfig, TrainState, TrainTarget};
