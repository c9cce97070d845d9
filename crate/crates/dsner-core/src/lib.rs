//! Training laboratory for distantly supervised span-based named-entity
//! recognition.
//!
//! The pipeline: a gazetteer annotator turns gold corpora into noisy
//! distantly-supervised ones, a small trainable encoder scores every
//! enumerated token span, and a family of negative-selection strategies
//! (all, uniform, weighted, similarity-ranked top/bottom) controls which
//! O-labeled spans enter the training objective. Span-level exact-match
//! evaluation closes the loop.

pub mod annotator;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod evaluation;
pub mod nn;
pub mod sampling;
pub mod synth;
pub mod training;

pub use corpus::{
    enumerate_spans, parse_conll, split_pos_neg, Corpus, EntityTypeSet, LabeledSpan, Provenance,
    Sentence, SentenceId, Split,
};
pub use encoder::{EncoderConfig, ParameterStore, SpanClassifier, SpanKey, SpanRep, Vocab};
pub use evaluation::{micro_f1, predict_corpus, Metrics};
pub use sampling::{SamplingConfig, SelectionResult, Strategy};
pub use training::{train, TrainConfig, TrainState};
