//! Feature and task file formats, loaders, and binary task construction.

pub mod corpus;
pub mod embeddings;
pub mod sampling;
pub mod task;

pub use corpus::{load_corpus, parse_corpus, AnnotatedSentence, PositiveUnit};
pub use embeddings::{
    encode_embeddings, load_embeddings, parse_embeddings, write_embeddings, EmbeddingBundle,
    EmbeddingIndex,
};
pub use sampling::{
    build_task, derive_seed, sample_negative_pairs, sample_negative_spans, BuiltTask,
    NegativeSampling, PairMode, RatioScope, Sampled, SpanStrategy,
};
pub use task::{
    encode_task, load_task, load_task_unchecked, parse_task, write_task, Span, SpanTarget, Split,
    TaskDataset,
};
