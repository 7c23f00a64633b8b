//! Schema-guided entity and relation annotation of scientific abstracts
//! with a chat model, plus dataset I/O and scoring.

pub mod corpus;
pub mod datasets;
pub mod evaluation;
pub mod grounding;
pub mod llm_gateway;
pub mod pipeline;
pub mod promptgen;
pub mod schema;

pub use corpus::{Sentence, SentenceSplitter, Token, TokenizedSentence};
pub use datasets::{AnnotatedSentence, Dataset, EntityMention, RelationMention, Source};
pub use evaluation::{AgreementCriterion, EvalReport, MatchCounts, MetricScore};
pub use grounding::{GroundingOptions, GroundingReport, MatchTier, RawAnnotationSet};
pub use llm_gateway::{ChatBackend, ChatExchange, ChatRequest, DecodingParams, GatewayError};
pub use pipeline::{annotate, AnnotateOptions, PipelineReport};
pub use promptgen::{PromptBundle, PromptConfig, PromptTemplate};
pub use schema::{LabelKind, Schema};
