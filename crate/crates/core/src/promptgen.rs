//! Annotation prompt assembly.
//!
//! A prompt has three parts: a task definition (system message), `K`
//! worked exemplars (assistant message) and the input sentences split into
//! user batches of at most `batch_size`, each line prefixed with
//! `Sentence <global index>:` so responses can be aligned afterwards.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sentence;
use crate::datasets::AnnotatedSentence;
use crate::grounding::{raw_tuples, NO_ANNOTATIONS, SENTENCE_HEADER};
use crate::schema::{Schema, DELIMITER};

pub const DEFAULT_TEMPLATE: &str = include_str!("../assets/task_definition.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("expected {expected} exemplars, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("no input sentences")]
    EmptyInput,
    #[error("batch {batch} needs ~{tokens} tokens with the system and assistant messages, limit is {limit}")]
    Overflow { batch: usize, tokens: usize, limit: usize },
    #[error("entity surface `{0}` contains the reserved delimiter ';'")]
    Delimiter(String),
    #[error("invalid prompt config: {0}")]
    Config(String),
    #[error("template is missing placeholder {0}")]
    Template(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub k_examples: usize,
    pub include_descriptions: bool,
    pub batch_size: usize,
    pub max_context_tokens: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            k_examples: 3,
            include_descriptions: false,
            batch_size: 10,
            max_context_tokens: 4096,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.batch_size == 0 {
            return Err(PromptError::Config("batch_size must be at least 1".into()));
        }
        if self.max_context_tokens < 256 {
            return Err(PromptError::Config("max_context_tokens must be at least 256".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserBatch {
    pub text: String,
    /// Global indexes of the sentences in this batch.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_message: String,
    pub assistant_message: String,
    pub user_batches: Vec<UserBatch>,
    pub config: PromptConfig,
}

/// Task-definition text with `{entity_types}` and `{relation_types}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate(String);

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate(DEFAULT_TEMPLATE.to_string())
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        for placeholder in ["{entity_types}", "{relation_types}"] {
            if !text.contains(placeholder) {
                return Err(PromptError::Template(placeholder));
            }
        }
        Ok(PromptTemplate(text))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        Self::new(std::fs::read_to_string(path)?)
    }

    pub fn text(&self) -> &str {
        &self.0
    }

    pub fn render(&self, schema: &Schema, include_descriptions: bool) -> String {
        let entity_lines: Vec<String> = schema
            .entity_types()
            .iter()
            .map(|e| type_line(&e.name, &e.description, include_descriptions))
            .collect();
        let relation_lines: Vec<String> = schema
            .relation_types()
            .iter()
            .map(|r| {
                let mut line = type_line(&r.name, &r.description, include_descriptions);
                if include_descriptions && r.symmetric {
                    line.push_str(" (symmetric: argument order does not matter)");
                }
                line
            })
            .collect();
        self.0
            .replace("{entity_types}", &entity_lines.join("\n"))
            .replace("{relation_types}", &relation_lines.join("\n"))
    }
}

fn type_line(name: &str, description: &str, include_descriptions: bool) -> String {
    if include_descriptions && !description.is_empty() {
        format!("- {name}: {description}")
    } else {
        format!("- {name}")
    }
}

/// System message from the bundled template.
pub fn build_system_message(schema: &Schema, include_descriptions: bool) -> String {
    PromptTemplate::default().render(schema, include_descriptions)
}

/// One exemplar block: the sentence line, then one tuple line per entity and
/// per relation, or the no-annotation marker.
pub fn serialize_exemplar(sentence: &AnnotatedSentence) -> Result<String, PromptError> {
    let (entities, relations) = raw_tuples(sentence);
    let mut block = format!("{SENTENCE_HEADER}: {}\n", sentence.text());
    if entities.is_empty() && relations.is_empty() {
        block.push_str(NO_ANNOTATIONS);
        block.push('\n');
        return Ok(block);
    }
    for e in &entities {
        if e.surface.contains(DELIMITER) {
            return Err(PromptError::Delimiter(e.surface.clone()));
        }
        block.push_str(&format!("({};{};{})\n", e.tag, e.label, e.surface));
    }
    for r in &relations {
        block.push_str(&format!("({};{};{};{})\n", r.tag, r.label, r.head_tag, r.tail_tag));
    }
    Ok(block)
}

/// Heuristic token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub fn build_prompt(
    schema: &Schema,
    exemplars: &[AnnotatedSentence],
    inputs: &[Sentence],
    config: &PromptConfig,
    template: &PromptTemplate,
) -> Result<PromptBundle, PromptError> {
    config.validate()?;
    if exemplars.len() != config.k_examples {
        return Err(PromptError::Arity {
            expected: config.k_examples,
            got: exemplars.len(),
        });
    }
    if inputs.is_empty() {
        return Err(PromptError::EmptyInput);
    }
    let system_message = template.render(schema, config.include_descriptions);
    let assistant_message = exemplars
        .iter()
        .map(serialize_exemplar)
        .collect::<Result<Vec<_>, _>>()?
        .join("\n");
    let fixed = estimate_tokens(&system_message) + estimate_tokens(&assistant_message);

    let mut user_batches = Vec::new();
    for (b, chunk) in inputs.chunks(config.batch_size).enumerate() {
        let first = b * config.batch_size;
        let indices: Vec<usize> = (first..first + chunk.len()).collect();
        let text = chunk
            .iter()
            .zip(&indices)
            .map(|(s, i)| format!("{SENTENCE_HEADER} {i}: {}", s.text))
            .collect::<Vec<_>>()
            .join("\n");
        let tokens = fixed + estimate_tokens(&text);
        if tokens > config.max_context_tokens {
            return Err(PromptError::Overflow {
                batch: b,
                tokens,
                limit: config.max_context_tokens,
            });
        }
        user_batches.push(UserBatch { text, indices });
    }
    Ok(PromptBundle {
        system_message,
        assistant_message,
        user_batches,
        config: *config,
    })
}
