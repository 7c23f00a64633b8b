//! End-to-end annotation: prompt, call the model, parse, ground.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Sentence, TokenizedSentence};
use crate::datasets::{AnnotatedSentence, Dataset};
use crate::grounding::{ground_annotations, parse_response, GroundingOptions, GroundingReport, RawAnnotationSet};
use crate::llm_gateway::{run_batches, ChatBackend, DecodingParams, GatewayError};
use crate::promptgen::{build_prompt, PromptConfig, PromptError, PromptTemplate};
use crate::schema::Schema;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub batch: usize,
    pub indices: Vec<usize>,
    pub transport: bool,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub input_sentences: usize,
    pub batches: usize,
    pub failed_batches: Vec<BatchFailure>,
    /// Sentences of a successful batch that had no block in the response.
    /// They are kept with no annotations.
    pub sentences_missing_from_response: Vec<usize>,
    /// Response blocks whose header did not name a sentence of their batch,
    /// or repeated one. Their tuples are discarded.
    pub misaligned_blocks: usize,
    pub total_attempts: u64,
    pub total_latency_ms: u64,
    pub grounding: GroundingReport,
}

impl PipelineReport {
    pub fn sentences_skipped(&self) -> usize {
        self.failed_batches.iter().map(|f| f.indices.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct AnnotateOptions<'a> {
    pub schema: &'a Schema,
    pub exemplars: &'a [AnnotatedSentence],
    pub config: PromptConfig,
    pub template: &'a PromptTemplate,
    pub params: DecodingParams,
    pub max_in_flight: usize,
    pub grounding: GroundingOptions,
}

/// Annotates `inputs`. Sentences of failed batches are left out of the
/// dataset and listed in the report; everything else appears in input
/// order.
pub fn annotate(
    inputs: &[TokenizedSentence],
    backend: &dyn ChatBackend,
    opts: &AnnotateOptions<'_>,
) -> Result<(Dataset, PipelineReport), PipelineError> {
    opts.params.validate()?;
    let plain: Vec<Sentence> = inputs.iter().map(|t| t.sentence.clone()).collect();
    let bundle = build_prompt(opts.schema, opts.exemplars, &plain, &opts.config, opts.template)?;
    let results = run_batches(&bundle, &opts.params, backend, opts.max_in_flight);

    let mut report = PipelineReport {
        input_sentences: inputs.len(),
        batches: bundle.user_batches.len(),
        ..Default::default()
    };
    let mut annotated: BTreeMap<usize, AnnotatedSentence> = BTreeMap::new();
    for (b, (batch, result)) in bundle.user_batches.iter().zip(results).enumerate() {
        let exchange = match result {
            Ok(x) => x,
            Err(e) => {
                report.failed_batches.push(BatchFailure {
                    batch: b,
                    indices: batch.indices.clone(),
                    transport: e.is_transport(),
                    error: e.to_string(),
                });
                continue;
            }
        };
        report.total_attempts += exchange.attempt_count as u64;
        report.total_latency_ms += exchange.latency.as_millis() as u64;

        let mut blocks: BTreeMap<usize, RawAnnotationSet> = BTreeMap::new();
        for set in parse_response(&exchange.response_text) {
            match set.sentence_index {
                Some(i) if batch.indices.contains(&i) && !blocks.contains_key(&i) => {
                    blocks.insert(i, set);
                }
                _ => report.misaligned_blocks += 1,
            }
        }
        for &i in &batch.indices {
            let raw = blocks.remove(&i).unwrap_or_else(|| {
                report.sentences_missing_from_response.push(i);
                RawAnnotationSet {
                    sentence_index: Some(i),
                    ..Default::default()
                }
            });
            let (sentence, g) = ground_annotations(&inputs[i], &raw, opts.schema, &opts.grounding);
            report.grounding += &g;
            annotated.insert(i, sentence);
        }
    }
    let mut dataset = Dataset::new(opts.schema);
    dataset.sentences = annotated.into_values().collect();
    Ok((dataset, report))
}
