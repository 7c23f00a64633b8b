//! Maps errors to process exit codes.

use reanno_core::corpus::CorpusError;
use reanno_core::datasets::DatasetError;
use reanno_core::evaluation::EvalError;
use reanno_core::llm_gateway::GatewayError;
use reanno_core::pipeline::PipelineError;
use reanno_core::promptgen::PromptError;
use reanno_core::schema::SchemaError;

pub const OK: u8 = 0;
pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const TRANSPORT: u8 = 3;

/// Bad flags or configuration detected by the CLI itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn gateway_code(e: &GatewayError) -> u8 {
    match e {
        GatewayError::Config(_) | GatewayError::InvalidParams(_) => USAGE,
        e if e.is_transport() => TRANSPORT,
        _ => DATA,
    }
}

fn prompt_code(e: &PromptError) -> u8 {
    match e {
        PromptError::Arity { .. } | PromptError::Config(_) | PromptError::Template(_) => USAGE,
        _ => DATA,
    }
}

/// Exit code for the first recognized error in the chain; data error when
/// nothing is recognized.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<SchemaError>() {
            return USAGE;
        }
        if let Some(e) = cause.downcast_ref::<GatewayError>() {
            return gateway_code(e);
        }
        if let Some(e) = cause.downcast_ref::<PromptError>() {
            return prompt_code(e);
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::Prompt(p) => prompt_code(p),
                PipelineError::Gateway(g) => gateway_code(g),
            };
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            return match e {
                CorpusError::SampleTooLarge { .. } => USAGE,
                _ => DATA,
            };
        }
        if cause.is::<DatasetError>() || cause.is::<EvalError>() || cause.is::<std::io::Error>() {
            return DATA;
        }
    }
    DATA
}
