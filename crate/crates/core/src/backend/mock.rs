//! Deterministic backends that read the prompt instead of running a model.
//!
//! Each one parses the prompt with its [`PromptTemplate`], computes a
//! completion, cuts it at the stop sequence and clips it to
//! `max_new_tokens` whitespace tokens.

use std::collections::HashMap;
use std::time::Instant;

use super::{apply_stop, clip_tokens, Backend, BackendError, GenerationRequest, GenerationResponse};
use crate::prompting::{ParsedPrompt, PromptTemplate};

fn parse(template: &PromptTemplate, request: &GenerationRequest) -> Result<ParsedPrompt, BackendError> {
    request.validate()?;
    template
        .parse(&request.prompt)
        .map_err(|e| BackendError::InvalidRequest(e.to_string()))
}

fn respond(id: &str, text: &str, request: &GenerationRequest, started: Instant) -> GenerationResponse {
    let text = apply_stop(text, &request.stop);
    GenerationResponse {
        completion: clip_tokens(text, request.max_new_tokens),
        backend_id: id.to_string(),
        latency: started.elapsed(),
    }
}

/// Returns the test source unchanged.
#[derive(Debug, Clone, Default)]
pub struct EchoBackend {
    template: PromptTemplate,
}

impl EchoBackend {
    pub fn new(template: PromptTemplate) -> Self {
        EchoBackend { template }
    }
}

impl Backend for EchoBackend {
    fn id(&self) -> String {
        "mock:echo".into()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let started = Instant::now();
        let parsed = parse(&self.template, request)?;
        Ok(respond(&self.id(), &parsed.test_source, request, started))
    }
}

/// Returns the target of the first example in the prompt.
#[derive(Debug, Clone, Default)]
pub struct CopyTargetBackend {
    template: PromptTemplate,
}

impl CopyTargetBackend {
    pub fn new(template: PromptTemplate) -> Self {
        CopyTargetBackend { template }
    }
}

impl Backend for CopyTargetBackend {
    fn id(&self) -> String {
        "mock:copy-target".into()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let started = Instant::now();
        let parsed = parse(&self.template, request)?;
        let (_, target) = parsed
            .examples
            .first()
            .ok_or_else(|| BackendError::InvalidRequest("prompt has no examples to copy".into()))?;
        Ok(respond(&self.id(), target, request, started))
    }
}

/// Word-by-word translation of the test source through a fixed dictionary.
/// Unknown words are copied.
#[derive(Debug, Clone, Default)]
pub struct LexiconBackend {
    template: PromptTemplate,
    lexicon: HashMap<String, String>,
}

impl LexiconBackend {
    pub fn new(template: PromptTemplate, lexicon: HashMap<String, String>) -> Self {
        LexiconBackend { template, lexicon }
    }
}

impl Backend for LexiconBackend {
    fn id(&self) -> String {
        "mock:lexicon".into()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let started = Instant::now();
        let parsed = parse(&self.template, request)?;
        let translated = parsed
            .test_source
            .split_whitespace()
            .map(|w| self.lexicon.get(w).map_or(w, String::as_str))
            .collect::<Vec<_>>()
            .join(" ");
        Ok(respond(&self.id(), &translated, request, started))
    }
}
