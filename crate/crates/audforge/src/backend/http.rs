//! JSON-over-POST clients for the backend traits. One endpoint per service;
//! every call is a single POST with a JSON body and a JSON reply.
//!
//! Transport failures and throttling/server statuses map to retryable
//! errors; client errors and malformed replies do not, since retrying them
//! cannot help.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backend::{
    ClassifierBackend, EmbeddingBackend, EmbeddingKind, GeneratorBackend, InferenceBackend,
    InferenceRequest, InferenceResponse, JudgeBackend, SchemaId,
};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::mining::{parse_yes_no, CaptionCandidate};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// One HTTP service endpoint with its client and error labeling.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    service: String,
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(service: impl Into<String>, url: impl Into<String>) -> Result<Self> {
        Self::with_timeout(service, url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(
        service: impl Into<String>,
        url: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self> {
        let service = service.into();
        let url = url.into();
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(Error::Config(format!(
                "{service}: endpoint url must be http(s), got {url:?}"
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("{service}: client build failed: {e}")))?;
        Ok(HttpEndpoint { service, url, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn post_json<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let response = self
            .client
            .post(&self.url)
            .json(body)
            .send()
            .map_err(|e| self.transport_error(e))?;
        let status = response.status();
        let text = response.text().map_err(|e| self.transport_error(e))?;
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            let snippet: String = text.chars().take(200).collect();
            return Err(Error::backend(
                &self.service,
                format!("status {status}: {snippet}"),
                retryable,
            ));
        }
        serde_json::from_str(&text).map_err(|e| {
            Error::backend(&self.service, format!("malformed reply: {e}"), false)
        })
    }

    fn transport_error(&self, e: reqwest::Error) -> Error {
        let retryable = e.is_timeout() || e.is_connect();
        Error::backend(&self.service, e.to_string(), retryable)
    }
}

#[derive(Serialize)]
struct PromptBody<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    prompt: &'a str,
    schema_id: &'a str,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    kind: EmbeddingKind,
    payload: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    values: Vec<f64>,
}

/// Judge service: `{prompt}` in, `{text}` out.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    endpoint: HttpEndpoint,
}

impl HttpJudge {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpJudge { endpoint }
    }
}

impl JudgeBackend for HttpJudge {
    fn judge(&self, prompt: &str) -> Result<String> {
        let reply: TextReply = self.endpoint.post_json(&PromptBody { prompt })?;
        Ok(reply.text)
    }
}

/// Generator service: `{prompt, schema_id}` in, `{text}` out.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    endpoint: HttpEndpoint,
}

impl HttpGenerator {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpGenerator { endpoint }
    }
}

impl GeneratorBackend for HttpGenerator {
    fn generate(&self, prompt: &str, schema: SchemaId) -> Result<String> {
        let reply: TextReply = self
            .endpoint
            .post_json(&GenerateBody { prompt, schema_id: schema.as_str() })?;
        Ok(reply.text)
    }
}

/// Embedding service: `{kind, payload}` in, `{values}` out.
#[derive(Debug, Clone)]
pub struct HttpEmbedding {
    endpoint: HttpEndpoint,
}

impl HttpEmbedding {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpEmbedding { endpoint }
    }
}

impl EmbeddingBackend for HttpEmbedding {
    fn embed(&self, kind: EmbeddingKind, payload: &str) -> Result<EmbeddingVector> {
        let reply: EmbedReply = self.endpoint.post_json(&EmbedBody { kind, payload })?;
        EmbeddingVector::new(reply.values)
    }
}

/// Inference service: the request carries its role, so one endpoint can
/// serve any subset of roles.
#[derive(Debug, Clone)]
pub struct HttpInference {
    endpoint: HttpEndpoint,
}

impl HttpInference {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpInference { endpoint }
    }
}

impl InferenceBackend for HttpInference {
    fn infer(&self, request: &InferenceRequest) -> Result<InferenceResponse> {
        self.endpoint.post_json(request)
    }
}

/// Learned caption classifier served over the judge wire shape: the raw
/// caption text goes out as `{prompt}` and the reply `{text}` must normalize
/// to yes or no.
#[derive(Debug, Clone)]
pub struct HttpClassifier {
    endpoint: HttpEndpoint,
}

impl HttpClassifier {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpClassifier { endpoint }
    }
}

impl ClassifierBackend for HttpClassifier {
    fn classify(&self, candidate: &CaptionCandidate) -> Result<bool> {
        let reply: TextReply = self
            .endpoint
            .post_json(&PromptBody { prompt: &candidate.raw_text })?;
        parse_yes_no(&reply.text)
    }
}
