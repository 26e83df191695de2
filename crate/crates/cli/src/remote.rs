//! HTTP clients for external encoders, pair scorers and generators.
//!
//! * `POST {base}/embed` `{"texts": [..], "mode": "query"|"context"}` → `{"vectors": [[..]]}`
//! * `POST {base}/score` `{"pairs": [{"question", "table", "triple"}]}` → `{"scores": [..]}`
//! * `POST {base}/generate` `{"prompt", "max_tokens", "temperature"}` → `{"text": ".."}`
//!
//! Clients are blocking; build them outside any async runtime.

use std::time::Duration;

use kbtqa_core::app::{GenerationClient, GenerationError};
use kbtqa_core::retrieve::{EmbedMode, EmbeddingProvider, PairScorer, ProviderError, ScorePair};
use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::HttpConfig;

/// Texts per `/embed` request.
const EMBED_CHUNK: usize = 64;

#[derive(Clone, Debug)]
struct Endpoint {
    client: Client,
    url: String,
    retries: usize,
}

impl Endpoint {
    fn new(base: &str, path: &str, http: &HttpConfig) -> Result<Self, String> {
        let client = Client::builder()
            .timeout(Duration::from_secs(http.timeout_secs.max(1)))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            client,
            url: format!("{}/{path}", base.trim_end_matches('/')),
            retries: http.retries,
        })
    }

    fn post<T: DeserializeOwned>(&self, body: &serde_json::Value) -> Result<T, String> {
        let mut attempt = 0;
        loop {
            let res = self.client.post(&self.url).json(body).send();
            let retryable = match &res {
                Ok(r) => r.status().is_server_error(),
                Err(e) => e.is_connect() || e.is_timeout(),
            };
            if retryable && attempt < self.retries {
                attempt += 1;
                log::warn!("{}: attempt {attempt} failed, retrying", self.url);
                std::thread::sleep(Duration::from_millis(100 * attempt as u64));
                continue;
            }
            let r = res.map_err(|e| format!("{}: {e}", self.url))?;
            let status = r.status();
            if !status.is_success() {
                let text = r.text().unwrap_or_default();
                return Err(format!("{}: HTTP {status}: {}", self.url, text.trim()));
            }
            return r.json::<T>().map_err(|e| format!("{}: bad response: {e}", self.url));
        }
    }
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

/// Encoder behind the `/embed` contract.
#[derive(Clone, Debug)]
pub struct RemoteEmbedder {
    endpoint: Endpoint,
    dim: usize,
}

impl RemoteEmbedder {
    /// `dim: None` asks the service once to learn its width.
    pub fn new(base: &str, dim: Option<usize>, http: &HttpConfig) -> Result<Self, ProviderError> {
        let endpoint = Endpoint::new(base, "embed", http).map_err(ProviderError::new)?;
        let mut e = Self { endpoint, dim: 0 };
        e.dim = match dim {
            Some(d) => d,
            None => {
                let v = e.request(&["dimension probe".to_string()], EmbedMode::Query)?;
                v[0].len()
            }
        };
        if e.dim == 0 {
            return Err(ProviderError::new("remote encoder reports zero-length vectors"));
        }
        Ok(e)
    }

    fn request(&self, texts: &[String], mode: EmbedMode) -> Result<Vec<Vec<f64>>, ProviderError> {
        let reply: EmbedReply = self
            .endpoint
            .post(&json!({"texts": texts, "mode": mode}))
            .map_err(ProviderError::new)?;
        if reply.vectors.len() != texts.len() {
            return Err(ProviderError::new(format!(
                "{} vectors for {} texts",
                reply.vectors.len(),
                texts.len()
            )));
        }
        if self.dim > 0 {
            if let Some(v) = reply.vectors.iter().find(|v| v.len() != self.dim) {
                return Err(ProviderError::new(format!("vector of length {}, expected {}", v.len(), self.dim)));
            }
        }
        if reply.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(ProviderError::new("non-finite vector component"));
        }
        Ok(reply.vectors)
    }
}

impl EmbeddingProvider<f64> for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("remote:{}:dim={}", self.endpoint.url, self.dim)
    }

    fn embed(&self, text: &str, mode: EmbedMode) -> Result<Vec<f64>, ProviderError> {
        Ok(self.request(&[text.to_string()], mode)?.remove(0))
    }

    fn embed_batch(&self, texts: &[String], mode: EmbedMode) -> Result<Vec<Vec<f64>>, ProviderError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(EMBED_CHUNK) {
            out.extend(self.request(chunk, mode)?);
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: &'a [ScorePair],
}

#[derive(Deserialize)]
struct ScoreReply {
    scores: Vec<f64>,
}

/// Cross-encoder behind the `/score` contract.
#[derive(Clone, Debug)]
pub struct RemoteScorer {
    endpoint: Endpoint,
}

impl RemoteScorer {
    pub fn new(base: &str, http: &HttpConfig) -> Result<Self, ProviderError> {
        Ok(Self {
            endpoint: Endpoint::new(base, "score", http).map_err(ProviderError::new)?,
        })
    }
}

impl PairScorer for RemoteScorer {
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>, ProviderError> {
        let body = serde_json::to_value(ScoreRequest { pairs }).map_err(|e| ProviderError::new(e.to_string()))?;
        let reply: ScoreReply = self.endpoint.post(&body).map_err(ProviderError::new)?;
        if reply.scores.len() != pairs.len() {
            return Err(ProviderError::new(format!(
                "{} scores for {} pairs",
                reply.scores.len(),
                pairs.len()
            )));
        }
        if let Some(s) = reply.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(ProviderError::new(format!("score {s} outside [0, 1]")));
        }
        Ok(reply.scores)
    }
}

#[derive(Deserialize)]
struct GenerateReply {
    text: String,
}

/// Generator behind the `/generate` contract.
#[derive(Clone, Debug)]
pub struct RemoteGenerator {
    endpoint: Endpoint,
}

impl RemoteGenerator {
    pub fn new(base: &str, http: &HttpConfig) -> Result<Self, GenerationError> {
        Ok(Self {
            endpoint: Endpoint::new(base, "generate", http).map_err(GenerationError)?,
        })
    }
}

impl GenerationClient for RemoteGenerator {
    fn generate(&self, prompt: &str, max_tokens: usize, temperature: f64) -> Result<String, GenerationError> {
        let reply: GenerateReply = self
            .endpoint
            .post(&json!({"prompt": prompt, "max_tokens": max_tokens, "temperature": temperature}))
            .map_err(GenerationError)?;
        Ok(reply.text)
    }
}
