//! HTTP clients for real model services.
//!
//! Self-hosted models (encoder, decoder, combiner, text-to-image,
//! perceptual distance) speak a small JSON protocol, images as base64:
//!
//! | role            | request                                  | response                 |
//! |-----------------|------------------------------------------|--------------------------|
//! | encoder         | `{"image"}`                              | `{"embedding": [f64]}`   |
//! | decoder         | `{"embedding": [f64], "seed"}`           | `{"image"}`              |
//! | combiner        | `{"canvas", "prompt", "seed"}`           | `{"image"}`              |
//! | text-to-image   | `{"prompt", "seed"}`                     | `{"image"}`              |
//! | perceptual      | `{"a", "b"}`                             | `{"distance": f64}`      |
//!
//! The judge and the prompt expander are hosted chat APIs reached through
//! the OpenAI-compatible `chat/completions` shape with a bearer key taken
//! from the configured environment variable.

use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{
    ApiEndpoint, Backends, BridgeConfig, BridgeError, CombinationGenerator, EmbeddingDecoder, ImageEncoder, Locator,
    PerceptualModel, PromptExpander, ReconstructionJudge, TextToImage,
};
use crate::embedding::Embedding;
use crate::store::ImageRef;

type ErrorCtor = fn(String) -> BridgeError;

/// One HTTP client; calls through a single instance are serialized.
struct Http {
    timeout: Duration,
    client: OnceLock<Client>,
    gate: Mutex<()>,
    unavailable: ErrorCtor,
}

impl Http {
    fn new(timeout_secs: u64, unavailable: ErrorCtor) -> Self {
        Self {
            timeout: Duration::from_secs(timeout_secs.max(1)),
            client: OnceLock::new(),
            gate: Mutex::new(()),
            unavailable,
        }
    }

    fn post(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, BridgeError> {
        let _serial = self.gate.lock().unwrap_or_else(|p| p.into_inner());
        // Built lazily: a blocking client must not be created on an async runtime thread.
        let client = self.client.get_or_init(|| {
            Client::builder()
                .timeout(self.timeout)
                .build()
                .expect("HTTP client configuration is static")
        });
        let mut req = client.post(url).json(body);
        if let Some(key) = bearer {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (self.unavailable)(format!("{url}: {e}")))?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Err(BridgeError::RateLimited(format!("{url} returned 429")));
        }
        if status == StatusCode::SERVICE_UNAVAILABLE {
            return Err((self.unavailable)(format!("{url} returned 503")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BridgeError::Remote(format!("{url} returned {status}: {text}")));
        }
        resp.json().map_err(|e| BridgeError::Remote(format!("{url}: invalid JSON: {e}")))
    }
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value, BridgeError> {
    v.get(name)
        .ok_or_else(|| BridgeError::Remote(format!("response lacks `{name}`")))
}

fn image_field(v: &Value) -> Result<Vec<u8>, BridgeError> {
    let text = field(v, "image")?
        .as_str()
        .ok_or_else(|| BridgeError::Remote("`image` must be a base64 string".into()))?;
    B64.decode(text)
        .map_err(|e| BridgeError::Remote(format!("bad base64 image: {e}")))
}

fn api_key(endpoint: &ApiEndpoint, unavailable: ErrorCtor) -> Result<String, BridgeError> {
    match std::env::var(&endpoint.api_key_env) {
        Ok(key) if !key.is_empty() => Ok(key),
        _ => Err(unavailable(format!("environment variable {} is not set", endpoint.api_key_env))),
    }
}

fn chat_text(v: &Value) -> Result<String, BridgeError> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BridgeError::Remote("chat response lacks choices[0].message.content".into()))
}

pub struct RemoteEncoder {
    locator: Locator,
    http: Http,
}

impl ImageEncoder for RemoteEncoder {
    fn embed(&self, _image: &ImageRef, bytes: &[u8]) -> Result<Vec<f64>, BridgeError> {
        let resp = self.http.post(&self.locator.url, None, &json!({ "image": B64.encode(bytes) }))?;
        serde_json::from_value(field(&resp, "embedding")?.clone())
            .map_err(|e| BridgeError::Remote(format!("bad embedding: {e}")))
    }
}

pub struct RemoteDecoder {
    locator: Locator,
    dim: usize,
    http: Http,
}

impl EmbeddingDecoder for RemoteDecoder {
    fn expected_dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn render(&self, embedding: &Embedding, seed: u64) -> Result<Vec<u8>, BridgeError> {
        let body = json!({ "embedding": embedding.as_slice(), "seed": seed });
        image_field(&self.http.post(&self.locator.url, None, &body)?)
    }
}

pub struct RemoteGenerator {
    locator: Locator,
    http: Http,
}

impl CombinationGenerator for RemoteGenerator {
    fn generate(&self, _canvas: &ImageRef, canvas_bytes: &[u8], prompt: &str, seed: u64) -> Result<Vec<u8>, BridgeError> {
        let body = json!({ "canvas": B64.encode(canvas_bytes), "prompt": prompt, "seed": seed });
        image_field(&self.http.post(&self.locator.url, None, &body)?)
    }
}

pub struct RemoteTextToImage {
    locator: Locator,
    http: Http,
}

impl TextToImage for RemoteTextToImage {
    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, BridgeError> {
        image_field(&self.http.post(&self.locator.url, None, &json!({ "prompt": prompt, "seed": seed }))?)
    }
}

pub struct RemotePerceptual {
    locator: Locator,
    http: Http,
}

impl PerceptualModel for RemotePerceptual {
    fn distance(&self, a: &[u8], b: &[u8]) -> Result<f64, BridgeError> {
        let body = json!({ "a": B64.encode(a), "b": B64.encode(b) });
        field(&self.http.post(&self.locator.url, None, &body)?, "distance")?
            .as_f64()
            .ok_or_else(|| BridgeError::Remote("`distance` must be a number".into()))
    }
}

pub struct RemoteJudge {
    endpoint: ApiEndpoint,
    http: Http,
}

impl ReconstructionJudge for RemoteJudge {
    fn describe(&self, prompt: &str, images: &[(&ImageRef, Vec<u8>)]) -> Result<String, BridgeError> {
        let key = api_key(&self.endpoint, BridgeError::JudgeUnavailable)?;
        let mut content = Vec::with_capacity(images.len() + 1);
        for (img, bytes) in images {
            content.push(json!({
                "type": "image_url",
                "image_url": { "url": format!("data:{};base64,{}", img.content_type(), B64.encode(bytes)) }
            }));
        }
        content.push(json!({ "type": "text", "text": prompt }));
        let body = json!({
            "model": self.endpoint.model,
            "messages": [{ "role": "user", "content": content }],
        });
        chat_text(&self.http.post(&self.endpoint.url, Some(&key), &body)?)
    }
}

pub struct RemoteExpander {
    endpoint: ApiEndpoint,
    http: Http,
}

impl RemoteExpander {
    fn instruction(vague: &str, n_variants: usize) -> String {
        format!(
            "Expand the following vague image prompt into {n_variants} distinct, visually rich image descriptions. \
             Each interpretation should differ in subject, setting or style. Answer with exactly {n_variants} lines, \
             one description per line, no numbering.\n\nPrompt: {vague}"
        )
    }
}

impl PromptExpander for RemoteExpander {
    fn expand(&self, vague: &str, n_variants: usize) -> Result<Vec<String>, BridgeError> {
        let key = api_key(&self.endpoint, BridgeError::ExpanderUnavailable)?;
        let body = json!({
            "model": self.endpoint.model,
            "messages": [{ "role": "user", "content": Self::instruction(vague, n_variants) }],
        });
        let text = chat_text(&self.http.post(&self.endpoint.url, Some(&key), &body)?)?;
        let mut lines: Vec<String> = Vec::new();
        for line in text.lines() {
            let line = line.trim().trim_start_matches(['-', '*', '•']).trim();
            if !line.is_empty() && !lines.iter().any(|l| l == line) {
                lines.push(line.to_string());
            }
        }
        lines.truncate(n_variants);
        Ok(lines)
    }
}

/// Always fails with the role's unavailability error.
struct Missing {
    role: &'static str,
    unavailable: ErrorCtor,
}

impl Missing {
    fn fail<T>(&self) -> Result<T, BridgeError> {
        Err((self.unavailable)(format!("no {} configured", self.role)))
    }
}

impl ImageEncoder for Missing {
    fn embed(&self, _: &ImageRef, _: &[u8]) -> Result<Vec<f64>, BridgeError> {
        self.fail()
    }
}

impl EmbeddingDecoder for Missing {
    fn expected_dim(&self) -> Option<usize> {
        None
    }
    fn render(&self, _: &Embedding, _: u64) -> Result<Vec<u8>, BridgeError> {
        self.fail()
    }
}

impl CombinationGenerator for Missing {
    fn generate(&self, _: &ImageRef, _: &[u8], _: &str, _: u64) -> Result<Vec<u8>, BridgeError> {
        self.fail()
    }
}

impl TextToImage for Missing {
    fn generate(&self, _: &str, _: u64) -> Result<Vec<u8>, BridgeError> {
        self.fail()
    }
}

impl ReconstructionJudge for Missing {
    fn describe(&self, _: &str, _: &[(&ImageRef, Vec<u8>)]) -> Result<String, BridgeError> {
        self.fail()
    }
}

impl PromptExpander for Missing {
    fn expand(&self, _: &str, _: usize) -> Result<Vec<String>, BridgeError> {
        self.fail()
    }
}

impl PerceptualModel for Missing {
    fn distance(&self, _: &[u8], _: &[u8]) -> Result<f64, BridgeError> {
        self.fail()
    }
}

pub(super) fn backends(config: &BridgeConfig) -> Backends {
    use std::sync::Arc;
    let t = config.request_timeout_secs;
    macro_rules! pick {
        ($opt:expr, $role:literal, $err:path, |$loc:ident, $http:ident| $make:expr) => {
            match &$opt {
                Some($loc) => {
                    let $loc = $loc.clone();
                    let $http = Http::new(t, $err);
                    Arc::new($make) as Arc<_>
                }
                None => Arc::new(Missing {
                    role: $role,
                    unavailable: $err,
                }) as Arc<_>,
            }
        };
    }
    Backends {
        encoder: pick!(config.clip_encoder, "clip_encoder", BridgeError::EncoderUnavailable, |locator, http| {
            RemoteEncoder { locator, http }
        }),
        decoder: pick!(config.embedding_decoder, "embedding_decoder", BridgeError::DecoderUnavailable, |locator, http| {
            RemoteDecoder {
                locator,
                dim: config.embedding_dim,
                http,
            }
        }),
        generator: pick!(config.canvas_generator, "canvas_generator", BridgeError::GeneratorUnavailable, |locator, http| {
            RemoteGenerator { locator, http }
        }),
        text_to_image: pick!(config.text_to_image, "text_to_image", BridgeError::TextToImageUnavailable, |locator, http| {
            RemoteTextToImage { locator, http }
        }),
        judge: pick!(config.vlm_judge, "vlm_judge", BridgeError::JudgeUnavailable, |endpoint, http| {
            RemoteJudge { endpoint, http }
        }),
        expander: pick!(config.llm_expander, "llm_expander", BridgeError::ExpanderUnavailable, |endpoint, http| {
            RemoteExpander { endpoint, http }
        }),
        perceptual: pick!(config.perceptual_sim, "perceptual_sim", BridgeError::SimilarityUnavailable, |locator, http| {
            RemotePerceptual { locator, http }
        }),
    }
}
