//! The one seam between this crate and every learned model or remote API.
//!
//! Backends exchange encoded image bytes; [`Bridge`] validates inputs,
//! applies the retry policy and files outputs in the [`ImageStore`].
//! Every backend has a deterministic mock so the pipeline runs offline.

pub mod mock;
pub mod remote;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::embedding::{Embedding, EmbeddingError};
use crate::store::{ImageRef, ImageStore, StoreError};

pub use mock::MockJudge;

/// Side of the conditioning canvas; the combiner accepts nothing else.
pub const CANVAS_SIDE: u32 = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("image encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("embedding decoder unavailable: {0}")]
    DecoderUnavailable(String),
    #[error("combination generator unavailable: {0}")]
    GeneratorUnavailable(String),
    #[error("text-to-image generator unavailable: {0}")]
    TextToImageUnavailable(String),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("prompt expander unavailable: {0}")]
    ExpanderUnavailable(String),
    #[error("perceptual similarity model unavailable: {0}")]
    SimilarityUnavailable(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("corrupt image: {0}")]
    CorruptImage(String),
    #[error("bad canvas: {0}")]
    BadCanvas(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("remote error: {0}")]
    Remote(String),
    #[error("store error: {0}")]
    Store(String),
}

impl From<StoreError> for BridgeError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::CorruptImage(msg) => BridgeError::CorruptImage(msg),
            other => BridgeError::Store(other.to_string()),
        }
    }
}

impl From<EmbeddingError> for BridgeError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::DimMismatch { expected, got } => BridgeError::DimMismatch { expected, got },
            other => BridgeError::Remote(format!("invalid embedding: {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeTemplate {
    /// Two input images followed by the output.
    TwoInput,
    /// One canvas holding both inputs, followed by the output.
    GridInput,
}

impl JudgeTemplate {
    pub fn prompt(self) -> &'static str {
        match self {
            JudgeTemplate::TwoInput => crate::prompts::JUDGE_TWO_INPUT,
            JudgeTemplate::GridInput => crate::prompts::JUDGE_GRID_INPUT,
        }
    }

    pub fn input_count(self) -> usize {
        match self {
            JudgeTemplate::TwoInput => 2,
            JudgeTemplate::GridInput => 1,
        }
    }
}

pub trait ImageEncoder: Send + Sync {
    fn embed(&self, image: &ImageRef, bytes: &[u8]) -> Result<Vec<f64>, BridgeError>;
}

pub trait EmbeddingDecoder: Send + Sync {
    /// Embedding width the decoder accepts, when known.
    fn expected_dim(&self) -> Option<usize>;
    /// Returns encoded image bytes.
    fn render(&self, embedding: &Embedding, seed: u64) -> Result<Vec<u8>, BridgeError>;
}

pub trait CombinationGenerator: Send + Sync {
    fn generate(&self, canvas: &ImageRef, canvas_bytes: &[u8], prompt: &str, seed: u64) -> Result<Vec<u8>, BridgeError>;
}

pub trait TextToImage: Send + Sync {
    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, BridgeError>;
}

pub trait ReconstructionJudge: Send + Sync {
    /// `images` holds the inputs followed by the output, in prompt order.
    fn describe(&self, prompt: &str, images: &[(&ImageRef, Vec<u8>)]) -> Result<String, BridgeError>;
}

pub trait PromptExpander: Send + Sync {
    fn expand(&self, vague: &str, n_variants: usize) -> Result<Vec<String>, BridgeError>;
}

pub trait PerceptualModel: Send + Sync {
    /// Perceptual distance; 0 means identical.
    fn distance(&self, a: &[u8], b: &[u8]) -> Result<f64, BridgeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Runs `op`, retrying only on [`BridgeError::RateLimited`] with
    /// exponentially growing sleeps. The last error is surfaced.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BridgeError>) -> Result<T, BridgeError> {
        let attempts = self.max_attempts.max(1);
        let mut backoff = Duration::from_millis(self.initial_backoff_ms);
        let mut attempt = 1;
        loop {
            match op() {
                Err(BridgeError::RateLimited(msg)) if attempt < attempts => {
                    warn!(attempt, %msg, "rate limited, backing off");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Remote endpoint for a locally hosted model service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Locator {
    pub url: String,
}

/// Hosted API; the key is read from `api_key_env` at call time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEndpoint {
    pub url: String,
    pub api_key_env: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    pub mock_mode: bool,
    /// Embedding width produced by the mock encoder and expected by decoders.
    pub embedding_dim: usize,
    pub clip_encoder: Option<Locator>,
    pub embedding_decoder: Option<Locator>,
    pub canvas_generator: Option<Locator>,
    pub text_to_image: Option<Locator>,
    pub vlm_judge: Option<ApiEndpoint>,
    pub llm_expander: Option<ApiEndpoint>,
    pub perceptual_sim: Option<Locator>,
    pub retry: RetryPolicy,
    pub request_timeout_secs: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            mock_mode: true,
            embedding_dim: 32,
            clip_encoder: None,
            embedding_decoder: None,
            canvas_generator: None,
            text_to_image: None,
            vlm_judge: None,
            llm_expander: None,
            perceptual_sim: None,
            retry: RetryPolicy::default(),
            request_timeout_secs: 300,
        }
    }
}

impl BridgeConfig {
    pub fn mock(embedding_dim: usize) -> Self {
        Self {
            embedding_dim,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, BridgeError> {
        let config: BridgeConfig =
            toml::from_str(text).map_err(|e| BridgeError::Precondition(format!("bad bridge config: {e}")))?;
        if config.embedding_dim == 0 {
            return Err(BridgeError::Precondition("embedding_dim must be positive".into()));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BridgeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BridgeError::Precondition(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[derive(Clone)]
pub struct Backends {
    pub encoder: Arc<dyn ImageEncoder>,
    pub decoder: Arc<dyn EmbeddingDecoder>,
    pub generator: Arc<dyn CombinationGenerator>,
    pub text_to_image: Arc<dyn TextToImage>,
    pub judge: Arc<dyn ReconstructionJudge>,
    pub expander: Arc<dyn PromptExpander>,
    pub perceptual: Arc<dyn PerceptualModel>,
}

impl Backends {
    pub fn mock(embedding_dim: usize) -> Self {
        Self {
            encoder: Arc::new(mock::MockEncoder::new(embedding_dim)),
            decoder: Arc::new(mock::MockDecoder::new(embedding_dim)),
            generator: Arc::new(mock::MockGenerator),
            text_to_image: Arc::new(mock::MockTextToImage::new(embedding_dim)),
            judge: Arc::new(MockJudge::default()),
            expander: Arc::new(mock::MockExpander),
            perceptual: Arc::new(mock::MockPerceptual),
        }
    }

    /// Remote clients for every configured locator; unconfigured roles fail
    /// with their `*Unavailable` error when called.
    pub fn remote(config: &BridgeConfig) -> Self {
        remote::backends(config)
    }
}

/// Facade over the backends plus the image store. Cheap to clone; clones
/// share backends.
#[derive(Clone)]
pub struct Bridge {
    backends: Backends,
    store: ImageStore,
    retry: RetryPolicy,
    mock_mode: bool,
}

impl Bridge {
    pub fn new(backends: Backends, store: ImageStore, retry: RetryPolicy, mock_mode: bool) -> Self {
        Self {
            backends,
            store,
            retry,
            mock_mode,
        }
    }

    pub fn from_config(config: &BridgeConfig, store: ImageStore) -> Self {
        let backends = if config.mock_mode {
            Backends::mock(config.embedding_dim)
        } else {
            Backends::remote(config)
        };
        Self::new(backends, store, config.retry, config.mock_mode)
    }

    pub fn mock(store: ImageStore, embedding_dim: usize) -> Self {
        Self::new(Backends::mock(embedding_dim), store, RetryPolicy::default(), true)
    }

    pub fn with_judge(mut self, judge: Arc<dyn ReconstructionJudge>) -> Self {
        self.backends.judge = judge;
        self
    }

    pub fn with_backends(mut self, backends: Backends) -> Self {
        self.backends = backends;
        self
    }

    pub fn store(&self) -> &ImageStore {
        &self.store
    }

    pub fn is_mock(&self) -> bool {
        self.mock_mode
    }

    fn readable(img: &ImageRef) -> Result<Vec<u8>, BridgeError> {
        let bytes = img.read_bytes().map_err(|e| BridgeError::CorruptImage(e.to_string()))?;
        if bytes.is_empty() {
            return Err(BridgeError::CorruptImage(format!("{} is empty", img.path.display())));
        }
        Ok(bytes)
    }

    fn file(&self, bytes: Vec<u8>) -> Result<ImageRef, BridgeError> {
        Ok(self.store.put_bytes(&bytes)?)
    }

    pub fn embed_image(&self, img: &ImageRef) -> Result<Embedding, BridgeError> {
        let bytes = Self::readable(img)?;
        let values = self.retry.run(|| self.backends.encoder.embed(img, &bytes))?;
        Ok(Embedding::new(values)?)
    }

    pub fn render_embedding(&self, e: &Embedding, seed: u64) -> Result<ImageRef, BridgeError> {
        if let Some(expected) = self.backends.decoder.expected_dim() {
            e.check_dim(expected)?;
        }
        let bytes = self.retry.run(|| self.backends.decoder.render(e, seed))?;
        self.file(bytes)
    }

    pub fn generate_combination(&self, canvas: &ImageRef, prompt: &str, seed: u64) -> Result<ImageRef, BridgeError> {
        if (canvas.width, canvas.height) != (CANVAS_SIDE, CANVAS_SIDE) {
            return Err(BridgeError::BadCanvas(format!(
                "canvas is {}×{}, expected {CANVAS_SIDE}×{CANVAS_SIDE}",
                canvas.width, canvas.height
            )));
        }
        let bytes = Self::readable(canvas)?;
        let out = self.retry.run(|| self.backends.generator.generate(canvas, &bytes, prompt, seed))?;
        self.file(out)
    }

    pub fn generate_from_text(&self, prompt: &str, seed: u64) -> Result<ImageRef, BridgeError> {
        let bytes = self.retry.run(|| self.backends.text_to_image.generate(prompt, seed))?;
        self.file(bytes)
    }

    /// Judge's verbatim bullet text for how `output` could be rebuilt from `inputs`.
    pub fn describe_reconstruction(
        &self,
        inputs: &[ImageRef],
        output: &ImageRef,
        template: JudgeTemplate,
    ) -> Result<String, BridgeError> {
        if inputs.len() != template.input_count() {
            return Err(BridgeError::Precondition(format!(
                "{template:?} template takes {} input image(s), got {}",
                template.input_count(),
                inputs.len()
            )));
        }
        let mut images = Vec::with_capacity(inputs.len() + 1);
        for img in inputs.iter().chain(std::iter::once(output)) {
            images.push((img, Self::readable(img)?));
        }
        self.retry.run(|| self.backends.judge.describe(template.prompt(), &images))
    }

    pub fn expand_prompt(&self, vague: &str, n_variants: usize) -> Result<Vec<String>, BridgeError> {
        if n_variants == 0 {
            return Err(BridgeError::Precondition("n_variants must be at least 1".into()));
        }
        let variants = self.retry.run(|| self.backends.expander.expand(vague, n_variants))?;
        let mut seen = std::collections::HashSet::new();
        if variants.len() != n_variants || !variants.iter().all(|v| seen.insert(v.as_str())) {
            return Err(BridgeError::Remote(format!(
                "expander returned {} variants, {} distinct; wanted {n_variants} distinct",
                variants.len(),
                seen.len()
            )));
        }
        Ok(variants)
    }

    /// `1 − distance`, clamped to [0, 1].
    pub fn perceptual_similarity(&self, a: &ImageRef, b: &ImageRef) -> Result<f64, BridgeError> {
        let (ba, bb) = (Self::readable(a)?, Self::readable(b)?);
        let d = self.retry.run(|| self.backends.perceptual.distance(&ba, &bb))?;
        if !d.is_finite() {
            return Err(BridgeError::Remote(format!("non-finite distance {d}")));
        }
        Ok((1.0 - d).clamp(0.0, 1.0))
    }
}

/// Independent bridges handed out round-robin to concurrent callers.
pub struct BridgePool {
    bridges: Vec<Bridge>,
    next: AtomicUsize,
}

impl BridgePool {
    pub fn new(config: &BridgeConfig, store: ImageStore, size: usize) -> Self {
        let bridges = (0..size.max(1))
            .map(|_| Bridge::from_config(config, store.clone()))
            .collect();
        Self {
            bridges,
            next: AtomicUsize::new(0),
        }
    }

    pub fn get(&self) -> &Bridge {
        let i = self.next.fetch_add(1, Ordering::Relaxed) % self.bridges.len();
        &self.bridges[i]
    }

    pub fn len(&self) -> usize {
        self.bridges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bridges.is_empty()
    }
}
