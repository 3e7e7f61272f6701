//! Fine-tuning configuration and a desk-scale smoke trainer.
//!
//! The production run happens in an external LoRA toolkit; this module
//! emits its configuration and exercises the data path against a pluggable
//! [`TrainerBackend`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forge::{compose_canvas_image, CanvasLayout, TripletRecord};
use crate::manifest::{read_manifest, ManifestError};
use crate::prompts::COMBINE_PROMPT;
use crate::store::StoreError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("unknown config field `{0}`")]
    UnknownField(String),
    #[error("bad value for `{key}`: {reason}")]
    BadOverride { key: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("dataset has no ok triplets")]
    EmptyDataset,
    #[error("trainer backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub lora_rank_linear: u32,
    pub lora_rank_conv: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub steps: u64,
    /// Only the name is fixed; schedule, decay and precision are backend defaults.
    pub optimizer: String,
    pub fixed_prompt: String,
    pub dataset_manifest: PathBuf,
    pub checkpoint_every: u64,
    pub rng_seed: u64,
    pub canvas: CanvasLayout,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            lora_rank_linear: 32,
            lora_rank_conv: 16,
            learning_rate: 1e-4,
            batch_size: 1,
            steps: 15_000,
            optimizer: "adamw".into(),
            fixed_prompt: COMBINE_PROMPT.into(),
            dataset_manifest: PathBuf::from("manifests/triplets.jsonl"),
            checkpoint_every: 500,
            rng_seed: 0,
            canvas: CanvasLayout::CANONICAL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TunerError> {
        let fail = |msg: &str| Err(TunerError::Invalid(msg.into()));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(TunerError::Invalid(format!(
                "schema_version {}, expected {CONFIG_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.lora_rank_linear == 0 || self.lora_rank_conv == 0 {
            return fail("lora ranks must be positive");
        }
        if self.steps == 0 {
            return fail("steps must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.fixed_prompt != COMBINE_PROMPT {
            return fail("fixed_prompt must equal the canonical combination prompt");
        }
        if !self.canvas.is_canonical() {
            return fail("canvas layout is fixed");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, TunerError> {
        let config: Self = toml::from_str(text).map_err(|e| match unknown_field(&e) {
            Some(field) => TunerError::UnknownField(field),
            None => TunerError::Invalid(e.message().to_string()),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, TunerError> {
        let text = fs::read_to_string(path).map_err(|source| TunerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), TunerError> {
        fs::write(path, self.to_toml()).map_err(|source| TunerError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn unknown_field(e: &toml::de::Error) -> Option<String> {
    let msg = e.message();
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Defaults with `key=value` overrides applied. Values are read as TOML
/// literals, falling back to a bare string.
pub fn emit_config<S: AsRef<str>>(overrides: &[S]) -> Result<TrainConfig, TunerError> {
    let mut table = toml::Table::try_from(TrainConfig::default()).expect("config serializes");
    for raw in overrides {
        let raw = raw.as_ref();
        let (key, value) = raw.split_once('=').ok_or_else(|| TunerError::BadOverride {
            key: raw.to_string(),
            reason: "expected key=value".into(),
        })?;
        let key = key.trim();
        if !table.contains_key(key) {
            return Err(TunerError::UnknownField(key.to_string()));
        }
        table.insert(key.to_string(), parse_value(value.trim()));
    }
    let config: TrainConfig = table.try_into().map_err(|e: toml::de::Error| TunerError::BadOverride {
        key: overrides.iter().map(|o| o.as_ref()).collect::<Vec<_>>().join(", "),
        reason: e.message().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// One training pair: the conditioning canvas and the image it should yield.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub id: String,
    pub canvas: RgbImage,
    pub target: RgbImage,
}

/// Canvases are composed in memory; the manifest and store are only read.
pub fn load_samples(manifest: &Path) -> Result<Vec<TrainingSample>, TunerError> {
    let read = read_manifest::<TripletRecord>(manifest)?;
    let mut samples = Vec::new();
    for t in read.records.iter().filter(|t| t.is_ok()) {
        let (Some(a), Some(b)) = (&t.a, &t.b) else { continue };
        samples.push(TrainingSample {
            id: t.id.clone(),
            canvas: compose_canvas_image(&a.decode()?, &b.decode()?),
            target: t.comb.decode()?.to_rgb8(),
        });
    }
    if samples.is_empty() {
        return Err(TunerError::EmptyDataset);
    }
    Ok(samples)
}

pub trait TrainerBackend {
    fn name(&self) -> &str;
    /// Settings the backend chose on its own, reported verbatim.
    fn notes(&self) -> BTreeMap<String, String>;
    fn prepare(&mut self, config: &TrainConfig, samples: &[TrainingSample]) -> Result<(), TunerError>;
    /// Current loss over the prepared dataset.
    fn loss(&self) -> f64;
    /// One optimizer step; returns the loss after it.
    fn step(&mut self) -> Result<f64, TunerError>;
}

/// Ships no trainer; reports why.
pub struct UnavailableBackend(pub String);

impl TrainerBackend for UnavailableBackend {
    fn name(&self) -> &str {
        "unavailable"
    }
    fn notes(&self) -> BTreeMap<String, String> {
        BTreeMap::new()
    }
    fn prepare(&mut self, _: &TrainConfig, _: &[TrainingSample]) -> Result<(), TunerError> {
        Err(TunerError::BackendUnavailable(self.0.clone()))
    }
    fn loss(&self) -> f64 {
        f64::NAN
    }
    fn step(&mut self) -> Result<f64, TunerError> {
        Err(TunerError::BackendUnavailable(self.0.clone()))
    }
}

const MOCK_FEATURES: usize = 7;

fn mean_rgb(img: &DynamicImage) -> [f64; 3] {
    let rgb = img.to_rgb8();
    let mut sum = [0.0; 3];
    for p in rgb.pixels() {
        for c in 0..3 {
            sum[c] += p[c] as f64;
        }
    }
    let n = (rgb.width() * rgb.height()).max(1) as f64 * 255.0;
    sum.map(|s| s / n)
}

fn canvas_features(canvas: &RgbImage) -> [f64; MOCK_FEATURES] {
    let layout = CanvasLayout::CANONICAL;
    let img = DynamicImage::ImageRgb8(canvas.clone());
    let tile = |o: (u32, u32)| mean_rgb(&img.crop_imm(o.0, o.1, layout.tile.0, layout.tile.1));
    let a = tile(layout.a_origin);
    let b = tile(layout.b_origin);
    [a[0], a[1], a[2], b[0], b[1], b[2], 1.0]
}

/// Linear map from canvas tile colour statistics to the target's mean
/// colour, fit by full-batch gradient descent on mean squared error.
///
/// The step size is 1/L with L an upper bound on the loss curvature, so
/// every step strictly lowers the loss until the gradient vanishes.
pub struct MockBackend {
    weights: [[f64; MOCK_FEATURES]; 3],
    features: Vec<[f64; MOCK_FEATURES]>,
    targets: Vec<[f64; 3]>,
    step_size: f64,
}

impl MockBackend {
    pub fn new() -> Self {
        Self {
            weights: [[0.0; MOCK_FEATURES]; 3],
            features: Vec::new(),
            targets: Vec::new(),
            step_size: 0.0,
        }
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl TrainerBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn notes(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("optimizer".into(), "full-batch gradient descent (config optimizer and learning_rate unused)".into()),
            ("step_size".into(), format!("{:.6}", self.step_size)),
            ("model".into(), "linear map, tile mean colours -> target mean colour".into()),
        ])
    }

    fn prepare(&mut self, config: &TrainConfig, samples: &[TrainingSample]) -> Result<(), TunerError> {
        if samples.is_empty() {
            return Err(TunerError::EmptyDataset);
        }
        self.features = samples.iter().map(|s| canvas_features(&s.canvas)).collect();
        self.targets = samples
            .iter()
            .map(|s| mean_rgb(&DynamicImage::ImageRgb8(s.target.clone())))
            .collect();
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        for row in &mut self.weights {
            for w in row.iter_mut() {
                *w = normal.sample(&mut rng);
            }
        }
        let mean_sq_norm = self
            .features
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / self.features.len() as f64;
        self.step_size = 1.0 / (2.0 * mean_sq_norm);
        Ok(())
    }

    fn loss(&self) -> f64 {
        let mut total = 0.0;
        for (x, y) in self.features.iter().zip(&self.targets) {
            for c in 0..3 {
                let pred: f64 = self.weights[c].iter().zip(x).map(|(w, v)| w * v).sum();
                total += (pred - y[c]).powi(2);
            }
        }
        total / self.features.len().max(1) as f64
    }

    fn step(&mut self) -> Result<f64, TunerError> {
        let n = self.features.len() as f64;
        let mut grad = [[0.0; MOCK_FEATURES]; 3];
        for (x, y) in self.features.iter().zip(&self.targets) {
            for c in 0..3 {
                let pred: f64 = self.weights[c].iter().zip(x).map(|(w, v)| w * v).sum();
                let r = 2.0 * (pred - y[c]) / n;
                for (g, v) in grad[c].iter_mut().zip(x) {
                    *g += r * v;
                }
            }
        }
        for (row, g) in self.weights.iter_mut().zip(&grad) {
            for (w, gi) in row.iter_mut().zip(g) {
                *w -= self.step_size * gi;
            }
        }
        Ok(self.loss())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeReport {
    pub backend: String,
    pub samples: usize,
    pub steps: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss after each step, index 0 is after step 1.
    pub losses: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
    pub backend_notes: BTreeMap<String, String>,
}

pub fn smoke_train(
    config: &TrainConfig,
    backend: &mut dyn TrainerBackend,
    max_steps: u64,
) -> Result<SmokeReport, TunerError> {
    smoke_train_observed(config, backend, max_steps, |_, _| {})
}

/// As [`smoke_train`], calling `observe(step, loss)` after every step.
pub fn smoke_train_observed(
    config: &TrainConfig,
    backend: &mut dyn TrainerBackend,
    max_steps: u64,
    mut observe: impl FnMut(u64, f64),
) -> Result<SmokeReport, TunerError> {
    config.validate()?;
    let samples = load_samples(&config.dataset_manifest)?;
    backend.prepare(config, &samples)?;
    let steps = max_steps.min(config.steps);
    let initial_loss = backend.loss();
    let mut losses = Vec::with_capacity(steps as usize);
    let mut checkpoints = Vec::new();
    for step in 1..=steps {
        let loss = backend.step()?;
        losses.push(loss);
        observe(step, loss);
        if step % config.checkpoint_every == 0 || step == steps {
            checkpoints.push(Checkpoint { step, loss });
        }
    }
    Ok(SmokeReport {
        backend: backend.name().to_string(),
        samples: samples.len(),
        steps,
        initial_loss,
        final_loss: losses.last().copied().unwrap_or(initial_loss),
        losses,
        checkpoints,
        backend_notes: backend.notes(),
    })
}
