//! Source image pool: multi-attribute templated prompts plus vague prompts
//! expanded into several concrete interpretations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{run_bounded, ForgeError};
use crate::bridge::Bridge;
use crate::manifest::ManifestRecord;
use crate::store::ImageRef;

/// Triplet count of the full-size dataset.
pub const FULL_POOL_SIZE: usize = 2085;
/// Default pool size for local runs.
pub const DESK_POOL_SIZE: usize = 16;

/// A prompt pattern with `{slot}` placeholders; every combination of slot
/// values is generated, slots varying in name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub pattern: String,
    pub slots: BTreeMap<String, Vec<String>>,
}

impl PromptTemplate {
    pub fn expand(&self) -> Vec<String> {
        let mut prompts = vec![self.pattern.clone()];
        for (name, values) in &self.slots {
            let placeholder = format!("{{{name}}}");
            let placeholder = placeholder.as_str();
            prompts = prompts
                .iter()
                .flat_map(|p| values.iter().map(move |v| p.replace(placeholder, v)))
                .collect();
        }
        prompts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub templated: Vec<PromptTemplate>,
    pub vague: Vec<String>,
    pub variants_per_vague: usize,
    pub generator_seeds: Vec<u64>,
    /// Caps the number of (prompt × seed) items, in generation order.
    #[serde(default)]
    pub limit: Option<usize>,
}

impl PoolSpec {
    /// Representative material/colour/shape/context template and vague
    /// seeds; yields [`DESK_POOL_SIZE`] images with one generator seed.
    pub fn representative() -> Self {
        let slot = |values: &[&str]| values.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut slots = BTreeMap::new();
        slots.insert("shape".into(), slot(&["spiral shell", "tall vase"]));
        slots.insert("material".into(), slot(&["woven copper wire", "translucent jade"]));
        slots.insert("color".into(), slot(&["deep teal"]));
        slots.insert("context".into(), slot(&["on a sunlit windowsill", "floating in a misty forest"]));
        Self {
            templated: vec![PromptTemplate {
                pattern: "a {color} {shape} made of {material}, {context}".into(),
                slots,
            }],
            vague: vec!["a place that never was".into(), "the memory of a sound".into()],
            variants_per_vague: 4,
            generator_seeds: vec![0],
            limit: Some(DESK_POOL_SIZE),
        }
    }

    pub fn validate(&self) -> Result<(), ForgeError> {
        if self.templated.is_empty() && self.vague.is_empty() {
            return Err(ForgeError::Precondition("pool spec has no templates and no vague prompts".into()));
        }
        if self.generator_seeds.is_empty() {
            return Err(ForgeError::Precondition("pool spec has no generator seeds".into()));
        }
        if !self.vague.is_empty() && self.variants_per_vague == 0 {
            return Err(ForgeError::Precondition("variants_per_vague must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum PromptSource {
    Templated { template: usize, pattern: String },
    Vague { vague: String, variant: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub id: String,
    pub prompt: String,
    pub source: PromptSource,
    pub seed: u64,
    pub image: Option<ImageRef>,
    pub error: Option<String>,
}

impl ManifestRecord for PoolRecord {
    const KIND: &'static str = "pool_image";
}

/// One row per (prompt × seed); failures are recorded, never fatal.
pub fn build_pool(spec: &PoolSpec, bridge: &Bridge, workers: usize) -> Result<Vec<PoolRecord>, ForgeError> {
    spec.validate()?;
    let mut prompts: Vec<(String, Option<PromptSource>, Option<String>)> = Vec::new();
    for (t, template) in spec.templated.iter().enumerate() {
        for p in template.expand() {
            let source = PromptSource::Templated {
                template: t,
                pattern: template.pattern.clone(),
            };
            prompts.push((p, Some(source), None));
        }
    }
    for vague in &spec.vague {
        match bridge.expand_prompt(vague, spec.variants_per_vague) {
            Ok(variants) => {
                for (variant, p) in variants.into_iter().enumerate() {
                    let source = PromptSource::Vague {
                        vague: vague.clone(),
                        variant,
                    };
                    prompts.push((p, Some(source), None));
                }
            }
            Err(e) => {
                warn!(%vague, error = %e, "prompt expansion failed");
                prompts.push((vague.clone(), None, Some(e.to_string())));
            }
        }
    }

    let mut items = Vec::new();
    for (prompt, source, error) in prompts {
        for &seed in &spec.generator_seeds {
            items.push((prompt.clone(), source.clone(), error.clone(), seed));
        }
    }
    if let Some(limit) = spec.limit {
        items.truncate(limit);
    }

    let records = run_bounded(workers, items.into_iter().enumerate().collect(), |(i, (prompt, source, error, seed))| {
        let id = format!("pool-{i:05}");
        let source = match source {
            Some(s) => s,
            None => {
                return PoolRecord {
                    id,
                    source: PromptSource::Vague {
                        vague: prompt.clone(),
                        variant: 0,
                    },
                    prompt,
                    seed,
                    image: None,
                    error,
                }
            }
        };
        match bridge.generate_from_text(&prompt, seed) {
            Ok(image) => PoolRecord {
                id,
                prompt,
                source,
                seed,
                image: Some(image),
                error: None,
            },
            Err(e) => {
                warn!(%prompt, seed, error = %e, "pool image generation failed");
                PoolRecord {
                    id,
                    prompt,
                    source,
                    seed,
                    image: None,
                    error: Some(e.to_string()),
                }
            }
        }
    })?;
    Ok(records)
}
