//! Combination benchmark: generate outputs per (pair × method × seed), ask
//! the judge how to rebuild each output from its inputs, aggregate.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::text::{classify_pattern, count_words, Pattern};
use super::{render_table, EvalError, MeanStd};
use crate::bridge::{Bridge, BridgeError, JudgeTemplate};
use crate::composer::{interpolate_mean, CombinationJob, JobKind};
use crate::forge::compose_canvas;
use crate::manifest::ManifestRecord;
use crate::prompts::COMBINE_PROMPT;
use crate::store::ImageRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub a: ImageRef,
    pub b: ImageRef,
}

impl ManifestRecord for PairRecord {
    const KIND: &'static str = "pair";
}

/// One output to be judged, with the images the judge sees before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub pair_id: String,
    pub method: String,
    pub seed: u64,
    pub template: JudgeTemplate,
    pub inputs: Vec<ImageRef>,
    pub output: ImageRef,
}

impl BenchmarkItem {
    pub fn item_id(&self) -> String {
        format!("{}/{}/{}", self.pair_id, self.method, self.seed)
    }

    /// Items for every result of a combination job: canvas-conditioned jobs
    /// are judged with the grid template, the rest with the two-input one.
    pub fn from_job(job: &CombinationJob, pair_id: &str, method: &str) -> Vec<BenchmarkItem> {
        let (template, inputs) = match (&job.kind, &job.canvas) {
            (JobKind::ClipInterpolation, _) | (_, None) => {
                (JudgeTemplate::TwoInput, vec![job.input_a.clone(), job.input_b.clone()])
            }
            (_, Some(canvas)) => (JudgeTemplate::GridInput, vec![canvas.clone()]),
        };
        job.results
            .iter()
            .zip(&job.result_seeds)
            .map(|(output, &seed)| BenchmarkItem {
                pair_id: pair_id.to_string(),
                method: method.to_string(),
                seed,
                template,
                inputs: inputs.clone(),
                output: output.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub pair_id: String,
    pub method: String,
    pub seed: u64,
    pub template: JudgeTemplate,
    pub text: String,
    pub word_count: usize,
    pub pattern: Pattern,
}

impl ManifestRecord for DescriptionRecord {
    const KIND: &'static str = "description";
}

impl DescriptionRecord {
    pub fn new(pair_id: &str, method: &str, seed: u64, template: JudgeTemplate, text: String) -> Self {
        Self {
            pair_id: pair_id.to_string(),
            method: method.to_string(),
            seed,
            template,
            word_count: count_words(&text),
            pattern: classify_pattern(&text),
            text,
        }
    }

    pub fn item_id(&self) -> String {
        format!("{}/{}/{}", self.pair_id, self.method, self.seed)
    }
}

/// An item left out of the statistics, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub pair_id: String,
    pub method: String,
    pub seed: u64,
    pub reason: String,
}

impl ManifestRecord for Exclusion {
    const KIND: &'static str = "exclusion";
}

pub trait CombinationMethod: Send + Sync {
    fn name(&self) -> &str;
    /// One item per seed that succeeded; failures come back as exclusions.
    fn generate(&self, pair: &PairRecord, seeds: &[u64], bridge: &Bridge) -> Vec<Result<BenchmarkItem, Exclusion>>;
}

fn exclusion(pair: &PairRecord, method: &str, seed: u64, reason: impl ToString) -> Exclusion {
    Exclusion {
        pair_id: pair.pair_id.clone(),
        method: method.to_string(),
        seed,
        reason: reason.to_string(),
    }
}

/// The fine-tuned combiner on the conditioning canvas.
pub struct OursMethod;

impl CombinationMethod for OursMethod {
    fn name(&self) -> &str {
        "ours"
    }

    fn generate(&self, pair: &PairRecord, seeds: &[u64], bridge: &Bridge) -> Vec<Result<BenchmarkItem, Exclusion>> {
        let canvas = match compose_canvas(bridge.store(), &pair.a, &pair.b) {
            Ok(c) => c,
            Err(e) => return seeds.iter().map(|&s| Err(exclusion(pair, self.name(), s, &e))).collect(),
        };
        seeds
            .iter()
            .map(|&seed| {
                let output = bridge
                    .generate_combination(&canvas, COMBINE_PROMPT, seed)
                    .map_err(|e| exclusion(pair, self.name(), seed, e))?;
                Ok(BenchmarkItem {
                    pair_id: pair.pair_id.clone(),
                    method: self.name().to_string(),
                    seed,
                    template: JudgeTemplate::GridInput,
                    inputs: vec![canvas.clone()],
                    output,
                })
            })
            .collect()
    }
}

/// Decodes the midpoint of the two input embeddings.
pub struct ClipInterpolationMethod;

impl CombinationMethod for ClipInterpolationMethod {
    fn name(&self) -> &str {
        "clip_interpolation"
    }

    fn generate(&self, pair: &PairRecord, seeds: &[u64], bridge: &Bridge) -> Vec<Result<BenchmarkItem, Exclusion>> {
        let mean = bridge.embed_image(&pair.a).and_then(|ea| {
            let eb = bridge.embed_image(&pair.b)?;
            Ok::<_, BridgeError>(interpolate_mean(&ea, &eb)?)
        });
        let mean = match mean {
            Ok(m) => m,
            Err(e) => return seeds.iter().map(|&s| Err(exclusion(pair, self.name(), s, &e))).collect(),
        };
        seeds
            .iter()
            .map(|&seed| {
                let output = bridge
                    .render_embedding(&mean, seed)
                    .map_err(|e| exclusion(pair, self.name(), seed, e))?;
                Ok(BenchmarkItem {
                    pair_id: pair.pair_id.clone(),
                    method: self.name().to_string(),
                    seed,
                    template: JudgeTemplate::TwoInput,
                    inputs: vec![pair.a.clone(), pair.b.clone()],
                    output,
                })
            })
            .collect()
    }
}

/// Judges every item on up to `workers` threads; order follows `items`.
pub fn describe_items(
    items: &[BenchmarkItem],
    bridge: &Bridge,
    workers: usize,
) -> Result<(Vec<DescriptionRecord>, Vec<Exclusion>), EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EvalError::Workers(e.to_string()))?;
    let judged: Vec<Result<DescriptionRecord, Exclusion>> = pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                bridge
                    .describe_reconstruction(&item.inputs, &item.output, item.template)
                    .map(|text| DescriptionRecord::new(&item.pair_id, &item.method, item.seed, item.template, text))
                    .map_err(|e| {
                        warn!(item = %item.item_id(), error = %e, "judge failed; excluding item");
                        Exclusion {
                            pair_id: item.pair_id.clone(),
                            method: item.method.clone(),
                            seed: item.seed,
                            reason: e.to_string(),
                        }
                    })
            })
            .collect()
    });
    let mut descriptions = Vec::new();
    let mut exclusions = Vec::new();
    for r in judged {
        match r {
            Ok(d) => descriptions.push(d),
            Err(x) => exclusions.push(x),
        }
    }
    Ok((descriptions, exclusions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    pub n: usize,
    pub excluded: usize,
    pub word_count: Option<MeanStd>,
    pub copy_pct: f64,
    pub insertion_pct: f64,
    pub split_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Sorted by method name.
    pub rows: Vec<MethodStats>,
}

impl BenchmarkReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.n.to_string(),
                    r.excluded.to_string(),
                    r.word_count.map_or("-".into(), |w| w.display(1)),
                    format!("{:.1}", r.copy_pct),
                    format!("{:.1}", r.insertion_pct),
                    format!("{:.1}", r.split_pct),
                ]
            })
            .collect();
        render_table(&["method", "n", "excluded", "word count", "copy %", "insertion %", "split %"], &rows)
    }
}

/// Per-method statistics; independent of record order.
pub fn aggregate_descriptions(descriptions: &[DescriptionRecord], exclusions: &[Exclusion]) -> BenchmarkReport {
    let mut by_method: BTreeMap<&str, (Vec<&DescriptionRecord>, usize)> = BTreeMap::new();
    for d in descriptions {
        by_method.entry(&d.method).or_default().0.push(d);
    }
    for x in exclusions {
        by_method.entry(&x.method).or_default().1 += 1;
    }
    let rows = by_method
        .into_iter()
        .map(|(method, (records, excluded))| {
            let mut counts: Vec<f64> = records.iter().map(|d| d.word_count as f64).collect();
            counts.sort_by(f64::total_cmp);
            let pct = |p: Pattern| {
                if records.is_empty() {
                    0.0
                } else {
                    100.0 * records.iter().filter(|d| d.pattern == p).count() as f64 / records.len() as f64
                }
            };
            MethodStats {
                method: method.to_string(),
                n: records.len(),
                excluded,
                word_count: MeanStd::of(&counts),
                copy_pct: pct(Pattern::Copy),
                insertion_pct: pct(Pattern::Insertion),
                split_pct: pct(Pattern::Split),
            }
        })
        .collect();
    BenchmarkReport { rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub items: Vec<BenchmarkItem>,
    pub descriptions: Vec<DescriptionRecord>,
    pub exclusions: Vec<Exclusion>,
    pub report: BenchmarkReport,
}

pub fn run_combination_benchmark(
    pairs: &[PairRecord],
    methods: &[&dyn CombinationMethod],
    seeds: &[u64],
    bridge: &Bridge,
    workers: usize,
) -> Result<BenchmarkOutcome, EvalError> {
    let mut items = Vec::new();
    let mut exclusions = Vec::new();
    for pair in pairs {
        for method in methods {
            for r in method.generate(pair, seeds, bridge) {
                match r {
                    Ok(item) => items.push(item),
                    Err(x) => exclusions.push(x),
                }
            }
        }
    }
    let (descriptions, judge_exclusions) = describe_items(&items, bridge, workers)?;
    exclusions.extend(judge_exclusions);
    let report = aggregate_descriptions(&descriptions, &exclusions);
    Ok(BenchmarkOutcome {
        items,
        descriptions,
        exclusions,
        report,
    })
}
