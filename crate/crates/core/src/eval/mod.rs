//! Evaluation: description complexity, trivial patterns, decomposition
//! quality and user-study aggregation.

pub mod benchmark;
pub mod decomp;
pub mod study;
pub mod text;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::BridgeError;
use crate::manifest::ManifestError;

pub use benchmark::{
    aggregate_descriptions, describe_items, run_combination_benchmark, BenchmarkItem, BenchmarkOutcome, BenchmarkReport,
    ClipInterpolationMethod, CombinationMethod, DescriptionRecord, Exclusion, MethodStats, OursMethod, PairRecord,
};
pub use decomp::{aggregate_scores, score_decompositions, DecompOutcome, DecompReport, DecompScore};
pub use study::{aggregate_user_study, StudyChoice, StudyResponse};
pub use text::{classify_pattern, count_words, Pattern};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no description length for study item `{0}`")]
    MissingLength(String),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("worker pool: {0}")]
    Workers(String),
}

/// `2ab / (a + b)`; zero when either similarity is zero. Negative inputs
/// are treated as zero.
pub fn harmonic_mean_score(sim_a: f64, sim_b: f64) -> f64 {
    if sim_a <= 0.0 || sim_b <= 0.0 {
        return 0.0;
    }
    2.0 * sim_a * sim_b / (sim_a + sim_b)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }

    pub fn display(&self, decimals: usize) -> String {
        format!("{:.*} ± {:.*}", decimals, self.mean, decimals, self.std)
    }
}

/// Left-aligned first column, right-aligned rest, single space padding.
pub(crate) fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = widths[i] - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
