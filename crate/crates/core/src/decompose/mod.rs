//! Splits one embedding into two visual aspects.
//!
//! The strongest SAE features of the source are decoded as pure directions,
//! grouped into two clusters, trimmed near the cluster boundary, and the
//! difference of the surviving cluster means becomes an editing direction.
//! Moving the source by `∓ edit_step · direction` gives the two aspects.

pub mod kmeans;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedding, EmbeddingError};
use crate::sae::{SaeError, SaeModel};

pub use kmeans::{kmeans2, Cluster, KMeans2};

/// Edit magnitudes sampled per triplet when minting datasets.
pub const EDIT_STEP_PRESETS: [f64; 2] = [0.5, 1.0];

const ZERO_DIRECTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DecomposeError {
    #[error(transparent)]
    Sae(#[from] SaeError),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("cluster centroids coincide; no editing direction")]
    ZeroDirection,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl DecomposeError {
    /// The source cannot be decomposed (as opposed to a caller error).
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            DecomposeError::Sae(SaeError::NoActiveFeatures)
                | DecomposeError::DegenerateInput(_)
                | DecomposeError::ZeroDirection
        )
    }
}

impl From<EmbeddingError> for DecomposeError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::DimMismatch { expected, got } => DecomposeError::DimMismatch { expected, got },
            other => DecomposeError::InvalidParams(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeParams {
    pub top_k: usize,
    pub edit_step: f64,
    pub keep_fraction: f64,
    pub renormalize: bool,
    pub rng_seed: u64,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self {
            top_k: 32,
            edit_step: EDIT_STEP_PRESETS[0],
            keep_fraction: 0.7,
            renormalize: true,
            rng_seed: 0,
        }
    }
}

impl DecomposeParams {
    pub fn validate(&self) -> Result<(), DecomposeError> {
        if self.top_k < 2 {
            return Err(DecomposeError::InvalidParams(format!("top_k must be ≥ 2, got {}", self.top_k)));
        }
        if !(self.edit_step > 0.0 && self.edit_step.is_finite()) {
            return Err(DecomposeError::InvalidParams(format!(
                "edit_step must be positive, got {}",
                self.edit_step
            )));
        }
        validate_keep_fraction(self.keep_fraction)
    }
}

fn validate_keep_fraction(keep_fraction: f64) -> Result<(), DecomposeError> {
    if keep_fraction > 0.0 && keep_fraction <= 1.0 {
        Ok(())
    } else {
        Err(DecomposeError::InvalidParams(format!(
            "keep_fraction must be in (0, 1], got {keep_fraction}"
        )))
    }
}

/// Two filtered clusters of atom ids and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSplit {
    pub indices_a: Vec<usize>,
    pub indices_b: Vec<usize>,
    pub centroid_a: Embedding,
    pub centroid_b: Embedding,
    pub discarded: Vec<usize>,
}

impl ClusterSplit {
    pub fn swapped(&self) -> ClusterSplit {
        ClusterSplit {
            indices_a: self.indices_b.clone(),
            indices_b: self.indices_a.clone(),
            centroid_a: self.centroid_b.clone(),
            centroid_b: self.centroid_a.clone(),
            discarded: self.discarded.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub source: Embedding,
    pub split: ClusterSplit,
    pub direction: Embedding,
    pub edit_step: f64,
    pub edited_a: Embedding,
    pub edited_b: Embedding,
    pub params: DecomposeParams,
}

/// Compact, replay-comparable description of a decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub indices_a: Vec<usize>,
    pub indices_b: Vec<usize>,
    pub size_a: usize,
    pub size_b: usize,
    pub discarded: usize,
    pub direction_norm: f64,
}

impl Decomposition {
    pub fn summary(&self) -> DecompositionSummary {
        DecompositionSummary {
            indices_a: self.split.indices_a.clone(),
            indices_b: self.split.indices_b.clone(),
            size_a: self.split.indices_a.len(),
            size_b: self.split.indices_b.len(),
            discarded: self.split.discarded.len(),
            direction_norm: self.direction.norm(),
        }
    }
}

/// Keeps, per cluster, the `ceil(keep_fraction · size)` members with the
/// largest relative margin `(d_other − d_own) / (d_other + d_own)`, at least
/// one each. Centroids are recomputed over the survivors.
///
/// `ids[i]` labels `points[i]` in the returned split.
pub fn filter_boundary(
    points: &[Embedding],
    ids: &[usize],
    clustering: &KMeans2,
    keep_fraction: f64,
) -> Result<ClusterSplit, DecomposeError> {
    validate_keep_fraction(keep_fraction)?;
    if points.len() != ids.len() || points.len() != clustering.assignment.len() {
        return Err(DecomposeError::InvalidParams(
            "points, ids and assignment must have equal length".into(),
        ));
    }

    let mut kept: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut discarded = Vec::new();
    for (slot, cluster) in [Cluster::A, Cluster::B].into_iter().enumerate() {
        let mut members: Vec<(usize, f64)> = clustering
            .assignment
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == cluster)
            .map(|(i, _)| (i, margin(&points[i], clustering.centroid(cluster), clustering.centroid(cluster.other()))))
            .collect();
        if members.is_empty() {
            return Err(DecomposeError::DegenerateInput(format!("cluster {cluster:?} is empty")));
        }
        members.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let keep = keep_count(keep_fraction, members.len());
        for (rank, (i, _)) in members.into_iter().enumerate() {
            if rank < keep {
                kept[slot].push(i);
            } else {
                discarded.push(ids[i]);
            }
        }
    }

    let centroid = |members: &[usize]| Embedding::mean(members.iter().map(|&i| &points[i]));
    let centroid_a = centroid(&kept[0])?;
    let centroid_b = centroid(&kept[1])?;
    let to_ids = |members: &[usize]| {
        let mut out: Vec<usize> = members.iter().map(|&i| ids[i]).collect();
        out.sort_unstable();
        out
    };
    discarded.sort_unstable();
    Ok(ClusterSplit {
        indices_a: to_ids(&kept[0]),
        indices_b: to_ids(&kept[1]),
        centroid_a,
        centroid_b,
        discarded,
    })
}

fn margin(p: &Embedding, own: &Embedding, other: &Embedding) -> f64 {
    let d_own = p.distance(own);
    let d_other = p.distance(other);
    let total = d_own + d_other;
    if total == 0.0 {
        0.0
    } else {
        (d_other - d_own) / total
    }
}

pub(crate) fn keep_count(keep_fraction: f64, size: usize) -> usize {
    // The epsilon absorbs products such as 0.7 · 10 = 7.000000000000001.
    let raw = (keep_fraction * size as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(size)
}

/// `centroid_b − centroid_a`.
pub fn editing_direction(split: &ClusterSplit) -> Result<Embedding, DecomposeError> {
    let direction = split.centroid_b.sub(&split.centroid_a)?;
    if direction.norm() <= ZERO_DIRECTION_TOLERANCE {
        return Err(DecomposeError::ZeroDirection);
    }
    Ok(direction)
}

/// Returns `(source − step·direction, source + step·direction)`, each
/// rescaled to the source norm when `renormalize` is set.
pub fn apply_edit(
    source: &Embedding,
    direction: &Embedding,
    edit_step: f64,
    renormalize: bool,
) -> Result<(Embedding, Embedding), DecomposeError> {
    let toward_a = source.add_scaled(direction, -edit_step)?;
    let toward_b = source.add_scaled(direction, edit_step)?;
    if !renormalize {
        return Ok((toward_a, toward_b));
    }
    let target = source.norm();
    let rescale = |e: Embedding| {
        let norm = e.norm();
        if norm > 0.0 {
            e.scaled(target / norm)
        } else {
            e
        }
    };
    Ok((rescale(toward_a), rescale(toward_b)))
}

/// Full pipeline: encode → top-k atoms → 2-means → boundary filter →
/// direction → edit. Cluster A is the one holding the strongest atom.
pub fn decompose(
    model: &SaeModel,
    source: &Embedding,
    params: &DecomposeParams,
) -> Result<Decomposition, DecomposeError> {
    params.validate()?;
    source.check_dim(model.n())?;
    let h = model.encode(source)?;
    let atoms = model.top_k_atoms(&h, params.top_k.min(model.m()))?;
    if atoms.len() < 2 {
        return Err(DecomposeError::DegenerateInput(format!(
            "only {} active feature(s)",
            atoms.len()
        )));
    }
    let ids: Vec<usize> = atoms.iter().map(|a| a.index).collect();
    let points: Vec<Embedding> = atoms.into_iter().map(|a| a.direction).collect();

    let mut clustering = kmeans2(&points, params.rng_seed)?;
    if clustering.assignment[0] != Cluster::A {
        clustering = clustering.relabeled();
    }
    let split = filter_boundary(&points, &ids, &clustering, params.keep_fraction)?;
    let direction = editing_direction(&split)?;
    let (edited_a, edited_b) = apply_edit(source, &direction, params.edit_step, params.renormalize)?;
    Ok(Decomposition {
        source: source.clone(),
        split,
        direction,
        edit_step: params.edit_step,
        edited_a,
        edited_b,
        params: params.clone(),
    })
}
