//! Triplet minting: decompose a source image and render both aspects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::canvas::{compose_canvas, RESIZE_FILTER};
use super::{run_bounded, ForgeError};
use crate::bridge::mock::splitmix64;
use crate::bridge::Bridge;
use crate::decompose::{decompose, DecomposeParams, DecompositionSummary, EDIT_STEP_PRESETS};
use crate::manifest::ManifestRecord;
use crate::sae::SaeModel;
use crate::store::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletStatus {
    Ok,
    SkippedDegenerate,
    /// A bridge call failed; `error` holds the message.
    Failed,
}

/// `comb` is the source image; `a` and `b` are its two rendered aspects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    pub comb: ImageRef,
    pub a: Option<ImageRef>,
    pub b: Option<ImageRef>,
    pub params: DecomposeParams,
    pub decomposition_summary: Option<DecompositionSummary>,
    pub render_seeds: (u64, u64),
    pub status: TripletStatus,
    pub error: Option<String>,
}

impl ManifestRecord for TripletRecord {
    const KIND: &'static str = "triplet";
}

impl TripletRecord {
    pub fn is_ok(&self) -> bool {
        self.status == TripletStatus::Ok
    }
}

/// Decoder seeds for the two aspects, fixed by the source and the params.
pub fn render_seeds(img: &ImageRef, params: &DecomposeParams) -> (u64, u64) {
    let h = u64::from_str_radix(&img.content_hash[..16.min(img.content_hash.len())], 16).unwrap_or(0);
    let base = splitmix64(h ^ params.rng_seed);
    (base, splitmix64(base))
}

fn triplet_id(img: &ImageRef) -> String {
    format!("triplet-{}", &img.content_hash[..16.min(img.content_hash.len())])
}

pub fn mint_triplet(img: &ImageRef, model: &SaeModel, params: &DecomposeParams, bridge: &Bridge) -> TripletRecord {
    let seeds = render_seeds(img, params);
    let mut record = TripletRecord {
        id: triplet_id(img),
        comb: img.clone(),
        a: None,
        b: None,
        params: params.clone(),
        decomposition_summary: None,
        render_seeds: seeds,
        status: TripletStatus::Failed,
        error: None,
    };
    let embedding = match bridge.embed_image(img) {
        Ok(e) => e,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    let decomposition = match decompose(model, &embedding, params) {
        Ok(d) => d,
        Err(e) if e.is_degenerate() => {
            info!(image = %img.id, reason = %e, "source is not decomposable; skipping");
            record.status = TripletStatus::SkippedDegenerate;
            record.error = Some(e.to_string());
            return record;
        }
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.decomposition_summary = Some(decomposition.summary());
    let rendered = bridge
        .render_embedding(&decomposition.edited_a, seeds.0)
        .and_then(|a| Ok((a, bridge.render_embedding(&decomposition.edited_b, seeds.1)?)));
    match rendered {
        Ok((a, b)) if a.content_hash == b.content_hash => {
            record.status = TripletStatus::SkippedDegenerate;
            record.error = Some("both aspects rendered to identical images".into());
        }
        Ok((a, b)) => {
            record.a = Some(a);
            record.b = Some(b);
            record.status = TripletStatus::Ok;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Per-source params: `base` with the edit step drawn from the presets by a
/// generator seeded from `base.rng_seed` and the source hash.
pub fn params_for(img: &ImageRef, base: &DecomposeParams) -> DecomposeParams {
    let h = u64::from_str_radix(&img.content_hash[..16.min(img.content_hash.len())], 16).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(base.rng_seed ^ splitmix64(h));
    DecomposeParams {
        edit_step: EDIT_STEP_PRESETS[rng.random_range(0..EDIT_STEP_PRESETS.len())],
        ..base.clone()
    }
}

/// One record per input, in input order, whatever the outcome.
pub fn mint_batch(
    images: &[ImageRef],
    model: &SaeModel,
    base: &DecomposeParams,
    bridge: &Bridge,
    workers: usize,
) -> Result<Vec<TripletRecord>, ForgeError> {
    base.validate()?;
    let records = run_bounded(workers, images.to_vec(), |img| {
        let record = mint_triplet(&img, model, &params_for(&img, base), bridge);
        if record.status == TripletStatus::Failed {
            warn!(image = %img.id, error = ?record.error, "triplet failed");
        }
        record
    })?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanvasRecord {
    pub triplet_id: String,
    pub canvas: ImageRef,
    pub target: ImageRef,
    pub resize_filter: String,
}

impl ManifestRecord for CanvasRecord {
    const KIND: &'static str = "canvas";
}

/// Conditioning canvases for every ok triplet, in triplet order.
pub fn build_canvases(triplets: &[TripletRecord], bridge: &Bridge) -> Result<Vec<CanvasRecord>, ForgeError> {
    let mut out = Vec::new();
    for t in triplets.iter().filter(|t| t.is_ok()) {
        let (a, b) = match (&t.a, &t.b) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(ForgeError::Precondition(format!("ok triplet {} lacks images", t.id))),
        };
        out.push(CanvasRecord {
            triplet_id: t.id.clone(),
            canvas: compose_canvas(bridge.store(), a, b)?,
            target: t.comb.clone(),
            resize_filter: RESIZE_FILTER.to_string(),
        });
    }
    Ok(out)
}
