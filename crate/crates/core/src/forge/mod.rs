//! Dataset forge: source pool, decomposition triplets and conditioning
//! canvases, each persisted as a JSONL manifest.

pub mod canvas;
pub mod pool;
pub mod triplet;

use thiserror::Error;

use crate::bridge::BridgeError;
use crate::decompose::DecomposeError;
use crate::manifest::ManifestError;
use crate::store::StoreError;

pub use canvas::{compose_canvas, compose_canvas_image, CanvasLayout, RESIZE_FILTER};
pub use pool::{build_pool, PoolRecord, PoolSpec, PromptSource, PromptTemplate, DESK_POOL_SIZE, FULL_POOL_SIZE};
pub use triplet::{build_canvases, mint_batch, mint_triplet, CanvasRecord, TripletRecord, TripletStatus};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("worker pool: {0}")]
    Workers(String),
}

/// Maps `f` over `items` on at most `workers` threads, keeping input order.
pub(crate) fn run_bounded<I, O, F>(workers: usize, items: Vec<I>, f: F) -> Result<Vec<O>, ForgeError>
where
    I: Send,
    O: Send,
    F: Fn(I) -> O + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ForgeError::Workers(e.to_string()))?;
    Ok(pool.install(|| items.into_par_iter().map(f).collect()))
}
