mod common;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use common::*;
use seeds_core::bridge::{Backends, BridgeError, CombinationGenerator};
use seeds_core::composer::{
    ComposeError, Composer, FixedClock, JobKind, JobQueue, JobRequest, JobStatus, DEFAULT_SEEDS,
};
use seeds_core::embedding::Embedding;
use seeds_core::manifest::{read_manifest, ManifestWriter};
use seeds_core::store::ImageRef;

fn setup(dir: &std::path::Path) -> (Arc<Composer>, ImageRef, ImageRef) {
    let bridge = Arc::new(mock_bridge(dir));
    let a = put_photo(bridge.store(), 64, 64, 1);
    let b = put_photo(bridge.store(), 64, 64, 2);
    (Arc::new(Composer::new(bridge).with_clock(Arc::new(FixedClock(1_000)))), a, b)
}

fn hashes(results: &[ImageRef]) -> Vec<String> {
    results.iter().map(|r| r.content_hash.clone()).collect()
}

#[test]
fn combine_yields_one_distinct_image_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (composer, a, b) = setup(dir.path());
    let job = composer.combine(&a, &b, &DEFAULT_SEEDS).unwrap();
    assert_eq!(job.status, JobStatus::Done);
    assert_eq!(job.result_seeds, DEFAULT_SEEDS.to_vec());
    assert_eq!(hashes(&job.results).into_iter().collect::<HashSet<_>>().len(), 4);
    assert_eq!((job.created_at, job.finished_at), (1_000, Some(1_000)));
    let canvas = job.canvas.clone().unwrap();
    assert_eq!((canvas.width, canvas.height), (1024, 1024));

    let again = composer.combine(&a, &b, &DEFAULT_SEEDS).unwrap();
    assert_ne!(again.id, job.id);
    assert_eq!(hashes(&again.results), hashes(&job.results));
}

#[test]
fn input_order_matters() {
    let dir = tempfile::tempdir().unwrap();
    let (composer, a, b) = setup(dir.path());
    let ab = composer.combine(&a, &b, &[1]).unwrap();
    let ba = composer.combine(&b, &a, &[1]).unwrap();
    assert_ne!(ab.canvas, ba.canvas);
    assert_ne!(hashes(&ab.results), hashes(&ba.results));
}

#[test]
fn bad_seed_lists_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (composer, a, b) = setup(dir.path());
    assert!(matches!(composer.combine(&a, &b, &[]), Err(ComposeError::Precondition(_))));
    assert!(matches!(composer.combine(&a, &b, &[2, 5, 2]), Err(ComposeError::Precondition(_))));
}

#[test]
fn branching_on_a_result_is_a_combine_of_that_result() {
    let dir = tempfile::tempdir().unwrap();
    let (composer, a, b) = setup(dir.path());
    let first = composer.combine(&a, &b, &DEFAULT_SEEDS).unwrap();
    let c = put_photo(composer.bridge().store(), 64, 64, 3);
    let branch = composer.branch(&first.results[2], &c, &DEFAULT_SEEDS, Some(&first.id)).unwrap();
    assert_eq!(branch.kind, JobKind::Branch { parent: Some(first.id.clone()) });
    let plain = composer.combine(&first.results[2], &c, &DEFAULT_SEEDS).unwrap();
    assert_eq!(hashes(&branch.results), hashes(&plain.results));
    assert_eq!(branch.canvas, plain.canvas);
}

#[test]
fn interpolation_baseline_renders_the_mean_embedding() {
    let dir = tempfile::tempdir().unwrap();
    let (composer, a, b) = setup(dir.path());
    let bridge = composer.bridge();
    let ea = bridge.embed_image(&a).unwrap();
    let eb = bridge.embed_image(&b).unwrap();
    let mut mean = Vec::new();
    for i in 0..ea.dim() {
        mean.push((ea.as_slice()[i] + eb.as_slice()[i]) / 2.0);
    }
    let mean = Embedding::new(mean).unwrap();

    let job = composer.clip_interpolation_baseline(&a, &b, &[5, 6]).unwrap();
    assert_eq!(job.status, JobStatus::Done);
    assert!(job.canvas.is_none());
    for (img, seed) in job.results.iter().zip([5, 6]) {
        assert_eq!(img, &bridge.render_embedding(&mean, seed).unwrap());
    }
    let swapped = composer.clip_interpolation_baseline(&b, &a, &[5, 6]).unwrap();
    assert_eq!(hashes(&swapped.results), hashes(&job.results));
}

/// Mock generator that refuses one seed.
struct FailsOnSeed(u64);

impl CombinationGenerator for FailsOnSeed {
    fn generate(&self, canvas: &ImageRef, bytes: &[u8], prompt: &str, seed: u64) -> Result<Vec<u8>, BridgeError> {
        if seed == self.0 {
            return Err(BridgeError::Remote(format!("seed {seed} exploded")));
        }
        seeds_core::bridge::mock::MockGenerator.generate(canvas, bytes, prompt, seed)
    }
}

#[test]
fn partial_failure_keeps_the_successful_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut backends = Backends::mock(MOCK_DIM);
    backends.generator = Arc::new(FailsOnSeed(3));
    let bridge = Arc::new(mock_bridge(dir.path()).with_backends(backends));
    let a = put_photo(bridge.store(), 64, 64, 1);
    let b = put_photo(bridge.store(), 64, 64, 2);
    let manifest = dir.path().join("jobs.jsonl");
    let composer = Composer::new(bridge).with_manifest(ManifestWriter::open(&manifest).unwrap());

    let job = composer.combine(&a, &b, &DEFAULT_SEEDS).unwrap();
    assert_eq!(job.status, JobStatus::Failed);
    assert_eq!(job.result_seeds, vec![1, 2, 4]);
    assert!(job.error.as_deref().unwrap().contains("seed 3"));

    let rows = read_manifest::<seeds_core::composer::CombinationJob>(&manifest).unwrap().records;
    assert_eq!(rows, vec![job]);
}

#[test]
fn queue_runs_jobs_and_drains_on_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let (composer, a, b) = setup(dir.path());
    let queue = JobQueue::new(Arc::clone(&composer), 2);
    let ids: Vec<String> = (0..5)
        .map(|i| {
            let job = queue
                .submit(JobRequest {
                    kind: JobKind::Combine,
                    a: a.clone(),
                    b: b.clone(),
                    seeds: vec![i, i + 10],
                })
                .unwrap();
            assert_eq!(job.status, JobStatus::Queued);
            job.id
        })
        .collect();
    assert_eq!(ids.iter().collect::<HashSet<_>>().len(), 5);

    let first = queue.wait(&ids[0], Duration::from_secs(30)).unwrap();
    assert_eq!(first.status, JobStatus::Done);
    queue.shutdown();
    for id in &ids {
        assert_eq!(queue.get(id).unwrap().status, JobStatus::Done);
    }
    let late = queue.submit(JobRequest {
        kind: JobKind::Combine,
        a: a.clone(),
        b,
        seeds: vec![1],
    });
    assert!(matches!(late, Err(ComposeError::QueueClosed)));
    assert!(queue.get("job-999999").is_none());
}

#[test]
fn restored_jobs_never_move_backwards() {
    let dir = tempfile::tempdir().unwrap();
    let (composer, a, b) = setup(dir.path());
    let queue = JobQueue::new(Arc::clone(&composer), 1);
    let done = composer.combine(&a, &b, &[1]).unwrap();
    queue.restore(done.clone());
    let mut stale = done.clone();
    stale.status = JobStatus::Running;
    stale.results.clear();
    queue.restore(stale);
    assert_eq!(queue.get(&done.id).unwrap(), done);
}
