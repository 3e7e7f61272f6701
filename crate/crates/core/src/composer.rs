//! Combination jobs: seed-varied batches from two images, branching from
//! earlier results, and the embedding-interpolation baseline.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::bridge::{Bridge, BridgeError};
use crate::embedding::{Embedding, EmbeddingError};
use crate::forge::compose_canvas;
use crate::manifest::{ManifestError, ManifestRecord, ManifestWriter};
use crate::prompts::COMBINE_PROMPT;
use crate::store::ImageRef;

pub const DEFAULT_SEEDS: [u64; 4] = [1, 2, 3, 4];

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("job queue is shut down")]
    QueueClosed,
}

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_millis(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
    }
}

/// Always reports the same instant; for reproducible manifests.
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_millis(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    fn rank(self) -> u8 {
        match self {
            JobStatus::Queued => 0,
            JobStatus::Running => 1,
            JobStatus::Done | JobStatus::Failed => 2,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.rank() == 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobKind {
    Combine,
    /// `input_a` is an earlier result; `parent` names its job when known.
    Branch { parent: Option<String> },
    ClipInterpolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationJob {
    pub id: String,
    #[serde(flatten)]
    pub kind: JobKind,
    pub input_a: ImageRef,
    pub input_b: ImageRef,
    pub seeds: Vec<u64>,
    pub status: JobStatus,
    /// Successful outputs in seed order.
    pub results: Vec<ImageRef>,
    /// The seed behind each entry of `results`.
    pub result_seeds: Vec<u64>,
    pub canvas: Option<ImageRef>,
    pub error: Option<String>,
    pub created_at: u64,
    pub finished_at: Option<u64>,
}

impl ManifestRecord for CombinationJob {
    const KIND: &'static str = "combination_job";
}

pub fn validate_seeds(seeds: &[u64]) -> Result<(), ComposeError> {
    if seeds.is_empty() {
        return Err(ComposeError::Precondition("at least one seed is required".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(ComposeError::Precondition(format!("duplicate seed {dup}")));
    }
    Ok(())
}

/// Midpoint of two embeddings; symmetric in its arguments bit for bit.
pub fn interpolate_mean(a: &Embedding, b: &Embedding) -> Result<Embedding, EmbeddingError> {
    a.check_dim(b.dim())?;
    Embedding::new(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x + y) * 0.5).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRequest {
    pub kind: JobKind,
    pub a: ImageRef,
    pub b: ImageRef,
    pub seeds: Vec<u64>,
}

pub struct Composer {
    bridge: Arc<Bridge>,
    clock: Arc<dyn Clock>,
    next_id: AtomicU64,
    manifest: Option<ManifestWriter>,
}

impl Composer {
    pub fn new(bridge: Arc<Bridge>) -> Self {
        Self {
            bridge,
            clock: Arc::new(SystemClock),
            next_id: AtomicU64::new(1),
            manifest: None,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Finished jobs are appended here.
    pub fn with_manifest(mut self, writer: ManifestWriter) -> Self {
        self.manifest = Some(writer);
        self
    }

    /// Ids continue after `n`; used when earlier jobs were reloaded.
    pub fn skip_ids(&self, n: u64) {
        self.next_id.fetch_max(n + 1, Ordering::SeqCst);
    }

    pub fn bridge(&self) -> &Bridge {
        &self.bridge
    }

    /// Validates and assigns an id; the job is not run.
    pub fn prepare(&self, req: JobRequest) -> Result<CombinationJob, ComposeError> {
        validate_seeds(&req.seeds)?;
        let n = self.next_id.fetch_add(1, Ordering::SeqCst);
        Ok(CombinationJob {
            id: format!("job-{n:06}"),
            kind: req.kind,
            input_a: req.a,
            input_b: req.b,
            seeds: req.seeds,
            status: JobStatus::Queued,
            results: Vec::new(),
            result_seeds: Vec::new(),
            canvas: None,
            error: None,
            created_at: self.clock.now_millis(),
            finished_at: None,
        })
    }

    /// Runs a prepared job to a terminal state and records it.
    pub fn execute(&self, mut job: CombinationJob) -> Result<CombinationJob, ComposeError> {
        job.status = JobStatus::Running;
        let outcome = match job.kind {
            JobKind::ClipInterpolation => self.run_interpolation(&mut job),
            _ => self.run_combination(&mut job),
        };
        job.status = match &outcome {
            Ok(()) if job.results.len() == job.seeds.len() => JobStatus::Done,
            _ => JobStatus::Failed,
        };
        if let Err(e) = outcome {
            warn!(job = %job.id, error = %e, kept = job.results.len(), "job failed");
            job.error = Some(e.to_string());
        }
        job.finished_at = Some(self.clock.now_millis());
        if let Some(m) = &self.manifest {
            m.append(&job)?;
        }
        info!(job = %job.id, status = ?job.status, "job finished");
        Ok(job)
    }

    fn run_combination(&self, job: &mut CombinationJob) -> Result<(), BridgeError> {
        let canvas = compose_canvas(self.bridge.store(), &job.input_a, &job.input_b).map_err(|e| match e {
            crate::forge::ForgeError::Bridge(b) => b,
            other => BridgeError::CorruptImage(other.to_string()),
        })?;
        job.canvas = Some(canvas.clone());
        let mut first_error = None;
        for &seed in &job.seeds {
            match self.bridge.generate_combination(&canvas, COMBINE_PROMPT, seed) {
                Ok(img) => {
                    job.results.push(img);
                    job.result_seeds.push(seed);
                }
                Err(e) => {
                    warn!(job = %job.id, seed, error = %e, "generation failed");
                    first_error.get_or_insert(e);
                }
            }
        }
        first_error.map_or(Ok(()), Err)
    }

    fn run_interpolation(&self, job: &mut CombinationJob) -> Result<(), BridgeError> {
        let ea = self.bridge.embed_image(&job.input_a)?;
        let eb = self.bridge.embed_image(&job.input_b)?;
        let mean = interpolate_mean(&ea, &eb)?;
        for &seed in &job.seeds {
            job.results.push(self.bridge.render_embedding(&mean, seed)?);
            job.result_seeds.push(seed);
        }
        Ok(())
    }

    pub fn run(&self, req: JobRequest) -> Result<CombinationJob, ComposeError> {
        self.execute(self.prepare(req)?)
    }

    pub fn combine(&self, a: &ImageRef, b: &ImageRef, seeds: &[u64]) -> Result<CombinationJob, ComposeError> {
        self.run(JobRequest {
            kind: JobKind::Combine,
            a: a.clone(),
            b: b.clone(),
            seeds: seeds.to_vec(),
        })
    }

    pub fn branch(
        &self,
        result: &ImageRef,
        other: &ImageRef,
        seeds: &[u64],
        parent: Option<&str>,
    ) -> Result<CombinationJob, ComposeError> {
        self.run(JobRequest {
            kind: JobKind::Branch {
                parent: parent.map(str::to_string),
            },
            a: result.clone(),
            b: other.clone(),
            seeds: seeds.to_vec(),
        })
    }

    pub fn clip_interpolation_baseline(
        &self,
        a: &ImageRef,
        b: &ImageRef,
        seeds: &[u64],
    ) -> Result<CombinationJob, ComposeError> {
        self.run(JobRequest {
            kind: JobKind::ClipInterpolation,
            a: a.clone(),
            b: b.clone(),
            seeds: seeds.to_vec(),
        })
    }
}

struct QueueState {
    jobs: HashMap<String, CombinationJob>,
    pending: VecDeque<CombinationJob>,
    open: bool,
}

struct Shared {
    state: Mutex<QueueState>,
    changed: Condvar,
}

impl Shared {
    fn lock(&self) -> std::sync::MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Stores `job` unless that would move its status backwards.
    fn advance(&self, job: CombinationJob) {
        let mut state = self.lock();
        let keep = match state.jobs.get(&job.id) {
            Some(old) => !old.status.is_terminal() && job.status.rank() >= old.status.rank(),
            None => true,
        };
        if keep {
            state.jobs.insert(job.id.clone(), job);
        }
        drop(state);
        self.changed.notify_all();
    }
}

/// Bounded worker pool running jobs in submission order.
pub struct JobQueue {
    composer: Arc<Composer>,
    shared: Arc<Shared>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl JobQueue {
    pub fn new(composer: Arc<Composer>, concurrency: usize) -> Self {
        let shared = Arc::new(Shared {
            state: Mutex::new(QueueState {
                jobs: HashMap::new(),
                pending: VecDeque::new(),
                open: true,
            }),
            changed: Condvar::new(),
        });
        let workers = (0..concurrency.max(1))
            .map(|_| {
                let shared = Arc::clone(&shared);
                let composer = Arc::clone(&composer);
                std::thread::spawn(move || worker_loop(&shared, &composer))
            })
            .collect();
        Self {
            composer,
            shared,
            workers: Mutex::new(workers),
        }
    }

    pub fn composer(&self) -> &Composer {
        &self.composer
    }

    /// Makes an already finished job visible, e.g. after a restart.
    pub fn restore(&self, job: CombinationJob) {
        self.shared.advance(job);
    }

    pub fn submit(&self, req: JobRequest) -> Result<CombinationJob, ComposeError> {
        let job = self.composer.prepare(req)?;
        let mut state = self.shared.lock();
        if !state.open {
            return Err(ComposeError::QueueClosed);
        }
        state.jobs.insert(job.id.clone(), job.clone());
        state.pending.push_back(job.clone());
        drop(state);
        self.shared.changed.notify_all();
        Ok(job)
    }

    pub fn get(&self, id: &str) -> Option<CombinationJob> {
        self.shared.lock().jobs.get(id).cloned()
    }

    /// Blocks until the job is terminal or `timeout` passes.
    pub fn wait(&self, id: &str, timeout: Duration) -> Option<CombinationJob> {
        let deadline = Instant::now() + timeout;
        let mut state = self.shared.lock();
        loop {
            let job = state.jobs.get(id)?;
            let now = Instant::now();
            if job.status.is_terminal() || now >= deadline {
                return Some(job.clone());
            }
            state = self
                .shared
                .changed
                .wait_timeout(state, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Stops accepting jobs, finishes the queued ones, joins the workers.
    pub fn shutdown(&self) {
        self.shared.lock().open = false;
        self.shared.changed.notify_all();
        let workers = std::mem::take(&mut *self.workers.lock().unwrap_or_else(|p| p.into_inner()));
        for w in workers {
            let _ = w.join();
        }
    }
}

impl Drop for JobQueue {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn worker_loop(shared: &Shared, composer: &Composer) {
    loop {
        let job = {
            let mut state = shared.lock();
            loop {
                if let Some(job) = state.pending.pop_front() {
                    break job;
                }
                if !state.open {
                    return;
                }
                state = shared.changed.wait(state).unwrap_or_else(|p| p.into_inner());
            }
        };
        shared.advance(CombinationJob {
            status: JobStatus::Running,
            ..job.clone()
        });
        let done = match composer.execute(job.clone()) {
            Ok(done) => done,
            Err(e) => CombinationJob {
                status: JobStatus::Failed,
                error: Some(e.to_string()),
                ..job
            },
        };
        shared.advance(done);
    }
}
