//! Gallery of pairable images, persisted as an append-only manifest.

use std::path::Path;
use std::sync::RwLock;

use seeds_core::composer::{CombinationJob, JobStatus};
use seeds_core::manifest::{read_manifest, ManifestError, ManifestRecord, ManifestWriter};
use seeds_core::store::ImageRef;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seeded,
    Promoted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub id: String,
    pub image: ImageRef,
    pub origin: Origin,
    pub parent_job: Option<String>,
    pub result_index: Option<usize>,
}

impl ManifestRecord for GalleryEntry {
    const KIND: &'static str = "gallery_entry";
}

#[derive(Debug, Error)]
pub enum GalleryError {
    #[error("job {0} is not done")]
    JobNotDone(String),
    #[error("result index {index} out of range for job {job} with {len} results")]
    IndexOutOfRange { job: String, index: usize, len: usize },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

pub struct Gallery {
    entries: RwLock<Vec<GalleryEntry>>,
    writer: ManifestWriter,
}

impl Gallery {
    /// Replays the manifest at `path` and appends new entries to it.
    pub fn open(path: &Path) -> Result<Self, GalleryError> {
        let read = read_manifest::<GalleryEntry>(path)?;
        Ok(Self {
            entries: RwLock::new(read.records),
            writer: ManifestWriter::open(path)?,
        })
    }

    pub fn list(&self) -> Vec<GalleryEntry> {
        self.entries.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn get(&self, id: &str) -> Option<GalleryEntry> {
        self.entries
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .iter()
            .find(|e| e.id == id)
            .cloned()
    }

    fn push(&self, make: impl FnOnce(String) -> GalleryEntry) -> Result<GalleryEntry, GalleryError> {
        let mut entries = self.entries.write().unwrap_or_else(|p| p.into_inner());
        let entry = make(format!("g{:05}", entries.len() + 1));
        self.writer.append(&entry)?;
        entries.push(entry.clone());
        Ok(entry)
    }

    /// Adds a starting image unless one with the same content is already seeded.
    pub fn seed(&self, image: ImageRef) -> Result<GalleryEntry, GalleryError> {
        if let Some(existing) = self
            .list()
            .into_iter()
            .find(|e| e.origin == Origin::Seeded && e.image.content_hash == image.content_hash)
        {
            return Ok(existing);
        }
        self.push(|id| GalleryEntry {
            id,
            image,
            origin: Origin::Seeded,
            parent_job: None,
            result_index: None,
        })
    }

    /// Every call makes a new entry, even for the same result.
    pub fn promote(&self, job: &CombinationJob, index: usize) -> Result<GalleryEntry, GalleryError> {
        if job.status != JobStatus::Done {
            return Err(GalleryError::JobNotDone(job.id.clone()));
        }
        let image = job.results.get(index).cloned().ok_or(GalleryError::IndexOutOfRange {
            job: job.id.clone(),
            index,
            len: job.results.len(),
        })?;
        self.push(|id| GalleryEntry {
            id,
            image,
            origin: Origin::Promoted,
            parent_job: Some(job.id.clone()),
            result_index: Some(index),
        })
    }
}
