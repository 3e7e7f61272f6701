//! Content-addressed image store: `<root>/images/<sha256>.<ext>`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use image::ImageFormat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Distinguishes concurrent writers' temp files within one process.
static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a decodable image: {0}")]
    CorruptImage(String),
    #[error("image `{0}` not found in store")]
    NotFound(String),
    #[error("content hash mismatch for {0}")]
    HashMismatch(String),
}

/// A stored image. `id` equals the content hash.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub content_hash: String,
}

impl ImageRef {
    pub fn read_bytes(&self) -> Result<Vec<u8>, StoreError> {
        fs::read(&self.path).map_err(|source| StoreError::Io {
            path: self.path.clone(),
            source,
        })
    }

    /// Re-hashes the file and checks it against `content_hash`.
    pub fn verify(&self) -> Result<(), StoreError> {
        if sha256_hex(&self.read_bytes()?) == self.content_hash {
            Ok(())
        } else {
            Err(StoreError::HashMismatch(self.path.display().to_string()))
        }
    }

    pub fn decode(&self) -> Result<image::DynamicImage, StoreError> {
        decode(&self.read_bytes()?)
    }

    pub fn content_type(&self) -> &'static str {
        match self.path.extension().and_then(|e| e.to_str()) {
            Some("jpg") | Some("jpeg") => "image/jpeg",
            _ => "image/png",
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn decode(bytes: &[u8]) -> Result<image::DynamicImage, StoreError> {
    if bytes.is_empty() {
        return Err(StoreError::CorruptImage("empty file".into()));
    }
    image::load_from_memory(bytes).map_err(|e| StoreError::CorruptImage(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct ImageStore {
    root: PathBuf,
}

impl ImageStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let images = root.join("images");
        fs::create_dir_all(&images).map_err(|source| StoreError::Io { path: images, source })?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    /// Stores encoded PNG or JPEG bytes. Idempotent for identical content.
    pub fn put_bytes(&self, bytes: &[u8]) -> Result<ImageRef, StoreError> {
        let format = image::guess_format(bytes).map_err(|e| StoreError::CorruptImage(e.to_string()))?;
        let ext = match format {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpg",
            other => return Err(StoreError::CorruptImage(format!("unsupported format {other:?}"))),
        };
        let img = decode(bytes)?;
        let hash = sha256_hex(bytes);
        let path = self.images_dir().join(format!("{hash}.{ext}"));
        if !path.exists() {
            // Write-then-rename so concurrent readers never see a partial file.
            let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
            let tmp = self.images_dir().join(format!(".{hash}.{}.{n}.tmp", std::process::id()));
            let io = |source| StoreError::Io { path: tmp.clone(), source };
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(bytes).map_err(io)?;
            f.sync_all().map_err(io)?;
            fs::rename(&tmp, &path).map_err(|source| StoreError::Io { path: path.clone(), source })?;
        }
        Ok(ImageRef {
            id: hash.clone(),
            path,
            width: img.width(),
            height: img.height(),
            content_hash: hash,
        })
    }

    pub fn put_rgb(&self, img: &image::RgbImage) -> Result<ImageRef, StoreError> {
        self.put_bytes(&encode_png(img))
    }

    pub fn import(&self, path: &Path) -> Result<ImageRef, StoreError> {
        let bytes = fs::read(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.put_bytes(&bytes)
    }

    pub fn get(&self, id: &str) -> Result<ImageRef, StoreError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        for ext in ["png", "jpg"] {
            let path = self.images_dir().join(format!("{id}.{ext}"));
            if path.exists() {
                let bytes = fs::read(&path).map_err(|source| StoreError::Io { path: path.clone(), source })?;
                let img = decode(&bytes)?;
                return Ok(ImageRef {
                    id: id.to_string(),
                    path,
                    width: img.width(),
                    height: img.height(),
                    content_hash: id.to_string(),
                });
            }
        }
        Err(StoreError::NotFound(id.to_string()))
    }
}

/// Lossless PNG with the encoder's default settings.
pub fn encode_png(img: &image::RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}
