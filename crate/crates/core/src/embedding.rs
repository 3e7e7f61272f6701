//! Dense vectors in the vision-language embedding space.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sae::tensor_file::{NamedTensor, TensorFile};
use crate::sae::SaeError;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding must have at least one coordinate")]
    Empty,
    #[error("embedding coordinate {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
}

/// A point in embedding space. Always non-empty and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        squared_distance(&self.values, &other.values).sqrt()
    }

    pub fn check_dim(&self, expected: usize) -> Result<(), EmbeddingError> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(EmbeddingError::DimMismatch {
                expected,
                got: self.dim(),
            })
        }
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, other: &Embedding, scale: f64) -> Result<Embedding, EmbeddingError> {
        other.check_dim(self.dim())?;
        Ok(Embedding {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + scale * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Embedding) -> Result<Embedding, EmbeddingError> {
        self.add_scaled(other, -1.0)
    }

    pub fn scaled(&self, scale: f64) -> Embedding {
        Embedding {
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }

    /// Arithmetic mean of a non-empty set of same-dimension embeddings.
    pub fn mean<'a, I>(items: I) -> Result<Embedding, EmbeddingError>
    where
        I: IntoIterator<Item = &'a Embedding>,
    {
        let mut iter = items.into_iter();
        let first = iter.next().ok_or(EmbeddingError::Empty)?;
        let mut acc = first.values.clone();
        let mut count = 1usize;
        for e in iter {
            e.check_dim(acc.len())?;
            for (a, v) in acc.iter_mut().zip(&e.values) {
                *a += v;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(Embedding { values: acc })
    }

    pub fn read(path: &Path) -> Result<Embedding, SaeError> {
        let file = TensorFile::read(path)?;
        let tensor = file
            .get("embedding")
            .ok_or_else(|| SaeError::MissingTensor("embedding".into()))?;
        if tensor.shape.len() != 1 || tensor.shape[0] != file.header.1 {
            return Err(SaeError::ShapeMismatch(format!(
                "embedding tensor shape {:?} does not match header width {}",
                tensor.shape, file.header.1
            )));
        }
        Embedding::new(tensor.data.iter().map(|&v| v as f64).collect()).map_err(SaeError::from)
    }

    /// Stores the embedding as float32; precision beyond f32 is lost.
    pub fn write(&self, path: &Path) -> Result<(), SaeError> {
        TensorFile {
            header: (0, self.dim()),
            tensors: vec![NamedTensor::new(
                "embedding",
                vec![self.dim()],
                self.values.iter().map(|&v| v as f32).collect(),
            )],
        }
        .write(path)
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
