//! Single-layer sparse autoencoder over embedding vectors.
//!
//! ```text
//! h = relu(W_enc · a + b_enc)        (m features)
//! â = W_dec · h + b_dec              (n embedding coordinates)
//! L = ‖a − â‖² + sparsity_coeff · ‖h‖₁
//! ```
//!
//! Each decoder column is one learned feature direction ("atom").

pub mod tensor_file;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedding, EmbeddingError};
use tensor_file::{NamedTensor, TensorFile};

pub use train::{
    initial_model, loss_and_gradients, mean_loss, synthetic_sparse_data, train_toy_sae, train_toy_sae_with,
    SaeGradients, ToyTrainOptions,
};

#[derive(Debug, Error, PartialEq)]
pub enum SaeError {
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model is not overcomplete: m = {m} must exceed n = {n}")]
    NotOvercomplete { m: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("no feature has a positive activation")]
    NoActiveFeatures,
    #[error("training data is empty")]
    EmptyData,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<EmbeddingError> for SaeError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::DimMismatch { expected, got } => SaeError::DimMismatch { expected, got },
            other => SaeError::InvalidArgument(other.to_string()),
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SaeError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(SaeError::ShapeMismatch("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, SaeError> {
        if data.len() != rows * cols {
            return Err(SaeError::ShapeMismatch(format!(
                "{} values cannot fill a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// `self · x + bias`.
    pub fn affine(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(bias.len(), self.rows);
        (0..self.rows)
            .map(|r| bias[r] + self.row(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Sparse code `h` produced by the encoder. Entries are never negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseActivation {
    values: Vec<f64>,
}

impl SparseActivation {
    pub fn new(values: Vec<f64>) -> Result<Self, SaeError> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SaeError::InvalidArgument(
                "activations must be finite and non-negative".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v > 0.0).count()
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// One selected feature: its index and its decoder column.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub index: usize,
    pub activation: f64,
    pub direction: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    w_enc: Matrix,
    b_enc: Vec<f64>,
    w_dec: Matrix,
    b_dec: Vec<f64>,
    activation: Activation,
    sparsity_coeff: f64,
}

impl SaeModel {
    /// Validates shapes and the overcomplete/finite-decoder invariants.
    pub fn new(
        w_enc: Matrix,
        b_enc: Vec<f64>,
        w_dec: Matrix,
        b_dec: Vec<f64>,
        sparsity_coeff: f64,
    ) -> Result<Self, SaeError> {
        let (m, n) = (w_enc.rows(), w_enc.cols());
        if b_enc.len() != m {
            return Err(SaeError::ShapeMismatch(format!("b_enc has {} entries, expected {m}", b_enc.len())));
        }
        if w_dec.rows() != n || w_dec.cols() != m {
            return Err(SaeError::ShapeMismatch(format!(
                "w_dec is {}×{}, expected {n}×{m}",
                w_dec.rows(),
                w_dec.cols()
            )));
        }
        if b_dec.len() != n {
            return Err(SaeError::ShapeMismatch(format!("b_dec has {} entries, expected {n}", b_dec.len())));
        }
        if n == 0 || m <= n {
            return Err(SaeError::NotOvercomplete { m, n });
        }
        if !(sparsity_coeff >= 0.0 && sparsity_coeff.is_finite()) {
            return Err(SaeError::InvalidModel("sparsity_coeff must be finite and non-negative".into()));
        }
        let all_finite = [w_enc.as_slice(), &b_enc, w_dec.as_slice(), &b_dec]
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(SaeError::InvalidModel("weights contain non-finite values".into()));
        }
        if let Some(j) = (0..m).find(|&j| (0..n).all(|r| w_dec.get(r, j) == 0.0)) {
            return Err(SaeError::InvalidModel(format!("decoder column {j} is all zero")));
        }
        Ok(Self {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
            activation: Activation::Relu,
            sparsity_coeff,
        })
    }

    /// Feature count.
    pub fn m(&self) -> usize {
        self.w_enc.rows()
    }

    /// Embedding width.
    pub fn n(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn w_enc(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn b_enc(&self) -> &[f64] {
        &self.b_enc
    }

    pub fn w_dec(&self) -> &Matrix {
        &self.w_dec
    }

    pub fn b_dec(&self) -> &[f64] {
        &self.b_dec
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn sparsity_coeff(&self) -> f64 {
        self.sparsity_coeff
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>, &mut Matrix, &mut Vec<f64>) {
        (&mut self.w_enc, &mut self.b_enc, &mut self.w_dec, &mut self.b_dec)
    }

    pub fn encode(&self, a: &Embedding) -> Result<SparseActivation, SaeError> {
        a.check_dim(self.n())?;
        let act = self.activation;
        let values = self
            .w_enc
            .affine(a.as_slice(), &self.b_enc)
            .into_iter()
            .map(|z| act.apply(z))
            .collect();
        Ok(SparseActivation { values })
    }

    pub fn decode(&self, h: &SparseActivation) -> Result<Embedding, SaeError> {
        if h.len() != self.m() {
            return Err(SaeError::DimMismatch {
                expected: self.m(),
                got: h.len(),
            });
        }
        Ok(Embedding::new(self.w_dec.affine(h.as_slice(), &self.b_dec))?)
    }

    pub fn loss(&self, a: &Embedding) -> Result<f64, SaeError> {
        let h = self.encode(a)?;
        let recon = self.decode(&h)?;
        let err: f64 = crate::embedding::squared_distance(a.as_slice(), recon.as_slice());
        Ok(err + self.sparsity_coeff * h.l1())
    }

    /// Decoder column `j`, without the decoder bias.
    pub fn atom(&self, j: usize) -> Embedding {
        Embedding::new(self.w_dec.column(j)).expect("decoder columns are validated finite")
    }

    /// The `k` strongest strictly-positive features, strongest first, ties
    /// to the lower index. Fewer than `k` are returned if fewer are active.
    pub fn top_k_atoms(&self, h: &SparseActivation, k: usize) -> Result<Vec<Atom>, SaeError> {
        if h.len() != self.m() {
            return Err(SaeError::DimMismatch {
                expected: self.m(),
                got: h.len(),
            });
        }
        if k == 0 || k > self.m() {
            return Err(SaeError::InvalidArgument(format!(
                "k = {k} must be in 1..={}",
                self.m()
            )));
        }
        let mut active: Vec<(usize, f64)> = h
            .as_slice()
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| *v > 0.0)
            .collect();
        if active.is_empty() {
            return Err(SaeError::NoActiveFeatures);
        }
        active.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        active.truncate(k);
        Ok(active
            .into_iter()
            .map(|(index, activation)| Atom {
                index,
                activation,
                direction: self.atom(index),
            })
            .collect())
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let f32s = |s: &[f64]| s.iter().map(|&v| v as f32).collect::<Vec<_>>();
        let (m, n) = (self.m(), self.n());
        TensorFile {
            header: (m, n),
            tensors: vec![
                NamedTensor::new("w_enc", vec![m, n], f32s(self.w_enc.as_slice())),
                NamedTensor::new("b_enc", vec![m], f32s(&self.b_enc)),
                NamedTensor::new("w_dec", vec![n, m], f32s(self.w_dec.as_slice())),
                NamedTensor::new("b_dec", vec![n], f32s(&self.b_dec)),
                NamedTensor::new("sparsity_coeff", vec![1], vec![self.sparsity_coeff as f32]),
            ],
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), SaeError> {
        self.to_tensor_file().write(path)
    }
}

/// Builds a validated model from a parsed container. Dimensions come from
/// the tensor shapes; the header must agree with them.
pub fn sae_from_tensor_file(file: &TensorFile) -> Result<SaeModel, SaeError> {
    let fetch = |name: &str| file.get(name).ok_or_else(|| SaeError::MissingTensor(name.into()));
    let w_enc = fetch("w_enc")?;
    let b_enc = fetch("b_enc")?;
    let w_dec = fetch("w_dec")?;
    let b_dec = fetch("b_dec")?;

    let matrix = |t: &NamedTensor| -> Result<Matrix, SaeError> {
        if t.shape.len() != 2 {
            return Err(SaeError::ShapeMismatch(format!("{} must be rank 2, got {:?}", t.name, t.shape)));
        }
        Matrix::from_vec(t.shape[0], t.shape[1], t.data.iter().map(|&v| v as f64).collect())
    };
    let vector = |t: &NamedTensor| -> Result<Vec<f64>, SaeError> {
        if t.shape.len() != 1 {
            return Err(SaeError::ShapeMismatch(format!("{} must be rank 1, got {:?}", t.name, t.shape)));
        }
        Ok(t.data.iter().map(|&v| v as f64).collect())
    };

    let w_enc = matrix(w_enc)?;
    let (m, n) = (w_enc.rows(), w_enc.cols());
    if file.header != (m, n) {
        return Err(SaeError::ShapeMismatch(format!(
            "header declares m={} n={}, w_enc is {m}×{n}",
            file.header.0, file.header.1
        )));
    }
    let sparsity_coeff = match file.get("sparsity_coeff") {
        Some(t) if t.data.len() == 1 => t.data[0] as f64,
        Some(_) => return Err(SaeError::ShapeMismatch("sparsity_coeff must hold one value".into())),
        None => 0.0,
    };
    SaeModel::new(w_enc, vector(b_enc)?, matrix(w_dec)?, vector(b_dec)?, sparsity_coeff)
}

pub fn load_sae(path: &Path) -> Result<SaeModel, SaeError> {
    sae_from_tensor_file(&TensorFile::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn model_3x2() -> SaeModel {
        let w_enc = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let w_dec = w_enc.transpose();
        SaeModel::new(w_enc, vec![0.0; 3], w_dec, vec![0.0; 2], 0.5).unwrap()
    }

    fn file_8x4() -> TensorFile {
        TensorFile {
            header: (8, 4),
            tensors: vec![
                NamedTensor::new("w_enc", vec![8, 4], (0..32).map(|i| i as f32 * 0.1).collect()),
                NamedTensor::new("b_enc", vec![8], vec![0.0; 8]),
                NamedTensor::new("w_dec", vec![4, 8], (0..32).map(|i| 1.0 + i as f32).collect()),
                NamedTensor::new("b_dec", vec![4], vec![0.5; 4]),
            ],
        }
    }

    #[test]
    fn encode_relu_example() {
        let h = model_3x2().encode(&emb(&[2.0, -3.0])).unwrap();
        assert_eq!(h.as_slice(), &[2.0, 0.0, 0.0]);
        assert_eq!(h.nnz(), 1);
    }

    #[test]
    fn encode_zero_input_zero_bias() {
        let h = model_3x2().encode(&emb(&[0.0, 0.0])).unwrap();
        assert_eq!(h.as_slice(), &[0.0; 3]);
    }

    #[test]
    fn encode_dim_mismatch() {
        assert_eq!(
            model_3x2().encode(&emb(&[1.0, 2.0, 3.0])),
            Err(SaeError::DimMismatch { expected: 2, got: 3 })
        );
    }

    #[test]
    fn decode_zero_is_bias_and_one_hot_is_column() {
        let model = sae_from_tensor_file(&file_8x4()).unwrap();
        let zero = SparseActivation::new(vec![0.0; 8]).unwrap();
        assert_eq!(model.decode(&zero).unwrap().as_slice(), &[0.5; 4]);

        let mut no_bias = file_8x4();
        no_bias.tensors[3].data = vec![0.0; 4];
        let model = sae_from_tensor_file(&no_bias).unwrap();
        let mut one_hot = vec![0.0; 8];
        one_hot[3] = 1.0;
        let out = model.decode(&SparseActivation::new(one_hot).unwrap()).unwrap();
        assert_eq!(out.as_slice(), model.w_dec().column(3).as_slice());
        assert!(model.decode(&SparseActivation::new(vec![0.0; 7]).unwrap()).is_err());
    }

    #[test]
    fn loss_formula_example() {
        // a = (1,0), â = 0, h = (1,1), λ = 0.5  →  1 + 0.5·2 = 2
        let w_enc = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let w_dec = Matrix::from_rows(&[vec![1.0, -1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let model = SaeModel::new(w_enc, vec![0.0; 3], w_dec, vec![0.0; 2], 0.5).unwrap();
        let a = emb(&[1.0, 0.0]);
        assert_eq!(model.encode(&a).unwrap().as_slice(), &[1.0, 1.0, 0.0]);
        assert_eq!(model.decode(&model.encode(&a).unwrap()).unwrap().as_slice(), &[0.0, 0.0]);
        assert!((model.loss(&a).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn loss_zero_for_perfect_reconstruction_with_silent_code() {
        // b_enc negative keeps h = 0; b_dec equals a.
        let w_enc = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let w_dec = w_enc.transpose();
        let model = SaeModel::new(w_enc, vec![-10.0; 3], w_dec, vec![0.3, -0.2], 1.0).unwrap();
        assert_eq!(model.loss(&emb(&[0.3, -0.2])).unwrap(), 0.0);
    }

    #[test]
    fn top_k_order_and_ties() {
        let model = model_3x2();
        let h = SparseActivation::new(vec![0.1, 0.9, 0.5]).unwrap();
        let idx: Vec<_> = model.top_k_atoms(&h, 2).unwrap().iter().map(|a| a.index).collect();
        assert_eq!(idx, vec![1, 2]);

        let tie = SparseActivation::new(vec![0.5, 0.5, 0.0]).unwrap();
        let atoms = model.top_k_atoms(&tie, 1).unwrap();
        assert_eq!(atoms[0].index, 0);
        assert_eq!(atoms[0].direction.as_slice(), &[1.0, 0.0]);

        let fewer = model.top_k_atoms(&tie, 3).unwrap();
        assert_eq!(fewer.len(), 2);

        let zero = SparseActivation::new(vec![0.0; 3]).unwrap();
        assert_eq!(model.top_k_atoms(&zero, 2), Err(SaeError::NoActiveFeatures));
    }

    #[test]
    fn load_reads_shapes_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.sae");
        file_8x4().write(&path).unwrap();
        let model = load_sae(&path).unwrap();
        assert_eq!((model.m(), model.n()), (8, 4));
        assert_eq!(model.sparsity_coeff(), 0.0);
    }

    #[test]
    fn load_missing_tensor() {
        let mut file = file_8x4();
        file.tensors.retain(|t| t.name != "b_dec");
        assert_eq!(sae_from_tensor_file(&file), Err(SaeError::MissingTensor("b_dec".into())));
    }

    #[test]
    fn load_shape_mismatch() {
        let mut file = file_8x4();
        file.tensors[2] = NamedTensor::new("w_dec", vec![4, 6], vec![1.0; 24]);
        assert!(matches!(sae_from_tensor_file(&file), Err(SaeError::ShapeMismatch(_))));

        let mut header = file_8x4();
        header.header = (8, 5);
        assert!(matches!(sae_from_tensor_file(&header), Err(SaeError::ShapeMismatch(_))));
    }

    #[test]
    fn load_not_overcomplete() {
        let file = TensorFile {
            header: (4, 4),
            tensors: vec![
                NamedTensor::new("w_enc", vec![4, 4], vec![1.0; 16]),
                NamedTensor::new("b_enc", vec![4], vec![0.0; 4]),
                NamedTensor::new("w_dec", vec![4, 4], vec![1.0; 16]),
                NamedTensor::new("b_dec", vec![4], vec![0.0; 4]),
            ],
        };
        assert_eq!(sae_from_tensor_file(&file), Err(SaeError::NotOvercomplete { m: 4, n: 4 }));
    }

    #[test]
    fn rejects_all_zero_decoder_column() {
        let w_enc = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let mut w_dec = w_enc.transpose();
        w_dec.set(0, 2, 0.0);
        w_dec.set(1, 2, 0.0);
        assert!(matches!(
            SaeModel::new(w_enc, vec![0.0; 3], w_dec, vec![0.0; 2], 0.0),
            Err(SaeError::InvalidModel(_))
        ));
    }

    #[test]
    fn save_load_round_trip_preserves_f32_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sae");
        let model = model_3x2();
        model.save(&path).unwrap();
        assert_eq!(load_sae(&path).unwrap(), model);
    }
}
