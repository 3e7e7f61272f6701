//! Toy-scale SAE training: plain minibatch SGD with unit-norm decoder columns.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{Matrix, SaeError, SaeModel};
use crate::embedding::Embedding;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTrainOptions {
    pub learning_rate: f64,
    /// Samples per step, drawn without replacement; clamped to the data size.
    pub batch_size: usize,
}

impl Default for ToyTrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            batch_size: 32,
        }
    }
}

/// Gradients of the per-sample loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGradients {
    pub w_enc: Matrix,
    pub b_enc: Vec<f64>,
    pub w_dec: Matrix,
    pub b_dec: Vec<f64>,
}

impl SaeGradients {
    fn zeros(m: usize, n: usize) -> Self {
        Self {
            w_enc: Matrix::zeros(m, n),
            b_enc: vec![0.0; m],
            w_dec: Matrix::zeros(n, m),
            b_dec: vec![0.0; n],
        }
    }

    fn accumulate(&mut self, other: &SaeGradients, weight: f64) {
        let pairs: [(&mut [f64], &[f64]); 4] = [
            (self.w_enc.as_mut_slice(), other.w_enc.as_slice()),
            (&mut self.b_enc, &other.b_enc),
            (self.w_dec.as_mut_slice(), other.w_dec.as_slice()),
            (&mut self.b_dec, &other.b_dec),
        ];
        for (dst, src) in pairs {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += weight * s);
        }
    }
}

/// Loss and its exact gradient for one sample.
///
/// With `z = W_enc a + b_enc`, `h = relu(z)`, `r = W_dec h + b_dec − a`:
/// `∂L/∂W_dec = 2 r hᵀ`, `∂L/∂b_dec = 2 r`,
/// `∂L/∂z = (2 W_decᵀ r + λ) ⊙ [z > 0]`, `∂L/∂W_enc = ∂L/∂z · aᵀ`.
pub fn loss_and_gradients(model: &SaeModel, a: &Embedding) -> Result<(f64, SaeGradients), SaeError> {
    a.check_dim(model.n())?;
    let (m, n) = (model.m(), model.n());
    let x = a.as_slice();
    let z = model.w_enc().affine(x, model.b_enc());
    let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
    let recon = model.w_dec().affine(&h, model.b_dec());
    let residual: Vec<f64> = recon.iter().zip(x).map(|(r, v)| r - v).collect();

    let loss = residual.iter().map(|r| r * r).sum::<f64>() + model.sparsity_coeff() * h.iter().sum::<f64>();

    let mut grads = SaeGradients::zeros(m, n);
    for i in 0..n {
        let two_r = 2.0 * residual[i];
        grads.b_dec[i] = two_r;
        for j in 0..m {
            grads.w_dec.set(i, j, two_r * h[j]);
        }
    }
    for j in 0..m {
        if z[j] <= 0.0 {
            continue;
        }
        let back: f64 = (0..n).map(|i| 2.0 * residual[i] * model.w_dec().get(i, j)).sum();
        let dz = back + model.sparsity_coeff();
        grads.b_enc[j] = dz;
        for k in 0..n {
            grads.w_enc.set(j, k, dz * x[k]);
        }
    }
    Ok((loss, grads))
}

pub fn mean_loss(model: &SaeModel, data: &[Embedding]) -> Result<f64, SaeError> {
    if data.is_empty() {
        return Err(SaeError::EmptyData);
    }
    let mut total = 0.0;
    for a in data {
        total += model.loss(a)?;
    }
    Ok(total / data.len() as f64)
}

/// Seeded starting point: encoder entries `N(0,1)/√n`, decoder tied to the
/// encoder transpose with unit-norm columns, zero biases.
pub fn initial_model(n: usize, m: usize, sparsity_coeff: f64, rng_seed: u64) -> Result<SaeModel, SaeError> {
    if n == 0 || m <= n {
        return Err(SaeError::NotOvercomplete { m, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let scale = 1.0 / (n as f64).sqrt();
    let data: Vec<f64> = (0..m * n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
        .collect();
    let w_enc = Matrix::from_vec(m, n, data)?;
    let mut w_dec = w_enc.transpose();
    normalize_columns(&mut w_dec);
    SaeModel::new(w_enc, vec![0.0; m], w_dec, vec![0.0; n], sparsity_coeff)
}

fn normalize_columns(w_dec: &mut Matrix) {
    for j in 0..w_dec.cols() {
        let norm = (0..w_dec.rows()).map(|i| w_dec.get(i, j).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..w_dec.rows() {
                w_dec.set(i, j, w_dec.get(i, j) / norm);
            }
        }
    }
}

pub fn train_toy_sae(
    data: &[Embedding],
    m: usize,
    sparsity_coeff: f64,
    steps: usize,
    rng_seed: u64,
) -> Result<SaeModel, SaeError> {
    train_toy_sae_with(data, m, sparsity_coeff, steps, rng_seed, ToyTrainOptions::default())
}

/// Trains from [`initial_model`]. If training ends with a higher mean loss
/// than it started with, the initial model is returned instead.
pub fn train_toy_sae_with(
    data: &[Embedding],
    m: usize,
    sparsity_coeff: f64,
    steps: usize,
    rng_seed: u64,
    options: ToyTrainOptions,
) -> Result<SaeModel, SaeError> {
    let first = data.first().ok_or(SaeError::EmptyData)?;
    let n = first.dim();
    if let Some(bad) = data.iter().find(|e| e.dim() != n) {
        return Err(SaeError::DimMismatch {
            expected: n,
            got: bad.dim(),
        });
    }
    if !(options.learning_rate > 0.0) || options.batch_size == 0 {
        return Err(SaeError::InvalidArgument("learning rate and batch size must be positive".into()));
    }
    let initial = initial_model(n, m, sparsity_coeff, rng_seed)?;
    if steps == 0 {
        return Ok(initial);
    }

    // Batch sampling uses its own stream so the init stays comparable across step counts.
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_add(0x5eed));
    let batch = options.batch_size.min(data.len());
    let mut model = initial.clone();
    for _ in 0..steps {
        let mut grads = SaeGradients::zeros(m, n);
        let picks = sample(&mut rng, data.len(), batch);
        for idx in picks.iter() {
            let (_, g) = loss_and_gradients(&model, &data[idx])?;
            grads.accumulate(&g, 1.0 / batch as f64);
        }
        let (w_enc, b_enc, w_dec, b_dec) = model.parts_mut();
        let lr = options.learning_rate;
        let pairs: [(&mut [f64], &[f64]); 4] = [
            (w_enc.as_mut_slice(), grads.w_enc.as_slice()),
            (b_enc.as_mut_slice(), &grads.b_enc),
            (w_dec.as_mut_slice(), grads.w_dec.as_slice()),
            (b_dec.as_mut_slice(), &grads.b_dec),
        ];
        for (param, grad) in pairs {
            param.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
        }
        normalize_columns(w_dec);
    }

    let model = SaeModel::new(
        model.w_enc().clone(),
        model.b_enc().to_vec(),
        model.w_dec().clone(),
        model.b_dec().to_vec(),
        sparsity_coeff,
    )?;
    if mean_loss(&model, data)? <= mean_loss(&initial, data)? {
        Ok(model)
    } else {
        Ok(initial)
    }
}

/// Known dictionary and samples drawn from it: `atoms` random unit vectors
/// in `dim` dimensions, each sample a sum of `active` distinct atoms with
/// coefficients uniform in [0.5, 1.5].
pub fn synthetic_sparse_data(
    atoms: usize,
    dim: usize,
    active: usize,
    samples: usize,
    rng_seed: u64,
) -> Result<(Vec<Embedding>, Vec<Embedding>), SaeError> {
    if atoms == 0 || dim == 0 || active == 0 || active > atoms || samples == 0 {
        return Err(SaeError::InvalidArgument(format!(
            "need 0 < active ≤ atoms and positive dim/samples, got atoms={atoms} dim={dim} active={active} samples={samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let dictionary: Vec<Embedding> = (0..atoms)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break Embedding::new(v.into_iter().map(|x| x / norm).collect()).expect("finite unit vector");
            }
        })
        .collect();
    let coeff = Uniform::new(0.5, 1.5).expect("valid range");
    let data = (0..samples)
        .map(|_| {
            let mut x = vec![0.0; dim];
            for j in sample(&mut rng, atoms, active).iter() {
                let c = coeff.sample(&mut rng);
                x.iter_mut().zip(dictionary[j].as_slice()).for_each(|(xi, d)| *xi += c * d);
            }
            Embedding::new(x).expect("finite sample")
        })
        .collect();
    Ok((dictionary, data))
}
