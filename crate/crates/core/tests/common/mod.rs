//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seeds_core::bridge::Bridge;
use seeds_core::embedding::Embedding;
use seeds_core::sae::{initial_model, Matrix, SaeModel};
use seeds_core::store::{ImageRef, ImageStore};

pub const MOCK_DIM: usize = 32;

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Hand-written 8-feature, 4-dim model with mixed-sign weights and biases.
pub fn hand_sae() -> SaeModel {
    let w_enc = Matrix::from_rows(&[
        vec![0.9, -0.2, 0.1, 0.0],
        vec![-0.3, 0.8, 0.0, 0.2],
        vec![0.1, 0.1, 0.7, -0.4],
        vec![0.0, -0.5, 0.3, 0.6],
        vec![0.5, 0.5, -0.5, 0.5],
        vec![-0.6, 0.0, 0.2, -0.1],
        vec![0.2, -0.7, -0.3, 0.4],
        vec![0.4, 0.3, 0.6, 0.9],
    ])
    .unwrap();
    let b_enc = vec![0.05, -0.1, 0.0, 0.2, -0.05, 0.1, 0.0, -0.3];
    let w_dec = Matrix::from_rows(&[
        vec![0.8, -0.1, 0.2, 0.0, 0.5, -0.5, 0.1, 0.3],
        vec![-0.2, 0.9, 0.0, -0.4, 0.5, 0.1, -0.6, 0.3],
        vec![0.1, 0.0, 0.8, 0.3, -0.5, 0.2, -0.2, 0.5],
        vec![0.0, 0.3, -0.3, 0.7, 0.5, -0.1, 0.4, 0.7],
    ])
    .unwrap();
    let b_dec = vec![0.01, -0.02, 0.03, 0.0];
    SaeModel::new(w_enc, b_enc, w_dec, b_dec, 0.05).unwrap()
}

/// Element-by-element encoder, written without the library's matrix helpers.
pub fn oracle_encode(model: &SaeModel, a: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; model.m()];
    for (j, hj) in h.iter_mut().enumerate() {
        let mut z = model.b_enc()[j];
        for (i, ai) in a.iter().enumerate() {
            z += model.w_enc().get(j, i) * ai;
        }
        *hj = if z > 0.0 { z } else { 0.0 };
    }
    h
}

pub fn oracle_decode(model: &SaeModel, h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; model.n()];
    for (i, oi) in out.iter_mut().enumerate() {
        let mut v = model.b_dec()[i];
        for (j, hj) in h.iter().enumerate() {
            v += model.w_dec().get(i, j) * hj;
        }
        *oi = v;
    }
    out
}

pub fn oracle_loss(model: &SaeModel, a: &[f64]) -> f64 {
    let h = oracle_encode(model, a);
    let r = oracle_decode(model, &h);
    let mut sq = 0.0;
    for i in 0..a.len() {
        sq += (a[i] - r[i]) * (a[i] - r[i]);
    }
    let mut l1 = 0.0;
    for hj in &h {
        l1 += hj.abs();
    }
    sq + model.sparsity_coeff() * l1
}

/// Lowest within-cluster SSE over every split into two non-empty groups.
pub fn exhaustive_two_means_sse(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    assert!((2..=20).contains(&n));
    let dim = points[0].len();
    let mut best = f64::INFINITY;
    // Point 0 always in group 0 so each partition is visited once.
    for mask in 0u32..(1 << (n - 1)) {
        let in_one = |i: usize| i > 0 && (mask >> (i - 1)) & 1 == 1;
        let mut sums = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (i, p) in points.iter().enumerate() {
            let g = in_one(i) as usize;
            counts[g] += 1;
            for d in 0..dim {
                sums[g][d] += p[d];
            }
        }
        if counts[1] == 0 {
            continue;
        }
        let mut sse = 0.0;
        for (i, p) in points.iter().enumerate() {
            let g = in_one(i) as usize;
            for d in 0..dim {
                let c = sums[g][d] / counts[g] as f64;
                sse += (p[d] - c) * (p[d] - c);
            }
        }
        best = best.min(sse);
    }
    best
}

pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn emb(v: Vec<f64>) -> Embedding {
    Embedding::new(v).unwrap()
}

/// Random (untrained) SAE sized for the mock encoder's embeddings.
pub fn mock_sae(seed: u64) -> SaeModel {
    initial_model(MOCK_DIM, 2 * MOCK_DIM, 0.01, seed).unwrap()
}

pub fn mock_bridge(root: &std::path::Path) -> Bridge {
    Bridge::mock(ImageStore::open(root).unwrap(), MOCK_DIM)
}

/// Smooth two-colour gradient with a seeded speckle, `w`×`h`.
pub fn photo_like(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0: [f64; 3] = [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)];
    let c1: [f64; 3] = [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)];
    RgbImage::from_fn(w, h, |x, y| {
        let t = (x as f64 / w as f64 + y as f64 / h as f64) / 2.0;
        let n: f64 = rng.random_range(-12.0..12.0);
        let px = |c: usize| (c0[c] * (1.0 - t) + c1[c] * t + n).clamp(0.0, 255.0) as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

pub fn put_photo(store: &ImageStore, w: u32, h: u32, seed: u64) -> ImageRef {
    store.put_rgb(&photo_like(w, h, seed)).unwrap()
}

/// Two ok triplets minted from the checked-in fixture photos, written to
/// `<root>/triplets.jsonl`.
pub fn fixture_triplet_manifest(bridge: &Bridge, root: &std::path::Path) -> std::path::PathBuf {
    use seeds_core::decompose::DecomposeParams;
    use seeds_core::forge::mint_batch;
    let images: Vec<ImageRef> = ["photo_a.png", "photo_b.png"]
        .iter()
        .map(|f| bridge.store().import(&fixture_path(f)).unwrap())
        .collect();
    let triplets = mint_batch(&images, &mock_sae(1), &DecomposeParams::default(), bridge, 2).unwrap();
    assert!(triplets.iter().all(|t| t.is_ok()), "fixture triplets must mint cleanly");
    let path = root.join("triplets.jsonl");
    seeds_core::manifest::write_manifest(&path, &triplets).unwrap();
    path
}
