//! Deterministic offline stand-ins for every bridged model.
//!
//! Mock images are 64×64 RGB PNGs. All pixel math uses plain arithmetic so
//! output bytes are identical on every platform.

use std::collections::HashMap;

use image::{imageops, Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{
    BridgeError, CombinationGenerator, EmbeddingDecoder, ImageEncoder, PerceptualModel, PromptExpander,
    ReconstructionJudge, TextToImage,
};
use crate::embedding::Embedding;
use crate::store::{self, encode_png, ImageRef};

pub const MOCK_IMAGE_SIDE: u32 = 64;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn digest_u64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let d = hasher.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Seeded pseudo-random unit vector.
pub fn unit_vector(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Embedding seeded by the image's content hash.
#[derive(Debug, Clone)]
pub struct MockEncoder {
    dim: usize,
}

impl MockEncoder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl ImageEncoder for MockEncoder {
    fn embed(&self, image: &ImageRef, _bytes: &[u8]) -> Result<Vec<f64>, BridgeError> {
        Ok(unit_vector(digest_u64(&[image.content_hash.as_bytes()]), self.dim))
    }
}

fn squash(x: f64) -> f64 {
    0.5 + 0.5 * x / (1.0 + x.abs())
}

fn to_channel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Procedural image: two colours and a stripe field read off the
/// embedding, with a seed-dependent phase and grain.
pub fn render_procedural(e: &Embedding, seed: u64) -> RgbImage {
    let v = e.as_slice();
    let scale = (v.len() as f64).sqrt();
    let g = |i: usize| v[i % v.len()] * scale;
    let base = [squash(g(0)), squash(g(1)), squash(g(2))];
    let accent = [squash(g(3)), squash(g(4)), squash(g(5))];
    let (dx, dy) = (g(6), g(7));
    let freq = 1.0 + 3.0 * squash(g(8));
    let phase = (splitmix64(seed) >> 11) as f64 / (1u64 << 53) as f64;
    let side = MOCK_IMAGE_SIDE as f64;

    RgbImage::from_fn(MOCK_IMAGE_SIDE, MOCK_IMAGE_SIDE, |x, y| {
        let t = (x as f64 * dx + y as f64 * dy) / side * freq + phase;
        let frac = t - t.floor();
        let tri = 1.0 - (2.0 * frac - 1.0).abs();
        let grain = splitmix64(seed ^ ((x as u64) << 32) ^ y as u64);
        let px = |c: usize| {
            let jitter = ((grain >> (8 * c)) & 0xff) as f64 / 255.0 - 0.5;
            to_channel(base[c] * (1.0 - tri) + accent[c] * tri + 0.03 * jitter)
        };
        Rgb([px(0), px(1), px(2)])
    })
}

#[derive(Debug, Clone)]
pub struct MockDecoder {
    dim: usize,
}

impl MockDecoder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl EmbeddingDecoder for MockDecoder {
    fn expected_dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn render(&self, embedding: &Embedding, seed: u64) -> Result<Vec<u8>, BridgeError> {
        Ok(encode_png(&render_procedural(embedding, seed)))
    }
}

#[derive(Debug, Clone)]
pub struct MockTextToImage {
    dim: usize,
}

impl MockTextToImage {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl TextToImage for MockTextToImage {
    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, BridgeError> {
        let e = Embedding::new(unit_vector(digest_u64(&[prompt.as_bytes()]), self.dim))?;
        Ok(encode_png(&render_procedural(&e, seed)))
    }
}

/// Blends the two canvas tiles with a seed-dependent weight and writes the
/// seed's bits into the first row.
#[derive(Debug, Clone, Copy)]
pub struct MockGenerator;

impl CombinationGenerator for MockGenerator {
    fn generate(&self, _canvas: &ImageRef, canvas_bytes: &[u8], _prompt: &str, seed: u64) -> Result<Vec<u8>, BridgeError> {
        let canvas = store::decode(canvas_bytes)?.to_rgb8();
        let half = canvas.width() / 2;
        let step = half / MOCK_IMAGE_SIDE;
        let w = 0.25 + 0.5 * ((splitmix64(seed) >> 11) as f64 / (1u64 << 53) as f64);
        let mut out = RgbImage::from_fn(MOCK_IMAGE_SIDE, MOCK_IMAGE_SIDE, |x, y| {
            let a = canvas.get_pixel(x * step, y * step);
            let b = canvas.get_pixel(half + x * step, half + y * step);
            Rgb(std::array::from_fn(|c| {
                to_channel((w * a[c] as f64 + (1.0 - w) * b[c] as f64) / 255.0)
            }))
        });
        for bit in 0..MOCK_IMAGE_SIDE.min(64) {
            let on = (seed >> bit) & 1 == 1;
            out.put_pixel(bit, 0, if on { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) });
        }
        Ok(encode_png(&out))
    }
}

const CANNED_DESCRIPTIONS: [&str; 5] = [
    "* copy <image2>",
    "* copy entire grid",
    "* Place the object from image1 into the scene from image2.",
    "* Take the silhouette of the object in image1.\n* Apply the surface texture and palette of image2 across it.\n* Blend the lighting of both images into one soft glow.",
    "* Keep the overall structure of image1.\n* Transform its surface with the layered patterns from image2.",
];

/// Returns canned descriptions: an exact fixture when one is registered for
/// the image hashes, otherwise a canned text chosen by those hashes.
#[derive(Debug, Clone)]
pub struct MockJudge {
    canned: Vec<String>,
    fixtures: HashMap<String, String>,
}

impl Default for MockJudge {
    fn default() -> Self {
        Self {
            canned: CANNED_DESCRIPTIONS.iter().map(|s| s.to_string()).collect(),
            fixtures: HashMap::new(),
        }
    }
}

impl MockJudge {
    /// Always answers `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        Self {
            canned: vec![text.into()],
            fixtures: HashMap::new(),
        }
    }

    pub fn with_canned(canned: Vec<String>) -> Self {
        assert!(!canned.is_empty(), "mock judge needs at least one canned description");
        Self {
            canned,
            fixtures: HashMap::new(),
        }
    }

    /// Registers the answer for one exact (inputs…, output) image sequence.
    pub fn with_fixture(mut self, images: &[&ImageRef], text: impl Into<String>) -> Self {
        self.fixtures.insert(fixture_key(images.iter().map(|i| i.content_hash.as_str())), text.into());
        self
    }
}

fn fixture_key<'a>(hashes: impl Iterator<Item = &'a str>) -> String {
    hashes.collect::<Vec<_>>().join("|")
}

impl ReconstructionJudge for MockJudge {
    fn describe(&self, _prompt: &str, images: &[(&ImageRef, Vec<u8>)]) -> Result<String, BridgeError> {
        let key = fixture_key(images.iter().map(|(i, _)| i.content_hash.as_str()));
        if let Some(text) = self.fixtures.get(&key) {
            return Ok(text.clone());
        }
        let pick = digest_u64(&[key.as_bytes()]) % self.canned.len() as u64;
        Ok(self.canned[pick as usize].clone())
    }
}

const INTERPRETATIONS: [&str; 6] = [
    "imagined as a surreal dreamscape at dusk",
    "built as an intricate miniature diorama",
    "painted as a luminous watercolor study",
    "carved from weathered stone overgrown with moss",
    "woven from glowing threads of colored glass",
    "seen through fog as a faded architectural ruin",
];

#[derive(Debug, Clone, Copy)]
pub struct MockExpander;

impl PromptExpander for MockExpander {
    fn expand(&self, vague: &str, n_variants: usize) -> Result<Vec<String>, BridgeError> {
        let start = (digest_u64(&[vague.as_bytes()]) % INTERPRETATIONS.len() as u64) as usize;
        Ok((0..n_variants)
            .map(|i| {
                let style = INTERPRETATIONS[(start + i) % INTERPRETATIONS.len()];
                let round = i / INTERPRETATIONS.len();
                if round == 0 {
                    format!("{vague}, {style}")
                } else {
                    format!("{vague}, {style} (variation {})", round + 1)
                }
            })
            .collect())
    }
}

/// 64-bit average hash: 8×8 grayscale thumbnail thresholded at its mean.
pub fn average_hash(bytes: &[u8]) -> Result<u64, BridgeError> {
    let gray = store::decode(bytes)?.to_luma8();
    let thumb = imageops::resize(&gray, 8, 8, imageops::FilterType::Triangle);
    let mean = thumb.pixels().map(|p| p[0] as u32).sum::<u32>() as f64 / 64.0;
    Ok(thumb
        .pixels()
        .enumerate()
        .fold(0u64, |acc, (i, p)| if p[0] as f64 > mean { acc | (1 << i) } else { acc }))
}

/// Distance = Hamming distance of average hashes / 64.
#[derive(Debug, Clone, Copy)]
pub struct MockPerceptual;

impl PerceptualModel for MockPerceptual {
    fn distance(&self, a: &[u8], b: &[u8]) -> Result<f64, BridgeError> {
        if a == b {
            return Ok(0.0);
        }
        Ok((average_hash(a)? ^ average_hash(b)?).count_ones() as f64 / 64.0)
    }
}
