//! Evaluation math: OCR edit-distance scores, CLIPScore rescaling, VLM
//! score normalization and scorer interfaces.

use std::sync::Mutex;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub const NED_EPS: f64 = 1e-9;
pub const CLIP_PREFIX: &str = "A photo depicts ";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("target text is empty after normalization")]
    EmptyTarget,
    #[error("cosine {0} outside [-1, 1]")]
    CosineRange(f64),
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
}

/// Lowercase, collapse whitespace runs, trim.
pub fn normalize_text(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Target T and recognized R, both un-normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextPair {
    pub target: String,
    pub recognized: String,
}

impl TextPair {
    pub fn new(target: impl Into<String>, recognized: impl Into<String>) -> Self {
        TextPair {
            target: target.into(),
            recognized: recognized.into(),
        }
    }
}

/// max(0, 1 − d(N(T), N(R)) / |N(T)|)
pub fn ocr_acc(pair: &TextPair) -> Result<f64, MetricError> {
    let t = normalize_text(&pair.target);
    let r = normalize_text(&pair.recognized);
    let n = t.chars().count();
    if n == 0 {
        return Err(MetricError::EmptyTarget);
    }
    Ok((1.0 - levenshtein(&t, &r) as f64 / n as f64).max(0.0))
}

/// max(0, 1 − d / (max(|N(T)|, |N(R)|) + ε))
pub fn ocr_ned(pair: &TextPair, eps: f64) -> f64 {
    let t = normalize_text(&pair.target);
    let r = normalize_text(&pair.recognized);
    let denom = t.chars().count().max(r.chars().count()) as f64 + eps;
    (1.0 - levenshtein(&t, &r) as f64 / denom).max(0.0)
}

/// 2.5·max(cos, 0), rounded to 12 decimals so decimal inputs give the
/// decimal result (0.28 → 0.7, not 0.7000000000000001).
pub fn clip_rescale(cos: f64) -> Result<f64, MetricError> {
    if !cos.is_finite() || cos.abs() > 1.0 + 1e-6 {
        return Err(MetricError::CosineRange(cos));
    }
    Ok((2.5 * cos.max(0.0) * 1e12).round() / 1e12)
}

pub trait EmbeddingScorer: Send + Sync {
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, MetricError>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, MetricError>;
}

fn unit(v: Vec<f64>) -> Result<Vec<f64>, MetricError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(MetricError::Scorer("embedding has zero or non-finite norm".into()));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

/// CLIPScore of `image` against "A photo depicts " + `prompt`.
pub fn clip_score(image: &RgbImage, prompt: &str, scorer: &dyn EmbeddingScorer) -> Result<f64, MetricError> {
    let i = unit(scorer.embed_image(image)?)?;
    let t = unit(scorer.embed_text(&format!("{CLIP_PREFIX}{prompt}"))?)?;
    if i.len() != t.len() {
        return Err(MetricError::Scorer(format!("embedding sizes {} and {}", i.len(), t.len())));
    }
    let cos: f64 = i.iter().zip(&t).map(|(a, b)| a * b).sum();
    clip_rescale(cos.clamp(-1.0, 1.0))
}

/// clamp(raw, 0, 10) / 10
pub fn vlm_score_normalize(raw: f64) -> f64 {
    raw.clamp(0.0, 10.0) / 10.0
}

pub trait VqaBackend: Send + Sync {
    fn score(&self, image: &RgbImage, text: &str) -> Result<f64, MetricError>;
}

/// The prompt goes to the backend verbatim; the score comes back unchanged.
pub fn vqa_score(image: &RgbImage, prompt: &str, backend: Option<&dyn VqaBackend>) -> Result<f64, MetricError> {
    backend
        .ok_or_else(|| MetricError::Unavailable("no VQA backend configured".into()))?
        .score(image, prompt)
}

/// Deterministic stand-ins.
pub mod mock {
    use super::*;

    fn seeded(bytes: &[u8], dim: usize) -> Vec<f64> {
        let d = Sha256::digest(bytes);
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&d);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Vectors seeded from the SHA-256 of the text or raw pixels.
    pub struct HashEmbedder {
        pub dim: usize,
    }

    impl EmbeddingScorer for HashEmbedder {
        fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, MetricError> {
            Ok(seeded(image.as_raw(), self.dim))
        }

        fn embed_text(&self, text: &str) -> Result<Vec<f64>, MetricError> {
            Ok(seeded(text.as_bytes(), self.dim))
        }
    }

    /// Returns fixed vectors.
    pub struct FixedEmbedder {
        pub image: Vec<f64>,
        pub text: Vec<f64>,
    }

    impl EmbeddingScorer for FixedEmbedder {
        fn embed_image(&self, _: &RgbImage) -> Result<Vec<f64>, MetricError> {
            Ok(self.image.clone())
        }

        fn embed_text(&self, _: &str) -> Result<Vec<f64>, MetricError> {
            Ok(self.text.clone())
        }
    }

    /// Returns a constant and records every text query.
    pub struct ConstVqa {
        pub value: f64,
        pub seen: Mutex<Vec<String>>,
    }

    impl ConstVqa {
        pub fn new(value: f64) -> Self {
            ConstVqa {
                value,
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl VqaBackend for ConstVqa {
        fn score(&self, _: &RgbImage, text: &str) -> Result<f64, MetricError> {
            self.seen.lock().expect("vqa lock").push(text.to_string());
            Ok(self.value)
        }
    }
}
