use serde::{Deserialize, Serialize};

use crate::error::ProviderError;

/// A unit-norm text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit L2 norm. Zero or non-finite vectors are
    /// rejected.
    pub fn normalized(values: Vec<f64>) -> Result<Self, ProviderError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(ProviderError::BadResponse {
                provider: "embedding".into(),
                message: "zero or non-finite embedding vector".into(),
            });
        }
        Ok(Embedding(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = ProviderError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::normalized(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Cosine distance between unit vectors, clamped to [0, 2].
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> f64 {
    (1.0 - a.dot(b)).clamp(0.0, 2.0)
}

/// Text embedding backend.
pub trait Embedder: Send + Sync {
    /// Stable identity (backend and model), used for cache keys and run
    /// fingerprints.
    fn id(&self) -> String;

    /// One unit vector per text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError>;
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        (**self).embed(texts)
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        (**self).embed(texts)
    }
}

/// Checks that a batch is non-empty per text and has a single dimension.
pub(crate) fn check_batch(texts: &[String], out: &[Embedding]) -> Result<(), ProviderError> {
    if out.len() != texts.len() {
        return Err(ProviderError::BadResponse {
            provider: "embedding".into(),
            message: format!("expected {} vectors, got {}", texts.len(), out.len()),
        });
    }
    if let Some(first) = out.first() {
        for e in out {
            if e.dimension() != first.dimension() {
                return Err(ProviderError::DimensionMismatch {
                    expected: first.dimension(),
                    got: e.dimension(),
                });
            }
        }
    }
    Ok(())
}

pub const TRIGRAM_DIMENSION: usize = 512;

/// Offline embedder: L2-normalized character-trigram counts hashed into
/// 512 buckets. Text is lowercased, whitespace-collapsed and padded with one
/// space on each side before trigrams are taken.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramEmbedder;

impl TrigramEmbedder {
    pub fn embed_one(text: &str) -> Result<Embedding, ProviderError> {
        let collapsed = text
            .split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ");
        if collapsed.is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let padded: Vec<char> = format!(" {collapsed} ").chars().collect();
        let mut counts = vec![0.0; TRIGRAM_DIMENSION];
        let mut buf = [0u8; 12];
        for w in padded.windows(3) {
            let mut len = 0;
            for ch in w {
                len += ch.encode_utf8(&mut buf[len..]).len();
            }
            counts[(fnv1a(&buf[..len]) % TRIGRAM_DIMENSION as u64) as usize] += 1.0;
        }
        Embedding::normalized(counts)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Embedder for TrigramEmbedder {
    fn id(&self) -> String {
        format!("trigram/{TRIGRAM_DIMENSION}")
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        texts.iter().map(|t| Self::embed_one(t)).collect()
    }
}
