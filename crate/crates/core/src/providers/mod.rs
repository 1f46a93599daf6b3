//! Embedding and language-model backends.
//!
//! Pipelines only see the [`Embedder`] and [`Llm`] traits, so the offline
//! doubles ([`TrigramEmbedder`], [`TemplateLlm`], [`SeededNoiseLlm`]) and the
//! HTTP backends are interchangeable.

mod cache;
mod embedding;
mod http;
mod llm;

pub use cache::CachedEmbedder;
pub use embedding::{cosine_distance, Embedder, Embedding, TrigramEmbedder, TRIGRAM_DIMENSION};
pub use http::{HttpEmbedder, HttpLlm, ProviderConfig, Secret};
pub use llm::{Llm, SeededNoiseLlm, TemplateLlm};
