//! Content-addressed embedding cache, in memory and optionally on disk.
//!
//! On-disk layout: `<root>/<provider id>/<sha256(text)>.json`, one JSON
//! array of floats per file.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::embedding::{check_batch, Embedder, Embedding};
use crate::error::ProviderError;

pub struct CachedEmbedder<E> {
    inner: E,
    memory: Mutex<HashMap<String, Embedding>>,
    disk: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn in_memory(inner: E) -> Self {
        Self {
            inner,
            memory: Mutex::new(HashMap::new()),
            disk: None,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn on_disk(inner: E, root: impl Into<PathBuf>) -> Self {
        Self {
            disk: Some(root.into()),
            ..Self::in_memory(inner)
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn text_hash(text: &str) -> String {
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn disk_path(&self, root: &Path, hash: &str) -> PathBuf {
        let provider: String = self
            .inner
            .id()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect();
        root.join(provider).join(format!("{hash}.json"))
    }

    fn load_disk(&self, hash: &str) -> Option<Embedding> {
        let path = self.disk_path(self.disk.as_deref()?, hash);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<Embedding>(&bytes) {
            Ok(e) => Some(e),
            Err(err) => {
                log::warn!("ignoring corrupt cache entry {}: {err}", path.display());
                None
            }
        }
    }

    fn store_disk(&self, hash: &str, e: &Embedding) -> Result<(), ProviderError> {
        let Some(root) = self.disk.as_deref() else {
            return Ok(());
        };
        let path = self.disk_path(root, hash);
        let cache_err = |err: std::io::Error| ProviderError::Cache {
            path: path.display().to_string(),
            message: err.to_string(),
        };
        fs::create_dir_all(path.parent().expect("cache path has a parent")).map_err(cache_err)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(e).expect("embedding serializes")).map_err(cache_err)?;
        fs::rename(&tmp, &path).map_err(cache_err)
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        let hashes: Vec<String> = texts.iter().map(|t| Self::text_hash(t)).collect();
        let mut out: Vec<Option<Embedding>> = vec![None; texts.len()];
        {
            let mut memory = self.memory.lock().expect("cache lock");
            for (i, h) in hashes.iter().enumerate() {
                if let Some(e) = memory.get(h) {
                    out[i] = Some(e.clone());
                } else if let Some(e) = self.load_disk(h) {
                    memory.insert(h.clone(), e.clone());
                    out[i] = Some(e);
                }
            }
        }

        // Each distinct missing text is embedded once.
        let mut pending: Vec<usize> = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, slot) in out.iter().enumerate() {
            if slot.is_none() && !seen.contains_key(hashes[i].as_str()) {
                seen.insert(hashes[i].as_str(), pending.len());
                pending.push(i);
            }
        }
        self.hits
            .fetch_add(texts.len() - out.iter().filter(|o| o.is_none()).count(), Ordering::Relaxed);

        if !pending.is_empty() {
            let batch: Vec<String> = pending.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed(&batch)?;
            check_batch(&batch, &fresh)?;
            self.misses.fetch_add(fresh.len(), Ordering::Relaxed);
            let mut memory = self.memory.lock().expect("cache lock");
            for (&i, e) in pending.iter().zip(&fresh) {
                self.store_disk(&hashes[i], e)?;
                memory.insert(hashes[i].clone(), e.clone());
            }
            for (i, slot) in out.iter_mut().enumerate() {
                if slot.is_none() {
                    *slot = Some(fresh[seen[hashes[i].as_str()]].clone());
                }
            }
        }

        let out: Vec<Embedding> = out.into_iter().map(|e| e.expect("filled")).collect();
        check_batch(texts, &out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::TrigramEmbedder;

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn repeated_text_is_a_cache_hit() {
        let cache = CachedEmbedder::in_memory(TrigramEmbedder);
        let first = cache.embed(&strings(&["alpha", "beta", "alpha"])).unwrap();
        assert_eq!(cache.misses(), 2);
        let second = cache.embed(&strings(&["beta"])).unwrap();
        assert_eq!(cache.hits(), 1);
        assert_eq!(first[1], second[0]);
        assert_eq!(first[0], first[2]);
    }

    #[test]
    fn disk_cache_survives_a_new_instance() {
        let dir = tempfile::tempdir().unwrap();
        let a = CachedEmbedder::on_disk(TrigramEmbedder, dir.path());
        let direct = TrigramEmbedder.embed(&strings(&["gamma ray"])).unwrap();
        a.embed(&strings(&["gamma ray"])).unwrap();
        let b = CachedEmbedder::on_disk(TrigramEmbedder, dir.path());
        let got = b.embed(&strings(&["gamma ray"])).unwrap();
        assert_eq!(b.misses(), 0);
        assert_eq!(b.hits(), 1);
        for (x, y) in got[0].values().iter().zip(direct[0].values()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(dir.path().join("trigram_512").is_dir());
    }
}
