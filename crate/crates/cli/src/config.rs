//! Run-config file. Relative paths resolve against the file's directory.
//!
//! ```toml
//! dataset = "dataset.json"
//! codebooks = ["codebooks/human-1.json", "codebooks/machine-1.json"]
//! output_dir = "out"
//!
//! [merge]
//! strict_threshold = 0.32
//!
//! [providers.embedding]
//! kind = "trigram"
//!
//! [providers.llm]
//! kind = "http"
//! base_url = "http://localhost:11434/v1"
//! model = "llama3"
//! auth_env = "LLM_API_KEY"
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use codespace_core::harness::{RunPlan, Substitution};
use codespace_core::merge::{MergeConfig, PenaltyFormula};
use codespace_core::model::Condition;
use codespace_core::providers::{
    CachedEmbedder, Embedder, HttpEmbedder, HttpLlm, Llm, ProviderConfig, SeededNoiseLlm, Secret,
    TemplateLlm, TrigramEmbedder,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: Option<PathBuf>,
    /// Irrelevant data for hallucinating variants.
    pub alternate_dataset: Option<PathBuf>,
    #[serde(default)]
    pub codebooks: Vec<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Unknown example ids fail ingestion instead of warning.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub merge: MergeBlock,
    #[serde(default)]
    pub providers: ProvidersBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeBlock {
    pub strict_threshold: Option<f64>,
    pub lower_threshold: Option<f64>,
    pub upper_threshold: Option<f64>,
    pub penalty: Option<f64>,
    pub penalty_formula: Option<PenaltyFormula>,
    pub max_stage4_iterations: Option<u32>,
    pub neighbor_band_upper: Option<f64>,
    pub max_examples_per_prompt: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersBlock {
    pub embedding: Option<ProviderBlock<EmbeddingKind>>,
    pub llm: Option<ProviderBlock<LlmKind>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    Trigram,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LlmKind {
    Template,
    SeededNoise,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderBlock<K> {
    pub kind: K,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Name of the environment variable holding the token.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// On-disk embedding cache; embedding block only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Rate at which `seeded-noise` redraws a merged label; llm block only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub conditions: Option<Vec<Condition>>,
    pub repeats: Option<u32>,
    pub seed: Option<u64>,
    /// `ai`, `human`, `all` or `name=a,b`.
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default)]
    pub substitutions: Vec<Substitution>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub strict_threshold: Option<f64>,
    pub lower_threshold: Option<f64>,
    pub upper_threshold: Option<f64>,
    pub penalty: Option<f64>,
}

/// A loaded config with paths made absolute and overrides applied.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub path: PathBuf,
    pub file: RunConfigFile,
    pub merge: MergeConfig,
}

impl Resolved {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut file: RunConfigFile =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        file.dataset.as_mut().map(abs);
        file.alternate_dataset.as_mut().map(abs);
        file.codebooks.iter_mut().for_each(abs);
        file.output_dir.as_mut().map(abs);
        if let Some(e) = file.providers.embedding.as_mut() {
            e.cache_dir.as_mut().map(abs);
        }
        if let Some(dir) = &overrides.output_dir {
            file.output_dir = Some(dir.clone());
        }

        let inputs = file.dataset.iter().chain(&file.alternate_dataset).chain(&file.codebooks);
        if let Some(missing) = inputs.into_iter().find(|p| !p.exists()) {
            return Err(CliError::config(format!("input file {} does not exist", missing.display())));
        }

        let merge = merge_config(&file.merge, overrides)?;
        Ok(Resolved {
            path: path.to_path_buf(),
            file,
            merge,
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.file
            .output_dir
            .clone()
            .unwrap_or_else(|| self.path.parent().unwrap_or(Path::new(".")).join("out"))
    }

    pub fn run_plan(&self) -> RunPlan {
        let x = &self.file.experiment;
        let defaults = RunPlan::default();
        RunPlan {
            conditions: x.conditions.clone().unwrap_or(defaults.conditions),
            repeats: x.repeats.unwrap_or(defaults.repeats),
            seed: x.seed.unwrap_or(defaults.seed),
            groups: Vec::new(),
            substitutions: x.substitutions.clone(),
        }
    }

    /// Builds the embedder, wrapped in the on-disk cache when configured.
    pub fn embedder(&self) -> Result<Box<dyn Embedder>, CliError> {
        let block = self
            .file
            .providers
            .embedding
            .as_ref()
            .ok_or_else(|| CliError::config("[providers.embedding] block is missing"))?;
        if block.noise.is_some() {
            return Err(CliError::config("providers.embedding: field `noise` applies to the llm block only"));
        }
        let inner: Box<dyn Embedder> = match block.kind {
            EmbeddingKind::Trigram => Box::new(TrigramEmbedder),
            EmbeddingKind::Http => Box::new(
                HttpEmbedder::new(http_config(block, "providers.embedding")?)
                    .map_err(|e| block_error("providers.embedding", e))?,
            ),
        };
        Ok(match &block.cache_dir {
            Some(dir) => Box::new(CachedEmbedder::on_disk(inner, dir.clone())),
            None => inner,
        })
    }

    /// Builds the language model; `seed` drives the `seeded-noise` kind.
    pub fn llm(&self, seed: u64) -> Result<Box<dyn Llm>, CliError> {
        let block = self
            .file
            .providers
            .llm
            .as_ref()
            .ok_or_else(|| CliError::config("[providers.llm] block is missing; conditions c3 and c4 need a language model"))?;
        if block.cache_dir.is_some() {
            return Err(CliError::config("providers.llm: field `cache_dir` applies to the embedding block only"));
        }
        Ok(match block.kind {
            LlmKind::Template => Box::new(TemplateLlm),
            LlmKind::SeededNoise => {
                let noise = block.noise.unwrap_or(0.1);
                if !(0.0..=1.0).contains(&noise) {
                    return Err(CliError::config(format!("providers.llm: noise {noise} outside [0, 1]")));
                }
                Box::new(SeededNoiseLlm::new(seed, noise))
            }
            LlmKind::Http => Box::new(
                HttpLlm::new(http_config(block, "providers.llm")?)
                    .map_err(|e| block_error("providers.llm", e))?,
            ),
        })
    }

    /// Provider description for plans, without building anything.
    pub fn provider_summary(&self, needs_llm: bool) -> serde_json::Value {
        serde_json::json!({
            "embedding": self.file.providers.embedding,
            "llm": if needs_llm { serde_json::to_value(&self.file.providers.llm).unwrap_or_default() } else { serde_json::Value::Null },
        })
    }
}

fn merge_config(block: &MergeBlock, o: &Overrides) -> Result<MergeConfig, CliError> {
    let d = MergeConfig::default();
    let strict = o.strict_threshold.or(block.strict_threshold).unwrap_or(d.strict_threshold);
    let lower = o.lower_threshold.or(block.lower_threshold).unwrap_or(d.lower_threshold);
    let upper = o.upper_threshold.or(block.upper_threshold).unwrap_or(d.upper_threshold);
    let mut cfg = MergeConfig::with_thresholds(strict, lower, upper);
    if let Some(p) = o.penalty.or(block.penalty) {
        cfg.penalty = p;
    }
    if let Some(f) = block.penalty_formula {
        cfg.penalty_formula = f;
    }
    if let Some(n) = block.max_stage4_iterations {
        cfg.max_stage4_iterations = n;
    }
    if let Some(b) = block.neighbor_band_upper {
        cfg.neighbor_band_upper = b;
    }
    if let Some(n) = block.max_examples_per_prompt {
        cfg.max_examples_per_prompt = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn block_error(block: &str, e: codespace_core::ProviderError) -> CliError {
    let mut err = CliError::from(e);
    err.message = format!("{block}: {}", err.message);
    err
}

fn http_config<K>(h: &ProviderBlock<K>, block: &str) -> Result<ProviderConfig, CliError> {
    let need = |v: &Option<String>, field: &str| {
        v.clone()
            .ok_or_else(|| CliError::config(format!("{block}: field `{field}` is required for kind \"http\"")))
    };
    let mut cfg = ProviderConfig::new(need(&h.base_url, "base_url")?, need(&h.model, "model")?);
    if let Some(var) = &h.auth_env {
        match std::env::var(var) {
            Ok(token) if !token.trim().is_empty() => cfg.auth_token = Some(Secret::new(token)),
            _ => {
                return Err(CliError::provider(format!(
                    "{block}: credentials missing, environment variable `{var}` is not set"
                )))
            }
        }
    }
    if let Some(s) = h.timeout_secs {
        cfg.timeout = Duration::from_secs(s);
    }
    if let Some(n) = h.max_retries {
        cfg.max_retries = n;
    }
    if let Some(n) = h.batch_size {
        cfg.batch_size = n;
    }
    if let Some(t) = h.temperature {
        cfg.temperature = t;
    }
    cfg.validate().map_err(|e| block_error(block, e))?;
    Ok(cfg)
}
