use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::model::Condition;

/// How the example-difference term `e` of the first penalty is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyFormula {
    /// `e = 1 - |A ∩ B| / |A ∪ B|`: codes applied to different data are
    /// pushed apart.
    #[default]
    Dissimilarity,
    /// `e = |A ∩ B| / |A ∪ B|`, the overlap itself.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Cosine-distance cut for stages 2 and 3.
    pub strict_threshold: f64,
    pub upper_threshold: f64,
    pub lower_threshold: f64,
    /// Coefficient shared by both stage-4 penalties.
    pub penalty: f64,
    pub penalty_formula: PenaltyFormula,
    pub max_stage4_iterations: u32,
    /// Upper edge of the neighbor band for conditions 1 to 3.
    pub neighbor_band_upper: f64,
    pub condition: Condition,
    pub linkage: Linkage,
    /// Examples passed to the model per definition request.
    pub max_examples_per_prompt: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self::with_thresholds(0.32, 0.32, 0.55)
    }
}

impl MergeConfig {
    /// Config with the given thresholds; penalty defaults to
    /// `upper - lower` and the neighbor band to `upper`.
    pub fn with_thresholds(strict: f64, lower: f64, upper: f64) -> Self {
        Self {
            strict_threshold: strict,
            upper_threshold: upper,
            lower_threshold: lower,
            penalty: upper - lower,
            penalty_formula: PenaltyFormula::default(),
            max_stage4_iterations: 10,
            neighbor_band_upper: upper,
            condition: Condition::C4,
            linkage: Linkage::Average,
            max_examples_per_prompt: 20,
        }
    }

    pub fn at(mut self, condition: Condition) -> Self {
        self.condition = condition;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (lower, strict, upper) = (
            self.lower_threshold,
            self.strict_threshold,
            self.upper_threshold,
        );
        let ordered = 0.0 < lower && lower <= strict && strict <= upper && upper < 2.0;
        if !ordered || ![lower, strict, upper].iter().all(|v| v.is_finite()) {
            return Err(ConfigError::Thresholds {
                lower,
                strict,
                upper,
            });
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return Err(ConfigError::Penalty(self.penalty));
        }
        if self.max_stage4_iterations < 1 {
            return Err(ConfigError::Iterations);
        }
        if !(self.neighbor_band_upper >= strict && self.neighbor_band_upper < 2.0) {
            return Err(ConfigError::NeighborBand {
                band: self.neighbor_band_upper,
            });
        }
        if self.max_examples_per_prompt == 0 {
            return Err(ConfigError::Other("max_examples_per_prompt must be >= 1".into()));
        }
        Ok(())
    }

    /// Hash of the configuration and the provider identities in use.
    pub fn fingerprint(&self, embedder_id: &str, llm_id: Option<&str>) -> String {
        let doc = serde_json::json!({
            "config": self,
            "embedder": embedder_id,
            "llm": llm_id,
        });
        let digest = Sha256::digest(doc.to_string().as_bytes());
        hex::encode(&digest[..16])
    }
}
