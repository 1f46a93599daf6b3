use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::ProviderError;
use crate::model::shortest_label;

/// Language-model backend used to write and merge code definitions.
pub trait Llm: Send + Sync {
    fn id(&self) -> String;

    /// A single-paragraph definition for a code. `examples` holds example
    /// texts and may be empty.
    fn generate_definition(&self, label: &str, examples: &[String]) -> Result<String, ProviderError>;

    /// One (label, definition) for a group of at least two merged codes.
    fn generate_merged_code(
        &self,
        members: &[(String, String)],
    ) -> Result<(String, String), ProviderError>;

    /// Free-form completion, used for generating coder variants.
    fn complete(&self, _prompt: &str) -> Result<String, ProviderError> {
        Err(ProviderError::Unsupported {
            provider: self.id(),
            operation: "free-form completion".into(),
        })
    }
}

impl<T: Llm + ?Sized> Llm for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn generate_definition(&self, label: &str, examples: &[String]) -> Result<String, ProviderError> {
        (**self).generate_definition(label, examples)
    }
    fn generate_merged_code(
        &self,
        members: &[(String, String)],
    ) -> Result<(String, String), ProviderError> {
        (**self).generate_merged_code(members)
    }
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        (**self).complete(prompt)
    }
}

impl<T: Llm + ?Sized> Llm for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn generate_definition(&self, label: &str, examples: &[String]) -> Result<String, ProviderError> {
        (**self).generate_definition(label, examples)
    }
    fn generate_merged_code(
        &self,
        members: &[(String, String)],
    ) -> Result<(String, String), ProviderError> {
        (**self).generate_merged_code(members)
    }
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        (**self).complete(prompt)
    }
}

fn sorted_members(members: &[(String, String)]) -> Vec<(String, String)> {
    let mut sorted = members.to_vec();
    sorted.sort();
    sorted
}

fn require_members(provider: &str, members: &[(String, String)]) -> Result<(), ProviderError> {
    if members.len() < 2 {
        return Err(ProviderError::BadResponse {
            provider: provider.into(),
            message: format!("merging needs at least 2 members, got {}", members.len()),
        });
    }
    Ok(())
}

/// Deterministic template model.
///
/// * definition: `"<label>: <example>; <example>"`, or the label alone
///   when there are no examples
/// * merged label: the shortest member label (ties lexicographic)
/// * merged definition: member definitions in sorted order, space-joined
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateLlm;

impl Llm for TemplateLlm {
    fn id(&self) -> String {
        "template".into()
    }

    fn generate_definition(&self, label: &str, examples: &[String]) -> Result<String, ProviderError> {
        let label = label.trim();
        if label.is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let examples: Vec<&str> = examples
            .iter()
            .map(|e| e.trim())
            .filter(|e| !e.is_empty())
            .collect();
        if examples.is_empty() {
            Ok(label.to_string())
        } else {
            Ok(format!("{label}: {}", examples.join("; ")))
        }
    }

    fn generate_merged_code(
        &self,
        members: &[(String, String)],
    ) -> Result<(String, String), ProviderError> {
        require_members("template", members)?;
        let sorted = sorted_members(members);
        let label = shortest_label(sorted.iter().map(|(l, _)| l.as_str()))
            .expect("non-empty")
            .to_string();
        let definition = sorted
            .iter()
            .map(|(_, d)| d.trim())
            .filter(|d| !d.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        Ok((label, definition))
    }
}

/// Template model with seeded noise on the merged-label choice: with
/// probability `noise` a uniformly drawn member label replaces the shortest
/// one. The draw is keyed by (seed, sorted members), so outputs do not
/// depend on call order.
#[derive(Debug, Clone, Copy)]
pub struct SeededNoiseLlm {
    pub seed: u64,
    pub noise: f64,
}

impl SeededNoiseLlm {
    pub fn new(seed: u64, noise: f64) -> Self {
        Self {
            seed,
            noise: noise.clamp(0.0, 1.0),
        }
    }

    fn rng_for(&self, members: &[(String, String)]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for (l, d) in members {
            h.update(l.as_bytes());
            h.update([0]);
            h.update(d.as_bytes());
            h.update([1]);
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

impl Llm for SeededNoiseLlm {
    fn id(&self) -> String {
        format!("seeded-noise/{}", self.noise)
    }

    fn generate_definition(&self, label: &str, examples: &[String]) -> Result<String, ProviderError> {
        TemplateLlm.generate_definition(label, examples)
    }

    fn generate_merged_code(
        &self,
        members: &[(String, String)],
    ) -> Result<(String, String), ProviderError> {
        let (label, definition) = TemplateLlm.generate_merged_code(members)?;
        let sorted = sorted_members(members);
        let mut rng = self.rng_for(&sorted);
        if rng.random_bool(self.noise) {
            let pick = rng.random_range(0..sorted.len());
            return Ok((sorted[pick].0.clone(), definition));
        }
        Ok((label, definition))
    }
}

pub(crate) fn definition_prompt(label: &str, examples: &[String]) -> String {
    let mut prompt = String::from(
        "You are helping with inductive qualitative coding. Write a one-sentence \
         definition of the qualitative code below, describing the concept it captures. \
         Reply with the definition only, as a single paragraph.\n\n",
    );
    prompt.push_str(&format!("Code label: {label}\n"));
    if examples.is_empty() {
        prompt.push_str("Examples: none; rely on the label alone.\n");
    } else {
        prompt.push_str("Examples of data this code was applied to:\n");
        for e in examples {
            prompt.push_str(&format!("- {}\n", e.replace('\n', " ")));
        }
    }
    prompt
}

pub(crate) fn merge_prompt(members: &[(String, String)]) -> String {
    let mut prompt = String::from(
        "You are helping with inductive qualitative coding. The following codes were \
         judged to describe the same concept. Write one concise label and a one-sentence \
         definition for the merged code. Reply only with a JSON object of the form \
         {\"label\": \"...\", \"definition\": \"...\"}.\n\nCodes:\n",
    );
    for (l, d) in sorted_members(members) {
        prompt.push_str(&format!("- {l}: {}\n", d.replace('\n', " ")));
    }
    prompt
}

/// Extracts a (label, definition) pair from a model reply: a JSON object
/// anywhere in the text, or `Label:` / `Definition:` lines.
pub(crate) fn parse_merged_reply(reply: &str) -> Option<(String, String)> {
    if let (Some(start), Some(end)) = (reply.find('{'), reply.rfind('}')) {
        if start < end {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&reply[start..=end]) {
                let label = v.get("label").and_then(|l| l.as_str()).map(str::trim);
                let definition = v.get("definition").and_then(|d| d.as_str()).map(str::trim);
                if let (Some(l), Some(d)) = (label, definition) {
                    if !l.is_empty() && !d.is_empty() {
                        return Some((l.to_string(), single_paragraph(d)));
                    }
                }
            }
        }
    }
    let mut label = None;
    let mut definition = None;
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['*', '#', '-', ' ']);
        let lower = line.to_lowercase();
        if lower.starts_with("label:") {
            label = Some(line["label:".len()..].trim().to_string());
        } else if lower.starts_with("definition:") {
            definition = Some(line["definition:".len()..].trim().to_string());
        }
    }
    match (label, definition) {
        (Some(l), Some(d)) if !l.is_empty() && !d.is_empty() => Some((l, d)),
        _ => None,
    }
}

pub(crate) fn single_paragraph(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(l: &str, d: &str) -> (String, String) {
        (l.to_string(), d.to_string())
    }

    #[test]
    fn template_definition_joins_examples() {
        let d = TemplateLlm
            .generate_definition("Community Growth", &["more teachers joined".into()])
            .unwrap();
        assert_eq!(d, "Community Growth: more teachers joined");
        assert_eq!(TemplateLlm.generate_definition("X", &[]).unwrap(), "X");
    }

    #[test]
    fn template_merge_takes_shortest_label_and_is_order_free() {
        let a = [
            pair("User Feedback", "d1"),
            pair("Feedback from User", "d2"),
        ];
        let b = [a[1].clone(), a[0].clone()];
        let out = TemplateLlm.generate_merged_code(&a).unwrap();
        assert_eq!(out, ("User Feedback".to_string(), "d2 d1".to_string()));
        assert_eq!(out, TemplateLlm.generate_merged_code(&b).unwrap());
        assert!(TemplateLlm.generate_merged_code(&a[..1]).is_err());
    }

    #[test]
    fn seeded_noise_is_reproducible_and_varies_by_seed() {
        let members: Vec<(String, String)> = (0..6)
            .map(|i| pair(&format!("label number {i}"), &format!("d{i}")))
            .collect();
        let picks: Vec<String> = (0..40)
            .map(|s| SeededNoiseLlm::new(s, 0.5).generate_merged_code(&members).unwrap().0)
            .collect();
        let again: Vec<String> = (0..40)
            .map(|s| SeededNoiseLlm::new(s, 0.5).generate_merged_code(&members).unwrap().0)
            .collect();
        assert_eq!(picks, again);
        assert!(picks.iter().any(|l| l != "label number 0"));
        let quiet = SeededNoiseLlm::new(3, 0.0).generate_merged_code(&members).unwrap();
        assert_eq!(quiet, TemplateLlm.generate_merged_code(&members).unwrap());
    }

    #[test]
    fn merged_reply_parsing() {
        assert_eq!(
            parse_merged_reply("Sure!\n{\"label\": \"Growth\", \"definition\": \"People\\njoin.\"}"),
            Some(pair("Growth", "People join."))
        );
        assert_eq!(
            parse_merged_reply("Label: Growth\nDefinition: people join"),
            Some(pair("Growth", "people join"))
        );
        assert_eq!(parse_merged_reply("no idea"), None);
    }

    #[test]
    fn prompts_mention_inputs() {
        let p = definition_prompt("X", &[]);
        assert!(p.contains("Code label: X") && p.contains("rely on the label"));
        let m = merge_prompt(&[pair("b", "db"), pair("a", "da")]);
        assert!(m.find("- a: da").unwrap() < m.find("- b: db").unwrap());
    }
}
