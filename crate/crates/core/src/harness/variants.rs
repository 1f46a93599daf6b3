//! Edge-case coder variants: flooding, hallucinating and both combined.
//!
//! Synthetic generators run offline. The LLM generator asks a model to code
//! a dataset with many codes per item; its prompt is our own reconstruction
//! of an "excessive number of codes per item" instruction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::error::DataError;
use crate::model::{normalize_label, Code, Codebook, Dataset};
use crate::providers::Llm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Flooding,
    Hallucinating,
    Combined,
}

#[derive(Debug, Clone, Copy)]
pub struct VariantOptions<'a> {
    /// Extra codes per base code when flooding.
    pub k: usize,
    pub seed: u64,
    /// Irrelevant data a hallucinating coder works from.
    pub alternate: Option<&'a Dataset>,
}

/// Qualifiers that turn a code into a narrower one.
const QUALIFIERS: [&str; 12] = [
    "in group projects",
    "during live sessions",
    "with screenshots",
    "among newcomers",
    "after updates",
    "on mobile devices",
    "in long threads",
    "by experienced members",
    "in private messages",
    "late at night",
    "around deadlines",
    "across languages",
];

/// Syllables for pseudo-word labels; none of them occur in ordinary
/// English code labels.
const SYLLABLES: [&str; 16] = [
    "zor", "vek", "quil", "mip", "draz", "lox", "fyr", "snu", "brax", "kelv", "voo", "trizz",
    "zan", "pleg", "gux", "wob",
];

fn rng(seed: u64, salt: &str) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    for (i, b) in salt.bytes().enumerate() {
        bytes[8 + i % 24] ^= b;
    }
    ChaCha8Rng::from_seed(bytes)
}

fn qualifier(j: usize) -> String {
    let q = QUALIFIERS[j % QUALIFIERS.len()];
    match j / QUALIFIERS.len() {
        0 => q.to_string(),
        round => format!("{q} ({})", round + 1),
    }
}

fn toggle_plural(word: &str) -> String {
    match word.strip_suffix('s') {
        Some(stem) if !stem.is_empty() && !word.ends_with("ss") => stem.to_string(),
        _ => format!("{word}s"),
    }
}

/// Rewordings of a label that stay close in character-trigram space.
fn near_duplicates(label: &str) -> Vec<String> {
    let words: Vec<&str> = label.split_whitespace().collect();
    let mut out = Vec::new();
    if let Some((last, head)) = words.split_last() {
        let mut w: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        w.push(toggle_plural(last));
        out.push(w.join(" "));
    }
    if words.len() > 1 {
        let mut w: Vec<String> = words.iter().map(|s| s.to_string()).collect();
        w[0] = toggle_plural(words[0]);
        out.push(w.join(" "));
    }
    out.push(format!("{label} in general"));
    out.push(format!("general {label}"));
    out.push(format!("{label} overall"));
    out
}

/// Base codes plus `k` flood codes per base code, alternating between
/// near-duplicates (a light rewording applied to all the parent's
/// examples) and narrower codes (the parent label with a qualifier,
/// applied to one of the parent's examples).
pub fn flood_synthetic(base: &Codebook, k: usize, seed: u64) -> Result<Codebook, DataError> {
    if base.is_empty() {
        return Err(DataError::EmptyCodebook(base.coder_id.clone()));
    }
    let mut order: Vec<usize> = (0..QUALIFIERS.len()).collect();
    let mut seen: BTreeSet<String> = base.codes.iter().map(|c| normalize_label(&c.label)).collect();
    let mut out = base.clone();
    for (i, code) in base.codes.iter().enumerate() {
        order.shuffle(&mut rng(seed, &format!("flood/{i}")));
        let examples: Vec<&String> = code.examples.iter().collect();
        let mut rewordings = near_duplicates(&code.label).into_iter();
        let mut narrow = 0usize;
        for m in 0..k {
            let reworded = if m % 2 == 0 {
                rewordings.by_ref().find(|l| seen.insert(normalize_label(l)))
            } else {
                None
            };
            let (label, examples) = match reworded {
                Some(l) => (l, code.examples.clone()),
                None => {
                    let label = loop {
                        let j = order[narrow % order.len()] + (narrow / order.len()) * order.len();
                        narrow += 1;
                        let l = format!("{} {}", code.label, qualifier(j));
                        if seen.insert(normalize_label(&l)) {
                            break l;
                        }
                    };
                    let one = examples
                        .get((narrow - 1) % examples.len().max(1))
                        .map(|e| (*e).clone())
                        .into_iter()
                        .collect();
                    (label, one)
                }
            };
            out.codes.push(Code {
                label,
                definition: None,
                examples,
                owner: base.coder_id.clone(),
            });
        }
    }
    Ok(out)
}

fn pseudo_label(rng: &mut ChaCha8Rng) -> String {
    let mut word = |n: usize| -> String {
        (0..n)
            .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
            .collect::<String>()
    };
    let first = word(2);
    let second = word(3);
    let mut chars = first.chars();
    let head = chars.next().map(|c| c.to_uppercase().collect::<String>()).unwrap_or_default();
    format!("{head}{} {second}", chars.as_str())
}

/// As many codes as the base, with pseudo-word labels and examples drawn
/// from the alternate dataset only.
pub fn hallucinate_synthetic(
    base: &Codebook,
    alternate: &Dataset,
    seed: u64,
) -> Result<Codebook, DataError> {
    if base.is_empty() {
        return Err(DataError::EmptyCodebook(base.coder_id.clone()));
    }
    if alternate.is_empty() {
        return Err(DataError::Invariant("alternate dataset is empty".into()));
    }
    let mut r = rng(seed, "hallucinate");
    let ids: Vec<&str> = alternate.segments().iter().map(|s| s.id.as_str()).collect();
    let mut seen = BTreeSet::new();
    let mut codes = Vec::with_capacity(base.len());
    for code in &base.codes {
        let label = loop {
            let l = pseudo_label(&mut r);
            if seen.insert(normalize_label(&l)) {
                break l;
            }
        };
        let n = code.examples.len().clamp(1, ids.len());
        let examples = ids
            .choose_multiple(&mut r, n)
            .map(|s| s.to_string())
            .collect();
        codes.push(Code {
            label,
            definition: None,
            examples,
            owner: base.coder_id.clone(),
        });
    }
    Ok(Codebook {
        coder_id: base.coder_id.clone(),
        kind: base.kind,
        codes,
    })
}

/// Synthetic variant of `base`. The combined variant floods the
/// hallucinated codebook.
pub fn make_variant(
    base: &Codebook,
    kind: VariantKind,
    opts: &VariantOptions<'_>,
) -> Result<Codebook, HarnessError> {
    let alternate = || {
        opts.alternate
            .ok_or_else(|| HarnessError::MissingAlternateDataset(base.coder_id.clone()))
    };
    Ok(match kind {
        VariantKind::Flooding => flood_synthetic(base, opts.k, opts.seed)?,
        VariantKind::Hallucinating => hallucinate_synthetic(base, alternate()?, opts.seed)?,
        VariantKind::Combined => {
            let h = hallucinate_synthetic(base, alternate()?, opts.seed)?;
            flood_synthetic(&h, opts.k, opts.seed)?
        }
    })
}

/// Prompt asking for many fine-grained codes for one data item.
pub fn flooding_prompt(item: &str, codes_per_item: usize) -> String {
    format!(
        "You are performing inductive qualitative coding. Generate an excessive number of \
         codes for the data item below: at least {codes_per_item} distinct, fine-grained codes, \
         including near-duplicates that differ only slightly in wording. Reply with one code \
         label per line and nothing else.\n\nData item: {}\n",
        item.replace('\n', " ")
    )
}

fn parse_labels(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(|l| {
            l.trim()
                .trim_start_matches(|c: char| c == '-' || c == '*' || c.is_ascii_digit() || c == '.' || c == ')')
                .trim()
                .trim_matches('"')
                .to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Codes every item of `dataset` with the flooding prompt.
pub fn code_dataset_with_llm(
    coder_id: &str,
    kind: crate::model::CoderKind,
    dataset: &Dataset,
    llm: &dyn Llm,
    codes_per_item: usize,
) -> Result<Codebook, HarnessError> {
    let mut by_label: BTreeMap<String, usize> = BTreeMap::new();
    let mut codes: Vec<Code> = Vec::new();
    for seg in dataset.segments() {
        let reply = llm.complete(&flooding_prompt(&seg.text, codes_per_item))?;
        for label in parse_labels(&reply) {
            let key = normalize_label(&label);
            let i = *by_label.entry(key).or_insert_with(|| {
                codes.push(Code {
                    label,
                    definition: None,
                    examples: BTreeSet::new(),
                    owner: coder_id.to_string(),
                });
                codes.len() - 1
            });
            codes[i].examples.insert(seg.id.clone());
        }
    }
    if codes.is_empty() {
        return Err(DataError::EmptyCodebook(coder_id.to_string()).into());
    }
    Ok(Codebook {
        coder_id: coder_id.to_string(),
        kind,
        codes,
    })
}

/// Variant produced by a language model: flooding adds the model's codes
/// for the real dataset to the base, hallucinating codes the alternate
/// dataset instead, combined does both on the alternate dataset.
pub fn make_variant_with_llm(
    base: &Codebook,
    kind: VariantKind,
    dataset: &Dataset,
    alternate: Option<&Dataset>,
    llm: &dyn Llm,
    codes_per_item: usize,
) -> Result<Codebook, HarnessError> {
    let alt = || alternate.ok_or_else(|| HarnessError::MissingAlternateDataset(base.coder_id.clone()));
    match kind {
        VariantKind::Flooding => {
            let extra = code_dataset_with_llm(&base.coder_id, base.kind, dataset, llm, codes_per_item)?;
            Ok(union_collapsing(base, &extra))
        }
        VariantKind::Hallucinating => {
            code_dataset_with_llm(&base.coder_id, base.kind, alt()?, llm, 1)
        }
        VariantKind::Combined => {
            code_dataset_with_llm(&base.coder_id, base.kind, alt()?, llm, codes_per_item)
        }
    }
}

/// `a` followed by the codes of `b`, collapsing equal normalized labels.
fn union_collapsing(a: &Codebook, b: &Codebook) -> Codebook {
    let mut out = a.clone();
    let mut by_label: BTreeMap<String, usize> = out
        .codes
        .iter()
        .enumerate()
        .map(|(i, c)| (normalize_label(&c.label), i))
        .collect();
    for c in &b.codes {
        match by_label.get(&normalize_label(&c.label)) {
            Some(&i) => out.codes[i].examples.extend(c.examples.iter().cloned()),
            None => {
                by_label.insert(normalize_label(&c.label), out.codes.len());
                out.codes.push(Code {
                    owner: a.coder_id.clone(),
                    ..c.clone()
                });
            }
        }
    }
    out
}
