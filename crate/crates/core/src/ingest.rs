//! Codebook file reading and normalization.
//!
//! File format (UTF-8 JSON):
//!
//! ```json
//! {"coder_id": "h1", "kind": "human",
//!  "codes": [{"label": "User Feedback", "definition": null, "examples": ["m1"]}]}
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::model::{normalize_label, Code, Codebook, CoderKind, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FileKind {
    Human,
    Machine,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookFile {
    coder_id: String,
    kind: FileKind,
    codes: Vec<CodeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodeEntry {
    label: String,
    #[serde(default)]
    definition: Option<String>,
    #[serde(default)]
    examples: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions<'a> {
    pub dataset: Option<&'a Dataset>,
    /// Unknown example ids become errors instead of warnings.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub codebook: Codebook,
    pub warnings: Vec<String>,
}

/// Parses and normalizes a codebook file.
///
/// Codes whose normalized labels coincide are collapsed into the first
/// occurrence: examples are unioned and the longer definition is kept.
pub fn ingest_codebook(raw: &[u8], opts: IngestOptions<'_>) -> Result<Ingested, DataError> {
    let file: CodebookFile = serde_json::from_slice(raw).map_err(DataError::from_json)?;
    let coder_id = file.coder_id.trim().to_string();
    if coder_id.is_empty() {
        return Err(DataError::Parse {
            line: 0,
            column: 0,
            message: "field `coder_id` is empty".into(),
        });
    }
    if file.codes.is_empty() {
        return Err(DataError::EmptyCodebook(coder_id));
    }

    let mut warnings = Vec::new();
    let mut codes: Vec<Code> = Vec::with_capacity(file.codes.len());
    let mut by_label: BTreeMap<String, usize> = BTreeMap::new();

    for (index, entry) in file.codes.into_iter().enumerate() {
        let label = entry.label.trim().to_string();
        if label.is_empty() {
            return Err(DataError::EmptyLabel {
                coder: coder_id.clone(),
                index,
            });
        }
        let definition = entry
            .definition
            .map(|d| d.trim().to_string())
            .filter(|d| !d.is_empty());
        let mut examples = BTreeSet::new();
        for id in entry.examples {
            if let Some(ds) = opts.dataset {
                if !ds.contains(&id) {
                    if opts.strict {
                        return Err(DataError::UnknownExample {
                            coder: coder_id.clone(),
                            label,
                            id,
                        });
                    }
                    warnings.push(format!(
                        "code `{label}` of `{coder_id}` references unknown example id `{id}`"
                    ));
                }
            }
            examples.insert(id);
        }

        match by_label.get(&normalize_label(&label)) {
            Some(&i) => {
                let existing = &mut codes[i];
                existing.examples.extend(examples);
                let longer = match (&existing.definition, &definition) {
                    (Some(old), Some(new)) => new.chars().count() > old.chars().count(),
                    (None, Some(_)) => true,
                    _ => false,
                };
                if longer {
                    existing.definition = definition;
                }
                log::debug!("collapsed duplicate label `{label}` in `{coder_id}`");
            }
            None => {
                by_label.insert(normalize_label(&label), codes.len());
                codes.push(Code {
                    label,
                    definition,
                    examples,
                    owner: coder_id.clone(),
                });
            }
        }
    }

    let kind = match file.kind {
        FileKind::Human => CoderKind::Human,
        FileKind::Machine => CoderKind::Machine,
    };
    Ok(Ingested {
        codebook: Codebook {
            coder_id,
            kind,
            codes,
        },
        warnings,
    })
}

/// Writes a codebook back in the file format. Group codebooks have no file
/// representation.
pub fn serialize_codebook(cb: &Codebook) -> Result<String, DataError> {
    let kind = match cb.kind {
        CoderKind::Human => FileKind::Human,
        CoderKind::Machine => FileKind::Machine,
        CoderKind::Group => return Err(DataError::GroupInUnion(cb.coder_id.clone())),
    };
    let file = CodebookFile {
        coder_id: cb.coder_id.clone(),
        kind,
        codes: cb
            .codes
            .iter()
            .map(|c| CodeEntry {
                label: c.label.clone(),
                definition: c.definition.clone(),
                examples: c.examples.iter().cloned().collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file).expect("codebook serializes"))
}
