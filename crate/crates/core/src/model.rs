//! Data model for codes, codebooks, datasets and the aggregate code space.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::DataError;

/// Identifier of a coder (human, machine, or synthesized group).
pub type CoderId = String;

/// Normalized form used for label identity: trimmed, lowercased, internal
/// whitespace collapsed to single spaces.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// One piece of the coded corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSegment {
    pub id: String,
    pub text: String,
    pub ordinal: usize,
}

/// The coded corpus. Segment ids are unique and ordinals follow file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    segments: Vec<SourceSegment>,
    index: BTreeMap<String, usize>,
}

#[derive(Deserialize, Serialize)]
struct RawSegment {
    id: String,
    text: String,
}

impl Dataset {
    pub fn new<I, S, T>(items: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut dataset = Dataset::default();
        for (ordinal, (id, text)) in items.into_iter().enumerate() {
            let id = id.into();
            if dataset.index.insert(id.clone(), ordinal).is_some() {
                return Err(DataError::DuplicateSegment(id));
            }
            dataset.segments.push(SourceSegment {
                id,
                text: text.into(),
                ordinal,
            });
        }
        Ok(dataset)
    }

    /// Parses a dataset file: a JSON array of `{"id", "text"}` objects.
    pub fn from_json(bytes: &[u8]) -> Result<Self, DataError> {
        let raw: Vec<RawSegment> = serde_json::from_slice(bytes).map_err(DataError::from_json)?;
        Self::new(raw.into_iter().map(|s| (s.id, s.text)))
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<RawSegment> = self
            .segments
            .iter()
            .map(|s| RawSegment {
                id: s.id.clone(),
                text: s.text.clone(),
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("dataset serializes")
    }

    pub fn get(&self, id: &str) -> Option<&SourceSegment> {
        self.index.get(id).map(|&i| &self.segments[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn segments(&self) -> &[SourceSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Example texts for a set of segment ids in corpus order. Ids absent
    /// from the dataset fall back to the id itself.
    pub fn example_texts<'a, I>(&self, ids: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut found: Vec<(usize, String)> = ids
            .into_iter()
            .map(|id| match self.get(id) {
                Some(seg) => (seg.ordinal, seg.text.clone()),
                None => (usize::MAX, id.clone()),
            })
            .collect();
        found.sort();
        found.into_iter().map(|(_, t)| t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoderKind {
    Human,
    Machine,
    Group,
}

impl fmt::Display for CoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoderKind::Human => "human",
            CoderKind::Machine => "machine",
            CoderKind::Group => "group",
        })
    }
}

/// A single interpretive label attached by one coder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Code {
    pub label: String,
    pub definition: Option<String>,
    pub examples: BTreeSet<String>,
    pub owner: CoderId,
}

/// One coder's code space.
///
/// For `CoderKind::Group` the codes keep their member owners, so a group
/// codebook can report which underlying coders it stands for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub coder_id: CoderId,
    pub kind: CoderKind,
    pub codes: Vec<Code>,
}

impl Codebook {
    /// Coder ids whose ownership counts as ownership by this codebook.
    pub fn owner_ids(&self) -> BTreeSet<&str> {
        match self.kind {
            CoderKind::Group => self.codes.iter().map(|c| c.owner.as_str()).collect(),
            _ => std::iter::once(self.coder_id.as_str()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Builds a group codebook as the union of its members' codes. Every member
/// stays the owner of its own codes.
pub fn synthesize_group(group_id: &str, members: &[&Codebook]) -> Result<Codebook, DataError> {
    if members.is_empty() {
        return Err(DataError::EmptyGroup(group_id.to_string()));
    }
    let codes = members
        .iter()
        .flat_map(|m| {
            m.codes.iter().map(move |c| Code {
                owner: m.coder_id.clone(),
                ..c.clone()
            })
        })
        .collect();
    Ok(Codebook {
        coder_id: group_id.to_string(),
        kind: CoderKind::Group,
        codes,
    })
}

/// The (coder, original label) pair an input code is known by.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    pub coder_id: CoderId,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    C1,
    C2,
    C3,
    C4,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::C1, Condition::C2, Condition::C3, Condition::C4];

    pub fn stage(self) -> u8 {
        match self {
            Condition::C1 => 1,
            Condition::C2 => 2,
            Condition::C3 => 3,
            Condition::C4 => 4,
        }
    }

    pub fn needs_llm(self) -> bool {
        self >= Condition::C3
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.stage())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c1" | "1" => Ok(Condition::C1),
            "c2" | "2" => Ok(Condition::C2),
            "c3" | "3" => Ok(Condition::C3),
            "c4" | "4" => Ok(Condition::C4),
            other => Err(format!("unknown condition `{other}` (expected c1..c4)")),
        }
    }
}

/// A code of the aggregate code space, with merge provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidatedCode {
    pub id: String,
    pub label: String,
    pub definition: Option<String>,
    pub sources: BTreeSet<SourceRef>,
    pub examples: BTreeSet<String>,
    pub owners: BTreeSet<CoderId>,
    pub neighbors: BTreeSet<String>,
    pub novel: bool,
}

impl ConsolidatedCode {
    /// Creates a code from its sources; id, owners and novelty are derived.
    pub fn from_sources(
        label: String,
        definition: Option<String>,
        sources: BTreeSet<SourceRef>,
        examples: BTreeSet<String>,
    ) -> Self {
        let owners: BTreeSet<CoderId> = sources.iter().map(|s| s.coder_id.clone()).collect();
        ConsolidatedCode {
            id: consolidated_id(&sources),
            label,
            definition,
            novel: owners.len() == 1,
            sources,
            examples,
            owners,
            neighbors: BTreeSet::new(),
        }
    }

    /// Unions a group of codes into one. Label and definition are supplied
    /// by the caller since each stage chooses them differently.
    pub fn merged<'a, I>(members: I, label: String, definition: Option<String>) -> Self
    where
        I: IntoIterator<Item = &'a ConsolidatedCode>,
    {
        let mut sources = BTreeSet::new();
        let mut examples = BTreeSet::new();
        for m in members {
            sources.extend(m.sources.iter().cloned());
            examples.extend(m.examples.iter().cloned());
        }
        Self::from_sources(label, definition, sources, examples)
    }

    pub fn is_owned_by_any(&self, owners: &BTreeSet<&str>) -> bool {
        self.owners.iter().any(|o| owners.contains(o.as_str()))
    }
}

/// Content hash of the sorted source pairs.
pub fn consolidated_id(sources: &BTreeSet<SourceRef>) -> String {
    let mut hasher = Sha256::new();
    for s in sources {
        hasher.update(s.coder_id.as_bytes());
        hasher.update([0x1f]);
        hasher.update(s.label.as_bytes());
        hasher.update([0x1e]);
    }
    let digest = hasher.finalize();
    format!("c-{}", hex::encode(&digest[..8]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub coder_id: CoderId,
    pub label: String,
    pub code_id: String,
}

/// The consolidated union of all coders' codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateCodeSpace {
    pub codes: Vec<ConsolidatedCode>,
    pub condition: Condition,
    #[serde(with = "provenance_serde")]
    pub provenance: BTreeMap<SourceRef, String>,
    pub config_fingerprint: String,
}

mod provenance_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<SourceRef, String>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let entries: Vec<ProvenanceEntry> = map
            .iter()
            .map(|(k, v)| ProvenanceEntry {
                coder_id: k.coder_id.clone(),
                label: k.label.clone(),
                code_id: v.clone(),
            })
            .collect();
        entries.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<SourceRef, String>, D::Error> {
        let entries = Vec::<ProvenanceEntry>::deserialize(de)?;
        Ok(entries
            .into_iter()
            .map(|e| {
                (
                    SourceRef {
                        coder_id: e.coder_id,
                        label: e.label,
                    },
                    e.code_id,
                )
            })
            .collect())
    }
}

impl AggregateCodeSpace {
    /// Assembles an ACS from codes, sorting them canonically and rebuilding
    /// provenance. Neighbor links are kept only where both ends exist, and
    /// are closed under symmetry.
    pub fn from_codes(
        mut codes: Vec<ConsolidatedCode>,
        condition: Condition,
        config_fingerprint: String,
    ) -> Self {
        codes.sort_by(|a, b| {
            normalize_label(&a.label)
                .cmp(&normalize_label(&b.label))
                .then_with(|| a.id.cmp(&b.id))
        });
        let mut acs = AggregateCodeSpace {
            codes,
            condition,
            provenance: BTreeMap::new(),
            config_fingerprint,
        };
        acs.rebuild_provenance();
        let links: Vec<(String, String)> = acs
            .codes
            .iter()
            .flat_map(|c| c.neighbors.iter().map(move |n| (c.id.clone(), n.clone())))
            .collect();
        acs.set_neighbors(links);
        acs
    }

    fn rebuild_provenance(&mut self) {
        self.provenance = self
            .codes
            .iter()
            .flat_map(|c| c.sources.iter().map(move |s| (s.clone(), c.id.clone())))
            .collect();
    }

    /// Replaces all neighbor links. Links are made symmetric; self links and
    /// links to unknown ids are dropped.
    pub fn set_neighbors<I>(&mut self, links: I)
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let index = self.index();
        let mut sets: Vec<BTreeSet<String>> = vec![BTreeSet::new(); self.codes.len()];
        for (a, b) in links {
            if a == b {
                continue;
            }
            if let (Some(&ia), Some(&ib)) = (index.get(&a), index.get(&b)) {
                sets[ia].insert(b.clone());
                sets[ib].insert(a.clone());
            }
        }
        for (code, set) in self.codes.iter_mut().zip(sets) {
            code.neighbors = set;
        }
    }

    pub fn index(&self) -> BTreeMap<String, usize> {
        self.codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&ConsolidatedCode> {
        self.codes.iter().find(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn coder_ids(&self) -> BTreeSet<&str> {
        self.provenance.keys().map(|s| s.coder_id.as_str()).collect()
    }

    pub fn neighbor_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = Vec::new();
        for c in &self.codes {
            for n in &c.neighbors {
                if c.id < *n {
                    pairs.push((c.id.clone(), n.clone()));
                }
            }
        }
        pairs
    }

    pub fn source_count(&self) -> usize {
        self.codes.iter().map(|c| c.sources.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ACS serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, DataError> {
        serde_json::from_slice(bytes).map_err(DataError::from_json)
    }

    /// Checks the structural invariants: provenance is total and every
    /// derived field agrees with the sources.
    pub fn validate(&self) -> Result<(), DataError> {
        let index = self.index();
        if index.len() != self.codes.len() {
            return Err(DataError::Invariant("duplicate consolidated code ids".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.codes {
            if c.owners.is_empty() {
                return Err(DataError::Invariant(format!("code {} has no owners", c.id)));
            }
            let owners: BTreeSet<&str> = c.sources.iter().map(|s| s.coder_id.as_str()).collect();
            if owners != c.owners.iter().map(String::as_str).collect() {
                return Err(DataError::Invariant(format!("owners of {} disagree with sources", c.id)));
            }
            if c.novel != (c.owners.len() == 1) {
                return Err(DataError::Invariant(format!("novel flag of {} is wrong", c.id)));
            }
            for s in &c.sources {
                if !seen.insert(s.clone()) {
                    return Err(DataError::Invariant(format!(
                        "source ({}, {}) appears twice",
                        s.coder_id, s.label
                    )));
                }
                if self.provenance.get(s) != Some(&c.id) {
                    return Err(DataError::Invariant(format!(
                        "provenance of ({}, {}) does not point at {}",
                        s.coder_id, s.label, c.id
                    )));
                }
            }
            for n in &c.neighbors {
                if n == &c.id {
                    return Err(DataError::Invariant(format!("{} neighbors itself", c.id)));
                }
                match index.get(n) {
                    Some(&j) if self.codes[j].neighbors.contains(&c.id) => {}
                    _ => {
                        return Err(DataError::Invariant(format!(
                            "neighbor link {} -> {} is not symmetric",
                            c.id, n
                        )))
                    }
                }
            }
        }
        if seen.len() != self.provenance.len() {
            return Err(DataError::Invariant("provenance has dangling entries".into()));
        }
        Ok(())
    }
}

/// Picks the label adopted when codes merge on label identity or label
/// similarity: the shortest (in characters), ties broken lexicographically.
pub fn shortest_label<'a, I>(labels: I) -> Option<&'a str>
where
    I: IntoIterator<Item = &'a str>,
{
    labels
        .into_iter()
        .min_by(|a, b| a.chars().count().cmp(&b.chars().count()).then_with(|| a.cmp(b)))
}

/// Picks the longest definition, ties broken lexicographically.
pub fn longest_definition<'a, I>(definitions: I) -> Option<&'a str>
where
    I: IntoIterator<Item = &'a str>,
{
    definitions
        .into_iter()
        .filter(|d| !d.trim().is_empty())
        .max_by(|a, b| a.chars().count().cmp(&b.chars().count()).then_with(|| b.cmp(a)))
}

/// Stage 1: the union of all code spaces, merging only identical
/// normalized labels.
pub fn union_csp(
    codebooks: &[Codebook],
    config_fingerprint: &str,
) -> Result<AggregateCodeSpace, DataError> {
    if codebooks.len() < 2 {
        return Err(DataError::TooFewCodebooks(codebooks.len()));
    }
    let mut coder_ids = BTreeSet::new();
    for cb in codebooks {
        if cb.kind == CoderKind::Group {
            return Err(DataError::GroupInUnion(cb.coder_id.clone()));
        }
        if !coder_ids.insert(cb.coder_id.as_str()) {
            return Err(DataError::DuplicateCoder(cb.coder_id.clone()));
        }
    }

    let mut by_label: BTreeMap<String, Vec<(&Codebook, &Code)>> = BTreeMap::new();
    for cb in codebooks {
        for code in &cb.codes {
            by_label
                .entry(normalize_label(&code.label))
                .or_default()
                .push((cb, code));
        }
    }

    let codes = by_label
        .into_values()
        .map(|group| {
            let label = shortest_label(group.iter().map(|(_, c)| c.label.trim()))
                .unwrap_or_default()
                .to_string();
            let definition = longest_definition(
                group.iter().filter_map(|(_, c)| c.definition.as_deref()),
            )
            .map(str::to_string);
            let sources = group
                .iter()
                .map(|(cb, c)| SourceRef {
                    coder_id: cb.coder_id.clone(),
                    label: c.label.clone(),
                })
                .collect();
            let examples = group
                .iter()
                .flat_map(|(_, c)| c.examples.iter().cloned())
                .collect();
            ConsolidatedCode::from_sources(label, definition, sources, examples)
        })
        .collect();

    Ok(AggregateCodeSpace::from_codes(
        codes,
        Condition::C1,
        config_fingerprint.to_string(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book(id: &str, labels: &[&str]) -> Codebook {
        Codebook {
            coder_id: id.into(),
            kind: CoderKind::Human,
            codes: labels
                .iter()
                .map(|l| Code {
                    label: l.to_string(),
                    definition: None,
                    examples: BTreeSet::new(),
                    owner: id.into(),
                })
                .collect(),
        }
    }

    #[test]
    fn normalization_collapses_case_and_whitespace() {
        assert_eq!(normalize_label("  User   Feedback "), "user feedback");
        assert_eq!(normalize_label("ÉCOLE"), "école");
    }

    #[test]
    fn union_merges_identical_labels() {
        let acs = union_csp(&[book("A", &["X", "Y"]), book("B", &["X", "Z"])], "fp").unwrap();
        assert_eq!(acs.len(), 3);
        let x = acs.codes.iter().find(|c| c.label == "X").unwrap();
        assert_eq!(x.owners, ["A", "B"].iter().map(|s| s.to_string()).collect());
        assert!(!x.novel);
        let y = acs.codes.iter().find(|c| c.label == "Y").unwrap();
        assert!(y.novel);
        assert_eq!(acs.condition, Condition::C1);
        acs.validate().unwrap();
    }

    #[test]
    fn union_normalizes_labels() {
        let acs = union_csp(&[book("A", &["X"]), book("B", &["x "])], "fp").unwrap();
        assert_eq!(acs.len(), 1);
        assert_eq!(acs.codes[0].owners.len(), 2);
        assert_eq!(acs.codes[0].label, "X");
    }

    #[test]
    fn union_rejects_single_codebook_and_duplicates() {
        assert!(matches!(
            union_csp(&[book("A", &["X"])], "fp"),
            Err(DataError::TooFewCodebooks(1))
        ));
        assert!(matches!(
            union_csp(&[book("A", &["X"]), book("A", &["Y"])], "fp"),
            Err(DataError::DuplicateCoder(_))
        ));
    }

    #[test]
    fn union_is_order_insensitive() {
        let a = book("A", &["X", "Y", "shared"]);
        let b = book("B", &["Shared", "Z"]);
        let c = book("C", &["q"]);
        let one = union_csp(&[a.clone(), b.clone(), c.clone()], "fp").unwrap();
        let two = union_csp(&[c, b, a], "fp").unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn neighbors_are_symmetric_and_irreflexive() {
        let mut acs = union_csp(&[book("A", &["X", "Y"]), book("B", &["Z"])], "fp").unwrap();
        let ids: Vec<String> = acs.codes.iter().map(|c| c.id.clone()).collect();
        acs.set_neighbors(vec![
            (ids[0].clone(), ids[1].clone()),
            (ids[2].clone(), ids[2].clone()),
            (ids[0].clone(), "missing".into()),
        ]);
        assert!(acs.codes[1].neighbors.contains(&ids[0]));
        assert!(acs.codes[2].neighbors.is_empty());
        assert_eq!(acs.neighbor_pairs().len(), 1);
        acs.validate().unwrap();
    }

    #[test]
    fn ids_are_content_hashes() {
        let s: BTreeSet<SourceRef> = [SourceRef {
            coder_id: "A".into(),
            label: "X".into(),
        }]
        .into_iter()
        .collect();
        assert_eq!(consolidated_id(&s), consolidated_id(&s.clone()));
        let mut t = s.clone();
        t.insert(SourceRef {
            coder_id: "B".into(),
            label: "X".into(),
        });
        assert_ne!(consolidated_id(&s), consolidated_id(&t));
    }

    #[test]
    fn group_keeps_member_owners() {
        let a = book("A", &["X"]);
        let b = book("B", &["Y", "Z"]);
        let g = synthesize_group("all", &[&a, &b]).unwrap();
        assert_eq!(g.kind, CoderKind::Group);
        assert_eq!(g.len(), 3);
        assert_eq!(g.owner_ids(), ["A", "B"].into_iter().collect());
        assert!(synthesize_group("none", &[]).is_err());
    }

    #[test]
    fn shortest_label_breaks_ties_lexicographically() {
        assert_eq!(shortest_label(["bb", "aa", "ccc"]), Some("aa"));
        assert_eq!(longest_definition(["ab", "b", "aa"]), Some("aa"));
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        assert!(Dataset::new([("m1", "a"), ("m1", "b")]).is_err());
        let d = Dataset::from_json(br#"[{"id":"m1","text":"hi"},{"id":"m2","text":"yo"}]"#).unwrap();
        assert_eq!(d.get("m2").unwrap().ordinal, 1);
        assert_eq!(
            d.example_texts(&["m2".to_string(), "m1".to_string()]),
            vec!["hi", "yo"]
        );
    }
}
