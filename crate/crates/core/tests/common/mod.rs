#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use codespace_core::ingest::{ingest_codebook, IngestOptions};
use codespace_core::model::{Codebook, Dataset};

pub const CODERS: [&str; 4] = ["human-1", "human-2", "machine-1", "machine-2"];

pub fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(path)
}

pub fn dataset() -> Dataset {
    Dataset::from_json(&std::fs::read(fixture("dataset.json")).unwrap()).unwrap()
}

pub fn alternate_dataset() -> Dataset {
    Dataset::from_json(&std::fs::read(fixture("alt_dataset.json")).unwrap()).unwrap()
}

pub fn codebooks() -> Vec<Codebook> {
    let ds = dataset();
    CODERS
        .iter()
        .map(|c| {
            let raw = std::fs::read(fixture(&format!("codebooks/{c}.json"))).unwrap();
            let opts = IngestOptions {
                dataset: Some(&ds),
                strict: true,
            };
            ingest_codebook(&raw, opts).unwrap().codebook
        })
        .collect()
}

use codespace_core::model::{synthesize_group, union_csp, AggregateCodeSpace, Code, CoderKind};
use rand::Rng;

/// Oracle inputs read off an ACS and the scored codebooks.
pub fn oracle_inputs(
    acs: &AggregateCodeSpace,
    books: &[Codebook],
) -> (Vec<oracle::OracleCode>, Vec<oracle::OracleCoder>) {
    let ids: Vec<&str> = acs.codes.iter().map(|c| c.id.as_str()).collect();
    let codes = acs
        .codes
        .iter()
        .map(|c| oracle::OracleCode {
            owners: c.sources.iter().map(|s| s.coder_id.clone()).collect(),
            neighbors: c
                .neighbors
                .iter()
                .map(|n| ids.iter().position(|i| i == n).unwrap())
                .collect(),
        })
        .collect();
    let coders = books
        .iter()
        .map(|b| oracle::OracleCoder {
            id: b.coder_id.clone(),
            size: b.codes.len(),
            stands_for: if b.kind == CoderKind::Group {
                b.codes.iter().map(|c| c.owner.clone()).collect()
            } else {
                vec![b.coder_id.clone()]
            },
            is_group: b.kind == CoderKind::Group,
        })
        .collect();
    (codes, coders)
}

/// A random ACS with at most 6 codes and 2 or 3 coders, random neighbor
/// links, and an all-coders group appended to the codebooks.
pub fn random_case(rng: &mut impl Rng) -> (AggregateCodeSpace, Vec<Codebook>) {
    const POOL: [&str; 6] = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"];
    let n_coders = rng.random_range(2..=3);
    let mut books: Vec<Codebook> = (0..n_coders)
        .map(|i| {
            let id = format!("coder{i}");
            let mut labels: Vec<&str> = POOL.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
            if labels.is_empty() {
                labels.push(POOL[rng.random_range(0..POOL.len())]);
            }
            Codebook {
                coder_id: id.clone(),
                kind: if i % 2 == 0 { CoderKind::Human } else { CoderKind::Machine },
                codes: labels
                    .into_iter()
                    .map(|l| Code {
                        label: l.to_string(),
                        definition: None,
                        examples: Default::default(),
                        owner: id.clone(),
                    })
                    .collect(),
            }
        })
        .collect();
    let mut acs = union_csp(&books, "random").unwrap();
    let ids: Vec<String> = acs.codes.iter().map(|c| c.id.clone()).collect();
    let mut links = Vec::new();
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            if rng.random_bool(0.35) {
                links.push((ids[i].clone(), ids[j].clone()));
            }
        }
    }
    acs.set_neighbors(links);
    let refs: Vec<&Codebook> = books.iter().collect();
    let all = synthesize_group("all", &refs).unwrap();
    books.push(all);
    (acs, books)
}
