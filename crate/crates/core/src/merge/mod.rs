//! Four-stage consolidation of codebooks into an aggregate code space.
//!
//! 1. union of all code spaces, merging identical normalized labels
//! 2. average-linkage clustering of label embeddings, cut at the strict
//!    threshold; merged codes adopt the shortest label
//! 3. definitions are written for codes lacking one, then clustering is
//!    repeated on `label — definition` embeddings and every merged cluster
//!    gets a regenerated label and definition
//! 4. stage 3 repeated until a pass merges nothing, with example-aware
//!    distances and a dual-threshold decision on every dendrogram node

mod config;
pub mod hac;
mod penalty;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

pub use config::{Linkage, MergeConfig, PenaltyFormula};
pub use penalty::{
    example_difference, merge_decision, overshoot, penalized_distance, MergeDecision,
};

use crate::error::{ConfigError, DataError, ProviderError};
use crate::model::{
    longest_definition, normalize_label, shortest_label, union_csp, AggregateCodeSpace, Codebook,
    Condition, ConsolidatedCode, Dataset,
};
use crate::providers::{cosine_distance, Embedder, Embedding, Llm};
use hac::{average_linkage, cluster_members, flat_clusters, DistanceMatrix};

/// Separator between label and definition in stage-3/4 embedding texts.
pub const LABEL_DEFINITION_SEPARATOR: &str = " — ";

#[derive(Debug, Error)]
pub enum MergeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("condition {0} needs a language model")]
    MissingLlm(Condition),
    #[error("stage {stage} failed after completing {completed:?} ({codes} codes): {source}")]
    Provider {
        stage: u8,
        completed: Condition,
        codes: usize,
        #[source]
        source: ProviderError,
    },
}

/// Text embedded for a code: the label, or label and definition.
pub fn embedding_text(code: &ConsolidatedCode, with_definition: bool) -> String {
    match (&code.definition, with_definition) {
        (Some(d), true) if !d.trim().is_empty() => {
            format!("{}{LABEL_DEFINITION_SEPARATOR}{}", code.label, d)
        }
        _ => code.label.clone(),
    }
}

pub(crate) fn embed_codes(
    codes: &[ConsolidatedCode],
    with_definition: bool,
    embedder: &dyn Embedder,
) -> Result<Vec<Embedding>, ProviderError> {
    if codes.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = codes
        .iter()
        .map(|c| embedding_text(c, with_definition))
        .collect();
    let out = embedder.embed(&texts)?;
    if out.len() != texts.len() {
        return Err(ProviderError::BadResponse {
            provider: embedder.id(),
            message: format!("expected {} embeddings, got {}", texts.len(), out.len()),
        });
    }
    Ok(out)
}

fn cosine_matrix(emb: &[Embedding]) -> DistanceMatrix {
    DistanceMatrix::from_fn(emb.len(), |i, j| cosine_distance(&emb[i], &emb[j]))
}

/// Tie-break ranks: codes ordered by (normalized label, label, id).
fn label_ranks(codes: &[ConsolidatedCode]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..codes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&codes[a], &codes[b]);
        normalize_label(&ca.label)
            .cmp(&normalize_label(&cb.label))
            .then_with(|| ca.label.cmp(&cb.label))
            .then_with(|| ca.id.cmp(&cb.id))
    });
    let mut ranks = vec![0; codes.len()];
    for (rank, i) in order.into_iter().enumerate() {
        ranks[i] = rank;
    }
    ranks
}

fn singleton(code: &ConsolidatedCode) -> ConsolidatedCode {
    let mut c = code.clone();
    c.neighbors.clear();
    c
}

fn example_texts(code: &ConsolidatedCode, dataset: Option<&Dataset>, cap: usize) -> Vec<String> {
    let mut texts = match dataset {
        Some(ds) => ds.example_texts(code.examples.iter()),
        None => code.examples.iter().cloned().collect(),
    };
    texts.truncate(cap);
    texts
}

fn nonempty(provider: &dyn Llm, text: String) -> Result<String, ProviderError> {
    let text = text.trim().to_string();
    if text.is_empty() {
        Err(ProviderError::EmptyOutput {
            provider: provider.id(),
        })
    } else {
        Ok(text)
    }
}

/// Writes a label and definition for every cluster of two or more codes.
fn regenerate_clusters(
    codes: &[ConsolidatedCode],
    clusters: &[Vec<usize>],
    llm: &dyn Llm,
) -> Result<Vec<ConsolidatedCode>, ProviderError> {
    clusters
        .par_iter()
        .map(|members| {
            if members.len() == 1 {
                return Ok(singleton(&codes[members[0]]));
            }
            let pairs: Vec<(String, String)> = members
                .iter()
                .map(|&i| {
                    let c = &codes[i];
                    (c.label.clone(), c.definition.clone().unwrap_or_default())
                })
                .collect();
            let (label, definition) = llm.generate_merged_code(&pairs)?;
            let label = nonempty(llm, label)?;
            let definition = nonempty(llm, definition)?;
            Ok(ConsolidatedCode::merged(
                members.iter().map(|&i| &codes[i]),
                label,
                Some(definition),
            ))
        })
        .collect()
}

/// Stage 2: merge codes whose label embeddings lie within the strict
/// threshold.
pub fn stage2_label_cluster(
    acs: &AggregateCodeSpace,
    config: &MergeConfig,
    embedder: &dyn Embedder,
) -> Result<AggregateCodeSpace, ProviderError> {
    let codes = &acs.codes;
    let clusters = if codes.len() < 2 {
        (0..codes.len()).map(|i| vec![i]).collect()
    } else {
        let emb = embed_codes(codes, false, embedder)?;
        let steps = average_linkage(&cosine_matrix(&emb), &label_ranks(codes), config.strict_threshold);
        flat_clusters(codes.len(), &steps)
    };
    let merged = clusters
        .iter()
        .map(|members| {
            if members.len() == 1 {
                return singleton(&codes[members[0]]);
            }
            let label = shortest_label(members.iter().map(|&i| codes[i].label.as_str()))
                .expect("cluster is non-empty")
                .to_string();
            let definition =
                longest_definition(members.iter().filter_map(|&i| codes[i].definition.as_deref()))
                    .map(str::to_string);
            ConsolidatedCode::merged(members.iter().map(|&i| &codes[i]), label, definition)
        })
        .collect();
    Ok(AggregateCodeSpace::from_codes(
        merged,
        Condition::C2,
        acs.config_fingerprint.clone(),
    ))
}

/// Fills in missing definitions; existing ones are kept as they are.
pub fn ensure_definitions(
    acs: &AggregateCodeSpace,
    config: &MergeConfig,
    llm: &dyn Llm,
    dataset: Option<&Dataset>,
) -> Result<Vec<ConsolidatedCode>, ProviderError> {
    acs.codes
        .par_iter()
        .map(|code| {
            let mut c = singleton(code);
            if c.definition.as_deref().is_none_or(|d| d.trim().is_empty()) {
                let examples = example_texts(code, dataset, config.max_examples_per_prompt);
                let def = llm.generate_definition(&code.label, &examples)?;
                c.definition = Some(nonempty(llm, def)?);
            }
            Ok(c)
        })
        .collect()
}

/// Stage 3: definitions for every code, then strict-threshold clustering on
/// `label — definition` embeddings.
pub fn stage3_definition_cluster(
    acs: &AggregateCodeSpace,
    config: &MergeConfig,
    embedder: &dyn Embedder,
    llm: &dyn Llm,
    dataset: Option<&Dataset>,
) -> Result<AggregateCodeSpace, ProviderError> {
    let codes = ensure_definitions(acs, config, llm, dataset)?;
    let clusters = if codes.len() < 2 {
        (0..codes.len()).map(|i| vec![i]).collect()
    } else {
        let emb = embed_codes(&codes, true, embedder)?;
        let steps = average_linkage(&cosine_matrix(&emb), &label_ranks(&codes), config.strict_threshold);
        flat_clusters(codes.len(), &steps)
    };
    let merged = regenerate_clusters(&codes, &clusters, llm)?;
    Ok(AggregateCodeSpace::from_codes(
        merged,
        Condition::C3,
        acs.config_fingerprint.clone(),
    ))
}

/// One internal node of a stage-4 dendrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct DendrogramNode {
    /// Indices into the codes of the pass.
    pub members: Vec<usize>,
    /// Child cluster ids (leaves are `0..n`, merges `n..`).
    pub children: (usize, usize),
    /// Average linkage over plain cosine distances.
    pub base_distance: f64,
    /// Average linkage over example-penalized distances.
    pub adjusted_distance: f64,
    pub unique_example_count: usize,
    pub overshoot: f64,
    /// `None` when a child was already split, so the node was never a
    /// candidate merge.
    pub decision: Option<MergeDecision>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage4Pass {
    pub codes_before: usize,
    pub merges: usize,
    pub nodes: Vec<DendrogramNode>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stage4Report {
    pub passes: Vec<Stage4Pass>,
    /// False when the iteration cap stopped a pass that still merged.
    pub converged: bool,
}

fn penalized_matrix(codes: &[ConsolidatedCode], base: &DistanceMatrix, config: &MergeConfig) -> DistanceMatrix {
    DistanceMatrix::from_fn(codes.len(), |i, j| {
        penalized_distance(&codes[i], &codes[j], base.get(i, j), config)
    })
}

/// Builds the dendrogram of one pass and decides every node bottom-up.
/// Returns the nodes, the flat clusters, and neighbor links between
/// cluster indices.
fn decide_pass(
    codes: &[ConsolidatedCode],
    base: &DistanceMatrix,
    config: &MergeConfig,
) -> (Vec<DendrogramNode>, Vec<Vec<usize>>, Vec<(usize, usize)>) {
    let n = codes.len();
    let adjusted = penalized_matrix(codes, base, config);
    let steps = average_linkage(&adjusted, &label_ranks(codes), config.upper_threshold);
    let members = cluster_members(n, &steps);

    let unique_counts: Vec<usize> = steps
        .iter()
        .enumerate()
        .map(|(t, _)| {
            members[n + t]
                .iter()
                .flat_map(|&i| codes[i].examples.iter())
                .collect::<BTreeSet<_>>()
                .len()
        })
        .collect();
    let (count_avg, count_max) = if unique_counts.is_empty() {
        (0.0, 0.0)
    } else {
        let sum: usize = unique_counts.iter().sum();
        (
            sum as f64 / unique_counts.len() as f64,
            *unique_counts.iter().max().expect("non-empty") as f64,
        )
    };

    // whole[id]: the cluster is kept together after decisions.
    let mut whole = vec![true; n + steps.len()];
    let mut links = Vec::new();
    let mut nodes = Vec::with_capacity(steps.len());
    for (t, step) in steps.iter().enumerate() {
        let (l, r) = (step.left, step.right);
        let base_distance = {
            let (ml, mr) = (&members[l], &members[r]);
            let sum: f64 = ml.iter().flat_map(|&a| mr.iter().map(move |&b| (a, b))).map(|(a, b)| base.get(a, b)).sum();
            sum / (ml.len() * mr.len()) as f64
        };
        let o = overshoot(unique_counts[t], count_avg, count_max);
        let decision = if whole[l] && whole[r] {
            let d = merge_decision(step.distance, o, config);
            if d == MergeDecision::Neighbor {
                links.push((l, r));
            }
            Some(d)
        } else {
            None
        };
        whole[n + t] = decision == Some(MergeDecision::Merge);
        nodes.push(DendrogramNode {
            members: members[n + t].clone(),
            children: (l, r),
            base_distance,
            adjusted_distance: step.distance,
            unique_example_count: unique_counts[t],
            overshoot: o,
            decision,
        });
    }

    // Maximal whole clusters: whole ids whose parent is not whole.
    let mut parent = vec![usize::MAX; n + steps.len()];
    for (t, s) in steps.iter().enumerate() {
        parent[s.left] = n + t;
        parent[s.right] = n + t;
    }
    let mut top_of_leaf = vec![usize::MAX; n];
    let mut roots: Vec<usize> = (0..n + steps.len())
        .filter(|&id| whole[id] && (parent[id] == usize::MAX || !whole[parent[id]]))
        .collect();
    roots.sort_by_key(|&id| members[id][0]);
    let clusters: Vec<Vec<usize>> = roots.iter().map(|&id| members[id].clone()).collect();
    for (ci, cluster) in clusters.iter().enumerate() {
        for &leaf in cluster {
            top_of_leaf[leaf] = ci;
        }
    }
    let cluster_links = links
        .into_iter()
        .map(|(l, r)| (top_of_leaf[members[l][0]], top_of_leaf[members[r][0]]))
        .collect();
    (nodes, clusters, cluster_links)
}

/// Stage 4: repeated passes of the dual-threshold clustering until a pass
/// merges nothing or the iteration cap is hit. Nodes rejected inside the
/// band link their two child clusters as neighbors.
pub fn stage4_iterative_cluster(
    acs: &AggregateCodeSpace,
    config: &MergeConfig,
    embedder: &dyn Embedder,
    llm: &dyn Llm,
    dataset: Option<&Dataset>,
) -> Result<(AggregateCodeSpace, Stage4Report), ProviderError> {
    let mut codes = ensure_definitions(acs, config, llm, dataset)?;
    let mut links: BTreeSet<(String, String)> = BTreeSet::new();
    let mut report = Stage4Report::default();

    for _ in 0..config.max_stage4_iterations {
        if codes.len() < 2 {
            report.converged = true;
            break;
        }
        let emb = embed_codes(&codes, true, embedder)?;
        let base = cosine_matrix(&emb);
        let (nodes, clusters, cluster_links) = decide_pass(&codes, &base, config);
        let merges = clusters.iter().filter(|c| c.len() > 1).count();
        report.passes.push(Stage4Pass {
            codes_before: codes.len(),
            merges,
            nodes,
        });

        let next = regenerate_clusters(&codes, &clusters, llm)?;
        let mut renamed: BTreeMap<&str, &str> = BTreeMap::new();
        for (cluster, new) in clusters.iter().zip(&next) {
            for &i in cluster {
                renamed.insert(codes[i].id.as_str(), new.id.as_str());
            }
        }
        let mut carried: BTreeSet<(String, String)> = links
            .iter()
            .map(|(a, b)| (renamed[a.as_str()].to_string(), renamed[b.as_str()].to_string()))
            .filter(|(a, b)| a != b)
            .collect();
        for (a, b) in cluster_links {
            if a != b {
                carried.insert((next[a].id.clone(), next[b].id.clone()));
            }
        }
        links = carried;
        codes = next;
        if merges == 0 {
            report.converged = true;
            break;
        }
    }
    if !report.converged {
        log::warn!(
            "stage 4 stopped at the iteration cap ({}) while still merging",
            config.max_stage4_iterations
        );
    }

    let mut out = AggregateCodeSpace::from_codes(codes, Condition::C4, acs.config_fingerprint.clone());
    out.set_neighbors(links);
    Ok((out, report))
}

/// Adds band-based neighbor links to an ACS, keeping existing links.
///
/// * C4: pairs whose example-penalized distance lies in (lower, upper]
/// * C1 to C3: pairs whose cosine distance lies in
///   (strict, neighbor_band_upper], on label embeddings for C1/C2 and
///   `label — definition` embeddings for C3
pub fn link_neighbors(
    acs: &AggregateCodeSpace,
    config: &MergeConfig,
    embedder: &dyn Embedder,
) -> Result<AggregateCodeSpace, ProviderError> {
    let codes = &acs.codes;
    let mut links: Vec<(String, String)> = acs.neighbor_pairs();
    if codes.len() >= 2 {
        let with_definition = acs.condition >= Condition::C3;
        let emb = embed_codes(codes, with_definition, embedder)?;
        for i in 0..codes.len() {
            for j in (i + 1)..codes.len() {
                let base = cosine_distance(&emb[i], &emb[j]);
                let linked = if acs.condition == Condition::C4 {
                    let d = penalized_distance(&codes[i], &codes[j], base, config);
                    d > config.lower_threshold && d <= config.upper_threshold
                } else {
                    base > config.strict_threshold && base <= config.neighbor_band_upper
                };
                if linked {
                    links.push((codes[i].id.clone(), codes[j].id.clone()));
                }
            }
        }
    }
    let mut out = acs.clone();
    out.set_neighbors(links);
    Ok(out)
}

/// Code counts after each executed stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineTrace {
    pub stage_counts: Vec<(Condition, usize)>,
    pub stage4: Option<Stage4Report>,
}

/// Runs stages 1 through `config.condition` and links neighbors.
pub fn run_pipeline(
    codebooks: &[Codebook],
    config: &MergeConfig,
    embedder: &dyn Embedder,
    llm: Option<&dyn Llm>,
    dataset: Option<&Dataset>,
) -> Result<AggregateCodeSpace, MergeError> {
    run_pipeline_traced(codebooks, config, embedder, llm, dataset).map(|(acs, _)| acs)
}

pub fn run_pipeline_traced(
    codebooks: &[Codebook],
    config: &MergeConfig,
    embedder: &dyn Embedder,
    llm: Option<&dyn Llm>,
    dataset: Option<&Dataset>,
) -> Result<(AggregateCodeSpace, PipelineTrace), MergeError> {
    config.validate()?;
    let target = config.condition;
    let llm = match (target.needs_llm(), llm) {
        (true, None) => return Err(MergeError::MissingLlm(target)),
        (true, Some(l)) => Some(l),
        (false, _) => None,
    };
    let fingerprint = config.fingerprint(&embedder.id(), llm.map(|l| l.id()).as_deref());

    let mut trace = PipelineTrace::default();
    let mut acs = union_csp(codebooks, &fingerprint)?;
    trace.stage_counts.push((Condition::C1, acs.len()));

    let fail = |stage: u8, acs: &AggregateCodeSpace, source: ProviderError| MergeError::Provider {
        stage,
        completed: acs.condition,
        codes: acs.len(),
        source,
    };

    if target >= Condition::C2 {
        acs = stage2_label_cluster(&acs, config, embedder).map_err(|e| fail(2, &acs, e))?;
        trace.stage_counts.push((Condition::C2, acs.len()));
    }
    if let Some(llm) = llm {
        acs = stage3_definition_cluster(&acs, config, embedder, llm, dataset)
            .map_err(|e| fail(3, &acs, e))?;
        trace.stage_counts.push((Condition::C3, acs.len()));
        if target == Condition::C4 {
            let (next, report) = stage4_iterative_cluster(&acs, config, embedder, llm, dataset)
                .map_err(|e| fail(4, &acs, e))?;
            acs = next;
            trace.stage_counts.push((Condition::C4, acs.len()));
            trace.stage4 = Some(report);
        }
    }
    let stage = target.stage();
    acs = link_neighbors(&acs, config, embedder).map_err(|e| fail(stage, &acs, e))?;
    debug_assert!(acs.validate().is_ok());
    Ok((acs, trace))
}
