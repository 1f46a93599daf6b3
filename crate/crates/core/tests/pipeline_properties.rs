mod common;

use std::collections::BTreeSet;

use codespace_core::calibrate::{recommend_threshold, sample_pairs, CalibrationTarget, Decisions, DistanceBasis, Verdict};
use codespace_core::export::NetworkExport;
use codespace_core::ingest::{ingest_codebook, serialize_codebook, IngestOptions};
use codespace_core::merge::{run_pipeline, MergeConfig};
use codespace_core::metrics::compute_observations;
use codespace_core::model::{union_csp, AggregateCodeSpace, Codebook, Condition, SourceRef};
use codespace_core::providers::{cosine_distance, CachedEmbedder, Embedder, TemplateLlm, TrigramEmbedder};

const CONDITIONS: [Condition; 4] = [Condition::C1, Condition::C2, Condition::C3, Condition::C4];

fn run(books: &[Codebook], cfg: &MergeConfig, embedder: &dyn Embedder) -> AggregateCodeSpace {
    let ds = common::dataset();
    run_pipeline(books, cfg, embedder, Some(&TemplateLlm), Some(&ds)).unwrap()
}

#[test]
fn every_source_code_lands_in_exactly_one_consolidated_code() {
    let books = common::codebooks();
    let expected: BTreeSet<SourceRef> = books
        .iter()
        .flat_map(|b| {
            b.codes.iter().map(|c| SourceRef {
                coder_id: b.coder_id.clone(),
                label: c.label.clone(),
            })
        })
        .collect();
    for cond in CONDITIONS {
        let acs = run(&books, &MergeConfig::default().at(cond), &TrigramEmbedder);
        let mut seen = BTreeSet::new();
        for code in &acs.codes {
            for s in &code.sources {
                assert!(seen.insert(s.clone()), "{cond}: {s:?} appears twice");
            }
        }
        assert_eq!(seen, expected, "{cond}");
        acs.validate().unwrap();
    }
}

#[test]
fn raising_the_strict_threshold_never_adds_codes() {
    let books = common::codebooks();
    let mut last = usize::MAX;
    for step in 1..=12 {
        let strict = 0.05 * step as f64;
        let cfg = MergeConfig::with_thresholds(strict, strict, 0.65).at(Condition::C2);
        let n = run(&books, &cfg, &TrigramEmbedder).len();
        assert!(n <= last, "strict {strict}: {n} codes after {last}");
        last = n;
    }
}

#[test]
fn cached_embeddings_do_not_change_the_result() {
    let books = common::codebooks();
    let dir = tempfile::tempdir().unwrap();
    for cond in CONDITIONS {
        let cfg = MergeConfig::default().at(cond);
        let plain = run(&books, &cfg, &TrigramEmbedder);
        let memory = CachedEmbedder::in_memory(TrigramEmbedder);
        let disk = CachedEmbedder::on_disk(TrigramEmbedder, dir.path());
        assert_eq!(run(&books, &cfg, &memory).codes, plain.codes, "{cond} in memory");
        assert_eq!(run(&books, &cfg, &disk).codes, plain.codes, "{cond} on disk");

        let reread = CachedEmbedder::on_disk(TrigramEmbedder, dir.path());
        assert_eq!(run(&books, &cfg, &reread).codes, plain.codes, "{cond} reread");
        assert_eq!(reread.misses(), 0, "{cond}");
        assert!(reread.hits() > 0);
    }
}

#[test]
fn union_ignores_codebook_order() {
    let books = common::codebooks();
    let forward = union_csp(&books, "t").unwrap();
    let mut reversed = books.clone();
    reversed.reverse();
    assert_eq!(union_csp(&reversed, "t").unwrap().to_json(), forward.to_json());
    let mut rotated = books.clone();
    rotated.rotate_left(1);
    assert_eq!(union_csp(&rotated, "t").unwrap().to_json(), forward.to_json());
}

#[test]
fn ingesting_a_written_codebook_is_idempotent() {
    let ds = common::dataset();
    for book in common::codebooks() {
        let written = serialize_codebook(&book).unwrap();
        let opts = IngestOptions {
            dataset: Some(&ds),
            strict: true,
        };
        let again = ingest_codebook(written.as_bytes(), opts).unwrap();
        assert_eq!(again.codebook, book);
        assert!(again.warnings.is_empty());
        assert_eq!(serialize_codebook(&again.codebook).unwrap(), written);
    }
}

#[test]
fn embedding_distance_is_a_bounded_symmetric_dissimilarity() {
    let labels: Vec<String> = common::codebooks()
        .iter()
        .flat_map(|b| b.codes.iter().map(|c| c.label.clone()))
        .collect();
    let emb = TrigramEmbedder.embed(&labels).unwrap();
    for i in 0..emb.len() {
        assert!(cosine_distance(&emb[i], &emb[i]).abs() < 1e-9, "{}", labels[i]);
        for j in 0..emb.len() {
            let d = cosine_distance(&emb[i], &emb[j]);
            assert!((0.0..=2.0 + 1e-9).contains(&d));
            assert!((d - cosine_distance(&emb[j], &emb[i])).abs() < 1e-12);
        }
    }
    let again = TrigramEmbedder.embed(&labels).unwrap();
    assert_eq!(again, emb);
}

#[test]
fn calibration_sample_round_trips_through_decisions() {
    let acs = union_csp(&common::codebooks(), "t").unwrap();
    let sample = sample_pairs(&acs, &TrigramEmbedder, DistanceBasis::Label, 0.9, 5, None).unwrap();
    assert_eq!(sample.pairs.len(), 5);
    assert!(sample.pairs.windows(2).all(|w| w[0].distance >= w[1].distance));
    assert!(sample.pairs.iter().all(|p| p.distance < 0.9));

    let mut decisions = Decisions::blank(&sample);
    let parsed = Decisions::from_json(&decisions.to_json()).unwrap();
    assert_eq!(parsed, decisions);
    let undecided = recommend_threshold(&parsed, CalibrationTarget::Strict);
    assert_eq!((undecided.recommended, undecided.reviewed), (0.9, 0));

    for d in &mut decisions.decisions {
        d.decision = Verdict::Same;
    }
    decisions.decisions[1].decision = Verdict::Different;
    let rejected = decisions.decisions[1].distance;
    let expected = decisions.decisions[2..]
        .iter()
        .map(|d| d.distance)
        .filter(|d| *d < rejected)
        .fold(f64::NEG_INFINITY, f64::max);
    let rec = recommend_threshold(&decisions, CalibrationTarget::Strict);
    assert_eq!(rec.recommended, expected);
    assert_eq!((rec.rejected, rec.reviewed), (1, 5));
}

#[test]
fn network_export_mirrors_the_code_space() {
    let books = common::codebooks();
    for cond in [Condition::C1, Condition::C2, Condition::C3] {
        let acs = run(&books, &MergeConfig::default().at(cond), &TrigramEmbedder);
        let m = compute_observations(&acs, &books).unwrap();
        let export = NetworkExport::build(&acs, Some(&m));

        let nodes: Vec<&str> = export.nodes.iter().map(|n| n.id.as_str()).collect();
        let codes: Vec<&str> = acs.codes.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(nodes, codes, "{cond}");
        let edges: BTreeSet<(String, String)> = export
            .edges
            .iter()
            .map(|e| if e.a < e.b { (e.a.clone(), e.b.clone()) } else { (e.b.clone(), e.a.clone()) })
            .collect();
        assert_eq!(edges.len(), export.edges.len(), "{cond}: duplicate edge");
        assert_eq!(edges, acs.neighbor_pairs().into_iter().collect(), "{cond}");

        for node in &export.nodes {
            let code = acs.get(&node.id).unwrap();
            assert_eq!(node.owners, code.owners.iter().cloned().collect::<Vec<_>>());
            assert_eq!(node.novel, code.novel);
            for (coder, obs) in &node.metrics.as_ref().unwrap().obs {
                assert_eq!(Some(*obs), m.obs(coder, &node.id), "{cond} {coder}");
            }
        }
        assert_eq!(NetworkExport::from_json(&export.to_json()).unwrap().to_json(), export.to_json());
    }
}
