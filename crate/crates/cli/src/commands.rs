use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use codespace_core::calibrate::{recommend_threshold, sample_pairs, CalibrationTarget, Decisions, DistanceBasis};
use codespace_core::export::NetworkExport;
use codespace_core::harness::{run_experiment, GroupSpec, RunPlan, RunProviders};
use codespace_core::ingest::{ingest_codebook, serialize_codebook, IngestOptions};
use codespace_core::merge::run_pipeline_traced;
use codespace_core::metrics::{compute_observations, evaluate, RunMetadata};
use codespace_core::model::{AggregateCodeSpace, Codebook, Condition, Dataset};
use codespace_core::{DataError, ProviderError};
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::error::CliError;

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| DataError::io(path, e).into())
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::from(DataError::io(parent, e)))?;
    }
    fs::write(path, contents).map_err(|e| DataError::io(path, e).into())
}

/// Writes to stdout; a closed pipe is not an error since results are also
/// on disk.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn print_json(value: &Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(value).expect("json value serializes")));
}

fn load_dataset(path: Option<&PathBuf>) -> Result<Option<Dataset>, CliError> {
    path.map(|p| Ok(Dataset::from_json(&read(p)?)?)).transpose()
}

fn dataset(cfg: &Resolved) -> Result<Option<Dataset>, CliError> {
    load_dataset(cfg.file.dataset.as_ref())
}

/// Ingests every configured codebook, logging warnings.
fn codebooks(cfg: &Resolved, dataset: Option<&Dataset>) -> Result<Vec<(Codebook, Vec<String>)>, CliError> {
    if cfg.file.codebooks.is_empty() {
        return Err(DataError::TooFewCodebooks(0).into());
    }
    cfg.file
        .codebooks
        .iter()
        .map(|path| {
            let opts = IngestOptions {
                dataset,
                strict: cfg.file.strict,
            };
            let ingested = ingest_codebook(&read(path)?, opts)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            for w in &ingested.warnings {
                log::warn!("{}: {w}", path.display());
            }
            Ok((ingested.codebook, ingested.warnings))
        })
        .collect()
}

fn books_only(cfg: &Resolved, dataset: Option<&Dataset>) -> Result<Vec<Codebook>, CliError> {
    Ok(codebooks(cfg, dataset)?.into_iter().map(|(b, _)| b).collect())
}

fn load_acs(path: &Path) -> Result<AggregateCodeSpace, CliError> {
    let acs = AggregateCodeSpace::from_json(&read(path)?)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    acs.validate()?;
    Ok(acs)
}

fn with_groups(books: &[Codebook], specs: &[String]) -> Result<Vec<Codebook>, CliError> {
    let mut out = books.to_vec();
    for spec in specs {
        let group = GroupSpec::parse(spec, books).map_err(CliError::config)?;
        out.push(group.synthesize(books)?);
    }
    Ok(out)
}

/// `condition` is the stage the command runs to when it runs the pipeline
/// for a single condition.
fn plan_json(cfg: &Resolved, command: &str, condition: Option<Condition>, needs_llm: bool, extra: Value) -> Value {
    let mut merge = serde_json::to_value(&cfg.merge).expect("merge config serializes");
    match condition {
        Some(c) => merge["condition"] = json!(c),
        None => {
            merge.as_object_mut().map(|m| m.remove("condition"));
        }
    }
    json!({
        "command": command,
        "config": cfg.path,
        "dataset": cfg.file.dataset,
        "codebooks": cfg.file.codebooks,
        "output_dir": cfg.output_dir(),
        "merge": merge,
        "providers": cfg.provider_summary(needs_llm),
        "details": extra,
    })
}

pub fn ingest(cfg: &Resolved, dry_run: bool) -> Result<(), CliError> {
    let out = cfg.output_dir().join("codebooks");
    if dry_run {
        print_json(&plan_json(cfg, "ingest", None, false, json!({ "writes": out })));
        return Ok(());
    }
    let ds = dataset(cfg)?;
    let mut summary = Vec::new();
    for (book, warnings) in codebooks(cfg, ds.as_ref())? {
        write(&out.join(format!("{}.json", book.coder_id)), &serialize_codebook(&book)?)?;
        summary.push(json!({
            "coder_id": book.coder_id,
            "kind": book.kind,
            "codes": book.len(),
            "warnings": warnings,
        }));
    }
    print_json(&Value::Array(summary));
    Ok(())
}

fn providers_for(cfg: &Resolved, condition: Condition, seed: u64) -> Result<RunProviders, CliError> {
    let embedder = cfg.embedder()?;
    let llm = if condition.needs_llm() { Some(cfg.llm(seed)?) } else { None };
    Ok(RunProviders { embedder, llm })
}

/// Runs the pipeline up to `condition`.
fn pipeline(
    cfg: &Resolved,
    condition: Condition,
    seed: u64,
) -> Result<(AggregateCodeSpace, Vec<(Condition, usize)>), CliError> {
    let providers = providers_for(cfg, condition, seed)?;
    let ds = dataset(cfg)?;
    let books = books_only(cfg, ds.as_ref())?;
    let config = cfg.merge.clone().at(condition);
    let (acs, trace) = run_pipeline_traced(
        &books,
        &config,
        providers.embedder.as_ref(),
        providers.llm.as_deref(),
        ds.as_ref(),
    )?;
    Ok((acs, trace.stage_counts))
}

pub fn merge(cfg: &Resolved, condition: Condition, seed: u64, dry_run: bool) -> Result<(), CliError> {
    let out = cfg.output_dir();
    let (acs_path, network_path) = (out.join("acs.json"), out.join("network.json"));
    if dry_run {
        let details = json!({
            "condition": condition,
            "seed": seed,
            "writes": [acs_path, network_path],
        });
        print_json(&plan_json(cfg, "merge", Some(condition), condition.needs_llm(), details));
        return Ok(());
    }
    let (acs, stages) = pipeline(cfg, condition, seed)?;
    write(&acs_path, &acs.to_json())?;
    write(&network_path, &NetworkExport::build(&acs, None).to_json())?;
    print_json(&json!({
        "condition": condition,
        "codes": acs.len(),
        "neighbor_pairs": acs.neighbor_pairs().len(),
        "stage_counts": stages,
        "config_fingerprint": acs.config_fingerprint,
        "acs": acs_path,
        "network": network_path,
    }));
    Ok(())
}

pub fn evaluate_cmd(cfg: &Resolved, acs_path: &Path, groups: &[String], dry_run: bool) -> Result<(), CliError> {
    let out = cfg.output_dir();
    let (csv_path, json_path) = (out.join("metrics.csv"), out.join("metrics.json"));
    if dry_run {
        let details = json!({ "acs": acs_path, "groups": groups, "writes": [csv_path, json_path] });
        print_json(&plan_json(cfg, "evaluate", None, false, details));
        return Ok(());
    }
    let acs = load_acs(acs_path)?;
    let ds = dataset(cfg)?;
    let books = with_groups(&books_only(cfg, ds.as_ref())?, groups)?;
    let report = evaluate(&acs, &books, RunMetadata::for_acs(&acs, Vec::new()))?;
    let csv = report.to_csv();
    write(&csv_path, &csv)?;
    write(&json_path, &report.to_json())?;
    emit(&csv);
    Ok(())
}

pub struct ExperimentArgs {
    pub repeats: Option<u32>,
    pub seed: Option<u64>,
    pub conditions: Vec<Condition>,
    pub groups: Vec<String>,
}

pub fn experiment(cfg: &Resolved, args: ExperimentArgs, dry_run: bool) -> Result<(), CliError> {
    let mut plan: RunPlan = cfg.run_plan();
    if let Some(r) = args.repeats {
        plan.repeats = r;
    }
    if let Some(s) = args.seed {
        plan.seed = s;
    }
    if !args.conditions.is_empty() {
        plan.conditions = args.conditions;
    }
    let specs: Vec<String> = cfg.file.experiment.groups.iter().chain(&args.groups).cloned().collect();
    let out = cfg.output_dir();
    let needs_llm = plan.conditions.iter().any(|c| c.needs_llm());
    if dry_run {
        let details = json!({
            "plan": plan,
            "groups": specs,
            "runs": plan.conditions.len() as u64 * u64::from(plan.repeats),
            "writes": out,
        });
        print_json(&plan_json(cfg, "experiment", None, needs_llm, details));
        return Ok(());
    }
    // build once up front so configuration problems surface before any run
    for &c in &plan.conditions {
        providers_for(cfg, c, plan.seed)?;
    }
    let ds = dataset(cfg)?;
    let alt = load_dataset(cfg.file.alternate_dataset.as_ref())?;
    let books = books_only(cfg, ds.as_ref())?;
    for spec in &specs {
        plan.groups.push(GroupSpec::parse(spec, &books).map_err(CliError::config)?);
    }
    let factory = |condition: Condition, seed: u64| -> Result<RunProviders, ProviderError> {
        providers_for(cfg, condition, seed).map_err(|e| ProviderError::Config(e.message))
    };
    let outcome = run_experiment(&plan, &books, &cfg.merge, &factory, ds.as_ref(), alt.as_ref())?;
    outcome.persist(&out)?;
    print_json(&json!({
        "runs": outcome.runs.len(),
        "failures": outcome.failures.len(),
        "max_cov": outcome.stability.max_cov(),
        "output_dir": out,
    }));
    Ok(())
}

pub struct CalibrateArgs {
    pub threshold: f64,
    pub count: usize,
    pub basis: DistanceBasis,
    pub condition: Condition,
    pub acs: Option<PathBuf>,
    pub decisions: Option<PathBuf>,
    pub target: CalibrationTarget,
}

pub fn calibrate_sample(cfg: &Resolved, args: CalibrateArgs, dry_run: bool) -> Result<(), CliError> {
    let out = cfg.output_dir();
    if let Some(path) = &args.decisions {
        let rec_path = out.join("recommendation.json");
        if dry_run {
            let details = json!({ "decisions": path, "target": args.target, "writes": rec_path });
            print_json(&plan_json(cfg, "calibrate-sample", None, false, details));
            return Ok(());
        }
        let text = String::from_utf8_lossy(&read(path)?).into_owned();
        let decisions = Decisions::from_json(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let rec = recommend_threshold(&decisions, args.target);
        let body = serde_json::to_string_pretty(&rec).expect("recommendation serializes");
        write(&rec_path, &body)?;
        emit(&format!("{body}\n"));
        return Ok(());
    }
    if !(args.threshold > 0.0 && args.threshold <= 2.0) {
        return Err(CliError::config(format!("threshold {} outside (0, 2]", args.threshold)));
    }
    if args.count == 0 {
        return Err(CliError::config("count must be >= 1"));
    }
    let pairs_path = out.join("pairs.json");
    if dry_run {
        let details = json!({
            "threshold": args.threshold,
            "count": args.count,
            "basis": args.basis,
            "acs": args.acs,
            "condition": args.acs.is_none().then_some(args.condition),
            "writes": pairs_path,
        });
        let stage = args.acs.is_none().then_some(args.condition);
        print_json(&plan_json(cfg, "calibrate-sample", stage, stage.is_some_and(|c| c.needs_llm()), details));
        return Ok(());
    }
    let acs = match &args.acs {
        Some(p) => load_acs(p)?,
        None => pipeline(cfg, args.condition, 0)?.0,
    };
    let ds = dataset(cfg)?;
    let embedder = cfg.embedder()?;
    let sample = sample_pairs(&acs, embedder.as_ref(), args.basis, args.threshold, args.count, ds.as_ref())?;
    for w in &sample.warnings {
        log::warn!("{w}");
    }
    let body = serde_json::to_string_pretty(&sample).expect("pair sample serializes");
    write(&pairs_path, &body)?;
    emit(&format!("{body}\n"));
    Ok(())
}

pub fn export_network(cfg: &Resolved, acs_path: &Path, groups: &[String], dry_run: bool) -> Result<(), CliError> {
    let path = cfg.output_dir().join("network.json");
    if dry_run {
        let details = json!({ "acs": acs_path, "groups": groups, "writes": path });
        print_json(&plan_json(cfg, "export-network", None, false, details));
        return Ok(());
    }
    let acs = load_acs(acs_path)?;
    let ds = dataset(cfg)?;
    let books = with_groups(&books_only(cfg, ds.as_ref())?, groups)?;
    let m = compute_observations(&acs, &books)?;
    let export = NetworkExport::build(&acs, Some(&m));
    write(&path, &export.to_json())?;
    print_json(&json!({
        "nodes": export.nodes.len(),
        "edges": export.edges.len(),
        "network": path,
    }));
    Ok(())
}
