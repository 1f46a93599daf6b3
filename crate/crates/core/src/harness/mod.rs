//! Repeated-run experiments over conditions, with coder variants and
//! stability reports.

mod stability;
mod variants;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use stability::{Metric, MetricStats, RankComparison, Ranking, StabilityReport};
pub use variants::{
    code_dataset_with_llm, flood_synthetic, flooding_prompt, hallucinate_synthetic, make_variant,
    make_variant_with_llm, VariantKind, VariantOptions,
};

use crate::error::{DataError, ProviderError};
use crate::merge::{run_pipeline, MergeConfig, MergeError};
use crate::metrics::{evaluate, MetricsError, MetricsReport, RunMetadata};
use crate::model::{synthesize_group, AggregateCodeSpace, Codebook, CoderKind, Condition, Dataset};
use crate::providers::{Embedder, Llm};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run plan: {0}")]
    Plan(String),
    #[error("hallucinating variant of `{0}` needs an alternate dataset")]
    MissingAlternateDataset(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{failed} of {total} runs failed; first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A coder whose codebook is replaced by a variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub replace: String,
    pub kind: VariantKind,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    3
}

/// A named group of coders scored alongside the individuals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub members: Vec<String>,
}

impl GroupSpec {
    /// `ai` (machine coders), `human`, `all`, or `name=a,b,...`.
    pub fn parse(spec: &str, codebooks: &[Codebook]) -> Result<Self, String> {
        let pick = |kind: Option<CoderKind>| {
            codebooks
                .iter()
                .filter(|cb| kind.is_none_or(|k| cb.kind == k))
                .map(|cb| cb.coder_id.clone())
                .collect::<Vec<_>>()
        };
        let (name, members) = match spec.trim() {
            "ai" | "machine" => ("ai".to_string(), pick(Some(CoderKind::Machine))),
            "human" => ("human".to_string(), pick(Some(CoderKind::Human))),
            "all" => ("all".to_string(), pick(None)),
            other => {
                let (name, list) = other
                    .split_once('=')
                    .ok_or_else(|| format!("group `{other}`: expected ai, human, all or name=a,b"))?;
                let members: Vec<String> = list
                    .split(',')
                    .map(|m| m.trim().to_string())
                    .filter(|m| !m.is_empty())
                    .collect();
                (name.trim().to_string(), members)
            }
        };
        if members.is_empty() {
            return Err(format!("group `{name}` has no members"));
        }
        if let Some(m) = members
            .iter()
            .find(|m| !codebooks.iter().any(|cb| &cb.coder_id == *m))
        {
            return Err(format!("group `{name}` names unknown coder `{m}`"));
        }
        Ok(GroupSpec { name, members })
    }

    pub fn synthesize(&self, codebooks: &[Codebook]) -> Result<Codebook, DataError> {
        let members: Vec<&Codebook> = self
            .members
            .iter()
            .map(|m| {
                codebooks
                    .iter()
                    .find(|cb| &cb.coder_id == m)
                    .ok_or_else(|| DataError::UnknownCoder(m.clone()))
            })
            .collect::<Result<_, _>>()?;
        synthesize_group(&self.name, &members)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub conditions: Vec<Condition>,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub substitutions: Vec<Substitution>,
}

fn default_repeats() -> u32 {
    10
}

impl Default for RunPlan {
    fn default() -> Self {
        RunPlan {
            conditions: Condition::ALL.to_vec(),
            repeats: default_repeats(),
            seed: 0,
            groups: Vec::new(),
            substitutions: Vec::new(),
        }
    }
}

impl RunPlan {
    pub fn validate(&self, codebooks: &[Codebook]) -> Result<(), HarnessError> {
        if self.repeats < 1 {
            return Err(HarnessError::Plan("repeats must be >= 1".into()));
        }
        if self.conditions.is_empty() {
            return Err(HarnessError::Plan("no conditions selected".into()));
        }
        for s in &self.substitutions {
            if !codebooks.iter().any(|cb| cb.coder_id == s.replace) {
                return Err(HarnessError::Plan(format!(
                    "substitution names unknown coder `{}`",
                    s.replace
                )));
            }
        }
        Ok(())
    }

    /// Seed of one run, derived from the plan seed, condition and index.
    pub fn run_seed(&self, condition: Condition, run: u32) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update([condition.stage()]);
        h.update(run.to_le_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Providers for one run.
pub struct RunProviders {
    pub embedder: Box<dyn Embedder>,
    pub llm: Option<Box<dyn Llm>>,
}

/// Builds providers per run so stochastic backends can be seeded per run.
pub trait ProviderFactory: Sync {
    fn providers(&self, condition: Condition, seed: u64) -> Result<RunProviders, ProviderError>;
}

impl<F> ProviderFactory for F
where
    F: Fn(Condition, u64) -> Result<RunProviders, ProviderError> + Sync,
{
    fn providers(&self, condition: Condition, seed: u64) -> Result<RunProviders, ProviderError> {
        self(condition, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub condition: Condition,
    pub run: u32,
    pub seed: u64,
    pub acs: AggregateCodeSpace,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub condition: Condition,
    pub run: u32,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    pub stability: StabilityReport,
}

impl ExperimentOutcome {
    pub fn reports(&self) -> Vec<MetricsReport> {
        self.runs.iter().map(|r| r.report.clone()).collect()
    }

    /// Writes `runs/<condition>/<n>/{acs.json,metrics.csv}`, a combined
    /// `metrics.csv`, `stability.json` and `failures.json` under `root`.
    pub fn persist(&self, root: &Path) -> Result<(), HarnessError> {
        let write = |path: PathBuf, contents: &str| -> Result<(), HarnessError> {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            fs::write(&path, contents).map_err(|source| HarnessError::Io { path, source })
        };
        for r in &self.runs {
            let dir = root.join("runs").join(r.condition.to_string()).join(r.run.to_string());
            write(dir.join("acs.json"), &r.acs.to_json())?;
            write(dir.join("metrics.csv"), &r.report.to_csv())?;
        }
        write(root.join("metrics.csv"), &MetricsReport::csv_of(&self.reports()))?;
        write(root.join("stability.json"), &self.stability.to_json())?;
        write(
            root.join("failures.json"),
            &serde_json::to_string_pretty(&self.failures).expect("failures serialize"),
        )?;
        Ok(())
    }
}

/// Codebooks with the plan's substitutions applied.
pub fn substituted_codebooks(
    plan: &RunPlan,
    codebooks: &[Codebook],
    alternate: Option<&Dataset>,
) -> Result<Vec<Codebook>, HarnessError> {
    codebooks
        .iter()
        .map(|cb| match plan.substitutions.iter().find(|s| s.replace == cb.coder_id) {
            Some(s) => make_variant(
                cb,
                s.kind,
                &VariantOptions {
                    k: s.k,
                    seed: plan.seed,
                    alternate,
                },
            ),
            None => Ok(cb.clone()),
        })
        .collect()
}

#[derive(Debug, Error)]
enum RunError {
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Runs the pipeline and metrics once.
pub fn run_once(
    codebooks: &[Codebook],
    groups: &[GroupSpec],
    config: &MergeConfig,
    providers: &RunProviders,
    dataset: Option<&Dataset>,
    run: u32,
    seed: u64,
) -> Result<(AggregateCodeSpace, MetricsReport), String> {
    let inner = || -> Result<_, RunError> {
        let llm = providers.llm.as_deref();
        let acs = run_pipeline(codebooks, config, providers.embedder.as_ref(), llm, dataset)?;
        let mut books = codebooks.to_vec();
        for g in groups {
            books.push(g.synthesize(codebooks)?);
        }
        let mut ids = vec![providers.embedder.id()];
        if config.condition.needs_llm() {
            ids.extend(llm.map(|l| l.id()));
        }
        let metadata = RunMetadata {
            condition: config.condition,
            config_fingerprint: acs.config_fingerprint.clone(),
            providers: ids,
            run,
            seed: Some(seed),
        };
        let report = evaluate(&acs, &books, metadata)?;
        Ok((acs, report))
    };
    inner().map_err(|e| e.to_string())
}

/// Runs `repeats × conditions` pipeline and metrics runs in parallel.
/// Failed runs are recorded; more than half failing aborts.
pub fn run_experiment(
    plan: &RunPlan,
    codebooks: &[Codebook],
    config: &MergeConfig,
    factory: &dyn ProviderFactory,
    dataset: Option<&Dataset>,
    alternate: Option<&Dataset>,
) -> Result<ExperimentOutcome, HarnessError> {
    plan.validate(codebooks)?;
    config.validate().map_err(|e| HarnessError::Plan(e.to_string()))?;
    let books = substituted_codebooks(plan, codebooks, alternate)?;
    for g in &plan.groups {
        g.synthesize(&books)?;
    }

    let jobs: Vec<(Condition, u32)> = plan
        .conditions
        .iter()
        .flat_map(|&c| (0..plan.repeats).map(move |r| (c, r)))
        .collect();
    let results: Vec<Result<RunRecord, RunFailure>> = jobs
        .par_iter()
        .map(|&(condition, run)| {
            let seed = plan.run_seed(condition, run);
            let fail = |message: String| RunFailure {
                condition,
                run,
                seed,
                message,
            };
            let providers = factory
                .providers(condition, seed)
                .map_err(|e| fail(e.to_string()))?;
            let cfg = config.clone().at(condition);
            let (acs, report) =
                run_once(&books, &plan.groups, &cfg, &providers, dataset, run, seed).map_err(fail)?;
            Ok(RunRecord {
                condition,
                run,
                seed,
                acs,
                report,
            })
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => runs.push(rec),
            Err(f) => {
                log::warn!("run {} of {} failed: {}", f.run, f.condition, f.message);
                failures.push(f);
            }
        }
    }
    if failures.len() * 2 > jobs.len() {
        return Err(HarnessError::TooManyFailures {
            failed: failures.len(),
            total: jobs.len(),
            first: failures[0].message.clone(),
        });
    }
    let stability = StabilityReport::from_reports(&runs.iter().map(|r| r.report.clone()).collect::<Vec<_>>());
    Ok(ExperimentOutcome {
        runs,
        failures,
        stability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Code;
    use crate::providers::{TemplateLlm, TrigramEmbedder};

    fn book(id: &str, kind: CoderKind, labels: &[(&str, &[&str])]) -> Codebook {
        Codebook {
            coder_id: id.into(),
            kind,
            codes: labels
                .iter()
                .map(|(l, ex)| Code {
                    label: l.to_string(),
                    definition: None,
                    examples: ex.iter().map(|s| s.to_string()).collect(),
                    owner: id.into(),
                })
                .collect(),
        }
    }

    fn books() -> Vec<Codebook> {
        vec![
            book("h", CoderKind::Human, &[("asking for help", &["m1"]), ("praise", &["m2"])]),
            book("m", CoderKind::Machine, &[("asking for help", &["m1"]), ("bug report", &["m3"])]),
        ]
    }

    fn deterministic(_: Condition, _: u64) -> Result<RunProviders, ProviderError> {
        Ok(RunProviders {
            embedder: Box::new(TrigramEmbedder),
            llm: Some(Box::new(TemplateLlm)),
        })
    }

    #[test]
    fn group_specs() {
        let b = books();
        assert_eq!(GroupSpec::parse("ai", &b).unwrap().members, vec!["m"]);
        assert_eq!(GroupSpec::parse("all", &b).unwrap().members, vec!["h", "m"]);
        let g = GroupSpec::parse("pair = h, m", &b).unwrap();
        assert_eq!((g.name.as_str(), g.members.len()), ("pair", 2));
        assert!(GroupSpec::parse("x=h,zz", &b).is_err());
        assert!(GroupSpec::parse("bogus", &b).is_err());
    }

    #[test]
    fn deterministic_repeats_have_zero_cov() {
        let plan = RunPlan {
            conditions: vec![Condition::C2, Condition::C4],
            repeats: 3,
            groups: vec![GroupSpec::parse("all", &books()).unwrap()],
            ..RunPlan::default()
        };
        let out = run_experiment(&plan, &books(), &MergeConfig::default(), &deterministic, None, None)
            .unwrap();
        assert_eq!(out.runs.len(), 6);
        assert!(out.failures.is_empty());
        assert_eq!(out.stability.max_cov(), Some(0.0));
        let all = out.stability.get("all", Metric::Coverage, Condition::C4).unwrap();
        assert_eq!(all.mean, 1.0);

        let dir = tempfile::tempdir().unwrap();
        out.persist(dir.path()).unwrap();
        for f in ["runs/c2/0/acs.json", "runs/c4/2/metrics.csv", "metrics.csv", "stability.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn failures_are_recorded_then_abort() {
        let plan = RunPlan {
            conditions: vec![Condition::C3],
            repeats: 4,
            ..RunPlan::default()
        };
        let flaky = |_: Condition, seed: u64| -> Result<RunProviders, ProviderError> {
            if seed % 4 == 0 {
                Err(ProviderError::EmptyText)
            } else {
                deterministic(Condition::C3, seed)
            }
        };
        let failing = plan
            .conditions
            .iter()
            .flat_map(|&c| (0..4).map(move |r| (c, r)))
            .filter(|&(c, r)| plan.run_seed(c, r) % 4 == 0)
            .count();
        match run_experiment(&plan, &books(), &MergeConfig::default(), &flaky, None, None) {
            Ok(out) => {
                assert!(failing * 2 <= 4);
                assert_eq!(out.failures.len(), failing);
                assert_eq!(out.runs.len(), 4 - failing);
            }
            Err(HarnessError::TooManyFailures { failed, .. }) => assert_eq!(failed, failing),
            Err(e) => panic!("{e}"),
        }
        let none = |_: Condition, _: u64| -> Result<RunProviders, ProviderError> {
            Err(ProviderError::EmptyText)
        };
        assert!(matches!(
            run_experiment(&plan, &books(), &MergeConfig::default(), &none, None, None),
            Err(HarnessError::TooManyFailures { failed: 4, total: 4, .. })
        ));
    }

    #[test]
    fn plan_validation() {
        let mut plan = RunPlan::default();
        plan.substitutions.push(Substitution {
            replace: "ghost".into(),
            kind: VariantKind::Flooding,
            k: 2,
        });
        assert!(matches!(plan.validate(&books()), Err(HarnessError::Plan(_))));
        plan.substitutions.clear();
        plan.repeats = 0;
        assert!(plan.validate(&books()).is_err());
    }
}
