//! Accuracy/F1 metrics and the leave-one-domain-out protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{split_by_domain, DataError, Dataset, NewsItem, Verdict};
use crate::judge::{DecisionRule, Judge, JudgeConfig, JudgeError, Judgement};
use crate::optimizer::{
    load_checkpoint, optimize, render_exemplars, select_exemplars, JudgeScorer, LedgerEntry, LlmProposer,
    OptimizerConfig, OptimizerError, OptimizerState,
};
use crate::prompts::PromptRegistry;
use crate::provider::ChatProvider;
use crate::seeds::substream;
use crate::tasks::{build_tasks, cap_domain, sample_demonstrations, task_archive, Reports, TaskError, TaskSetConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    /// F1 with fake as the positive class.
    pub f1_fake: f64,
    pub f1_macro: f64,
    pub n: usize,
    pub confusion: Confusion,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("demonstration {item} comes from target domain {domain}")]
    CrossDomainLeak { item: String, domain: String },
    #[error("leave-one-domain-out needs at least two domains, found {0}")]
    SingleDomain(usize),
    #[error("no report for item {0}")]
    MissingReport(String),
    #[error("no n_tasks candidates given")]
    NoCandidates,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

pub fn compute_metrics(preds: &[Verdict], golds: &[Verdict]) -> Result<EvalMetrics, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = Confusion::default();
    for (p, g) in preds.iter().zip(golds) {
        match (p, g) {
            (Verdict::Fake, Verdict::Fake) => c.tp += 1,
            (Verdict::Fake, Verdict::Real) => c.fp += 1,
            (Verdict::Real, Verdict::Fake) => c.fn_ += 1,
            (Verdict::Real, Verdict::Real) => c.tn += 1,
        }
    }
    let n = preds.len();
    let f1_fake = f1(c.tp, c.fp, c.fn_);
    let f1_real = f1(c.tn, c.fn_, c.fp);
    Ok(EvalMetrics {
        accuracy: (c.tp + c.tn) as f64 / n as f64,
        f1_fake,
        f1_macro: (f1_fake + f1_real) / 2.0,
        n,
        confusion: c,
    })
}

/// Per-item inference record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub domain: String,
    pub gold: Verdict,
    pub verdict: Verdict,
    pub correct: bool,
    pub demo_ids: Vec<String>,
    pub judgements: Vec<Judgement>,
    /// No rule produced a usable verdict; `verdict` is the tie-break value.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEvaluation {
    pub metrics: EvalMetrics,
    pub items: Vec<ItemResult>,
}

/// Infers every target item with `rules`, each item judged against
/// demonstrations drawn from `demo_pool` (which must not share a domain with
/// the target).
pub fn evaluate_target(
    judge: &Judge<'_>,
    target: &Dataset,
    reports: &Reports,
    demo_pool: &[&NewsItem],
    demos_per_item: usize,
    rules: &[DecisionRule],
    seed: u64,
) -> Result<TargetEvaluation, EvalError> {
    if target.is_empty() {
        return Err(EvalError::Empty);
    }
    if rules.is_empty() {
        return Err(JudgeError::NoRules.into());
    }
    let target_domains = target.domains();
    if let Some(leak) = demo_pool.iter().find(|d| target_domains.contains(&d.domain)) {
        return Err(EvalError::CrossDomainLeak {
            item: leak.id.clone(),
            domain: leak.domain.clone(),
        });
    }
    let items = target
        .items()
        .par_iter()
        .map(|item| {
            let report = reports
                .get(&item.id)
                .ok_or_else(|| EvalError::MissingReport(item.id.clone()))?;
            let mut rng = substream(seed, &format!("eval-demos/{}", item.id));
            let demos = sample_demonstrations(demo_pool, demos_per_item, &mut rng);
            let (verdict, judgements, fallback) = match judge.infer(item, report, &demos, rules) {
                Ok(inf) => (inf.verdict, inf.judgements, false),
                Err(JudgeError::NoUsableVerdicts) => {
                    tracing::warn!(item = %item.id, "no usable verdict; using tie-break");
                    (judge.config().tie_break, Vec::new(), true)
                }
                Err(e) => return Err(e.into()),
            };
            Ok(ItemResult {
                item_id: item.id.clone(),
                domain: item.domain.clone(),
                gold: item.label,
                correct: verdict == item.label,
                verdict,
                demo_ids: demos.iter().map(|d| d.id.clone()).collect(),
                judgements,
                fallback,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let preds: Vec<Verdict> = items.iter().map(|r| r.verdict).collect();
    let golds: Vec<Verdict> = items.iter().map(|r| r.gold).collect();
    Ok(TargetEvaluation {
        metrics: compute_metrics(&preds, &golds)?,
        items,
    })
}

/// Settings shared by every fold of a protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub seed: u64,
    pub tasks: TaskSetConfig,
    pub optimizer: OptimizerConfig,
    /// When false the initial rule is used alone and no tasks are built.
    pub optimize: bool,
}

pub struct Engine<'a> {
    pub prompts: &'a PromptRegistry,
    pub provider: &'a dyn ChatProvider,
    pub judge: &'a JudgeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub target: String,
    pub sources: Vec<String>,
    pub n_tasks: usize,
    pub rules: Vec<RankedRule>,
    pub optimizer: Option<OptimizerState>,
    pub metrics: EvalMetrics,
    pub items: Vec<ItemResult>,
    pub warnings: Vec<String>,
}

/// A rule used at inference; accuracy is absent when optimization was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRule {
    pub rule: DecisionRule,
    pub accuracy: Option<f64>,
}

impl From<LedgerEntry> for RankedRule {
    fn from(e: LedgerEntry) -> Self {
        Self {
            rule: e.rule,
            accuracy: Some(e.accuracy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub accuracy: f64,
    pub f1_fake: f64,
    pub f1_macro: f64,
}

/// Unweighted mean over folds.
pub fn average(rows: &[EvalMetrics]) -> Option<AverageMetrics> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(AverageMetrics {
        accuracy: rows.iter().map(|m| m.accuracy).sum::<f64>() / n,
        f1_fake: rows.iter().map(|m| m.f1_fake).sum::<f64>() / n,
        f1_macro: rows.iter().map(|m| m.f1_macro).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodoResult {
    pub folds: Vec<FoldResult>,
    pub average: AverageMetrics,
}

/// Where a fold keeps its checkpoint and partial results.
#[derive(Debug, Clone)]
pub struct FoldStorage {
    pub dir: PathBuf,
    pub resume: bool,
}

impl FoldStorage {
    fn fold_dir(&self, target: &str) -> PathBuf {
        self.dir.join(crate::evidence::normalize_query(target))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    crate::io::write_json(path, value).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Holds out `target`, optimizes rules on tasks built from the remaining
/// domains, and evaluates on the held-out items.
pub fn run_fold(
    engine: &Engine<'_>,
    parts: &BTreeMap<String, Dataset>,
    target: &str,
    reports: &Reports,
    config: &ProtocolConfig,
    storage: Option<&FoldStorage>,
) -> Result<FoldResult, EvalError> {
    let target_set = parts
        .get(target)
        .ok_or(EvalError::SingleDomain(parts.len()))?;
    let sources: BTreeMap<String, Dataset> = parts
        .iter()
        .filter(|(d, _)| d.as_str() != target)
        .map(|(d, ds)| (d.clone(), cap_domain(ds, config.tasks.per_domain_cap, config.seed)))
        .collect();
    if sources.is_empty() {
        return Err(EvalError::SingleDomain(parts.len()));
    }
    let fold_dir = storage.map(|s| s.fold_dir(target));
    if let Some(dir) = &fold_dir {
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }

    let judge = Judge::new(engine.prompts, engine.provider, engine.judge);
    let r0 = DecisionRule::manual(engine.prompts.initial_rule().trim());
    let mut warnings = Vec::new();
    let (rules, optimizer_state, n_tasks) = if config.optimize {
        let tasks = build_tasks(&sources, reports, &config.tasks, config.seed)?;
        if let Some(dir) = &fold_dir {
            crate::io::write_jsonl(&dir.join("tasks.jsonl"), &task_archive(&tasks, &config.tasks, config.seed))
                .map_err(|source| EvalError::Io {
                    path: dir.join("tasks.jsonl").display().to_string(),
                    source,
                })?;
        }
        let exemplars = render_exemplars(&select_exemplars(&tasks, config.optimizer.exemplar_count, config.seed));
        let nonce = Some(format!("seed{}:{}", config.seed, target));
        let proposer = LlmProposer::new(engine.prompts, engine.provider, &config.optimizer, exemplars, nonce);
        let scorer = JudgeScorer::new(&judge, &tasks);
        let checkpoint = fold_dir.as_ref().map(|d| d.join("optimizer_state.json"));
        let state = match (&checkpoint, storage) {
            (Some(p), Some(s)) if s.resume && p.exists() => load_checkpoint(p)?,
            _ => OptimizerState::default(),
        };
        let outcome = optimize(&r0, &scorer, &proposer, &config.optimizer, state, checkpoint.as_deref())?;
        if let Some(dir) = &fold_dir {
            let path = dir.join("judgements.jsonl");
            let log = scorer.take_log();
            let resumed = storage.is_some_and(|s| s.resume);
            let written = if resumed {
                crate::io::append_jsonl(&path, &log)
            } else {
                crate::io::write_jsonl(&path, &log)
            };
            written.map_err(|source| EvalError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        warnings.extend(outcome.warnings);
        let rules = outcome.top.into_iter().map(RankedRule::from).collect();
        (rules, Some(outcome.state), tasks.len())
    } else {
        (vec![RankedRule { rule: r0, accuracy: None }], None, 0)
    };

    let pool: Vec<&NewsItem> = sources.values().flat_map(|d| d.items()).collect();
    let rule_list: Vec<DecisionRule> = rules.iter().map(|e| e.rule.clone()).collect();
    let evaluation = evaluate_target(
        &judge,
        target_set,
        reports,
        &pool,
        config.tasks.demos_per_task,
        &rule_list,
        config.seed,
    )?;
    let fallbacks = evaluation.items.iter().filter(|i| i.fallback).count();
    if fallbacks > 0 {
        warnings.push(format!("{fallbacks} item(s) had no usable verdict and took the tie-break"));
    }
    let result = FoldResult {
        target: target.to_string(),
        sources: sources.keys().cloned().collect(),
        n_tasks,
        rules,
        optimizer: optimizer_state,
        metrics: evaluation.metrics,
        items: evaluation.items,
        warnings,
    };
    if let Some(dir) = &fold_dir {
        write_json(&dir.join("fold.json"), &result)?;
    }
    Ok(result)
}

/// Every domain in turn is the target; the rest are sources.
pub fn leave_one_domain_out(
    engine: &Engine<'_>,
    corpus: &Dataset,
    reports: &Reports,
    config: &ProtocolConfig,
    storage: Option<&FoldStorage>,
) -> Result<LodoResult, EvalError> {
    let parts = split_by_domain(corpus)?;
    if parts.len() < 2 {
        return Err(EvalError::SingleDomain(parts.len()));
    }
    let domains: Vec<&String> = parts.keys().collect();
    let folds = domains
        .par_iter()
        .map(|d| run_fold(engine, &parts, d, reports, config, storage))
        .collect::<Result<Vec<_>, EvalError>>()?;
    let rows: Vec<EvalMetrics> = folds.iter().map(|f| f.metrics).collect();
    let average = average(&rows).expect("at least two folds");
    Ok(LodoResult { folds, average })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_tasks: usize,
    pub average: AverageMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Candidate with the highest mean accuracy; the smaller wins a tie.
    pub best_n_tasks: usize,
}

/// Grid search over the task-set size: each candidate runs
/// leave-one-domain-out over the source corpus alone.
pub fn nvt_sweep(
    engine: &Engine<'_>,
    sources: &Dataset,
    reports: &Reports,
    config: &ProtocolConfig,
    candidates: &[usize],
) -> Result<SweepResult, EvalError> {
    let candidates: BTreeSet<usize> = candidates.iter().copied().collect();
    if candidates.is_empty() {
        return Err(EvalError::NoCandidates);
    }
    let mut rows = Vec::new();
    for n in candidates {
        let cfg = ProtocolConfig {
            tasks: TaskSetConfig {
                n_tasks: n,
                ..config.tasks.clone()
            },
            ..config.clone()
        };
        let lodo = leave_one_domain_out(engine, sources, reports, &cfg, None)?;
        tracing::info!(n_tasks = n, accuracy = lodo.average.accuracy, "sweep point");
        rows.push(SweepRow {
            n_tasks: n,
            average: lodo.average,
        });
    }
    let best_n_tasks = rows
        .iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if b.average.accuracy >= r.average.accuracy => Some(b),
            _ => Some(r),
        })
        .map(|r| r.n_tasks)
        .expect("non-empty");
    Ok(SweepResult { rows, best_n_tasks })
}
