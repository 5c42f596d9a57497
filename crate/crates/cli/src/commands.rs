use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use misinfo_core::analysis::Analyzer;
use misinfo_core::domain::{load_dataset, split_by_domain, Dataset, NewsItem};
use misinfo_core::eval::{
    evaluate_target, leave_one_domain_out, nvt_sweep, AverageMetrics, Engine, EvalMetrics, FoldStorage, ItemResult,
    ProtocolConfig, RankedRule, SweepRow,
};
use misinfo_core::evidence::Retriever;
use misinfo_core::judge::{DecisionRule, Judge};
use misinfo_core::optimizer::{
    load_checkpoint, optimize, render_exemplars, select_exemplars, JudgeScorer, LlmProposer, OptimizerState,
};
use misinfo_core::pipeline::{analyze_items, load_reports, Provenance};
use misinfo_core::prompts::{sha256_hex, PromptRegistry};
use misinfo_core::provider::{CachedProvider, ChatProvider, HttpProvider, Recorder, ResponseCache, ScriptedMock};
use misinfo_core::tasks::{build_tasks, cap_domain, task_archive, Reports, ValidationTask};
use serde::{Deserialize, Serialize};

use crate::config::{ProviderSettings, RunConfig};
use crate::error::Failure;
use crate::{Cli, Command};

/// Interprets `--provider`: `live` keeps the configured endpoint,
/// `mock:<path>` replays a script or transcript.
pub fn parse_provider_flag(spec: &str, current: Option<ProviderSettings>) -> Result<ProviderSettings, Failure> {
    if spec == "live" {
        return match current {
            Some(live @ ProviderSettings::Live(_)) => Ok(live),
            _ => Err(Failure::usage(
                "--provider live needs [provider] mode = \"live\" endpoint settings in the config",
            )),
        };
    }
    match spec.strip_prefix("mock:") {
        Some(path) if !path.is_empty() => Ok(ProviderSettings::Mock {
            script: PathBuf::from(path),
        }),
        _ => Err(Failure::usage(format!(
            "unknown provider {spec:?}; expected live or mock:<path>"
        ))),
    }
}

type Recording = Arc<Recorder<Arc<dyn ChatProvider>>>;

struct Context<'a> {
    config: RunConfig,
    prompts: PromptRegistry,
    provider: Option<Arc<dyn ChatProvider>>,
    recorder: Option<(Recording, &'a Path)>,
    resume: bool,
}

impl<'a> Context<'a> {
    fn new(cli: &'a Cli, config: RunConfig, injected: Option<Arc<dyn ChatProvider>>) -> Result<Self, Failure> {
        let prompts = match &config.prompts_dir {
            Some(dir) => PromptRegistry::load_dir(dir)?,
            None => PromptRegistry::builtin(),
        };
        let mut provider: Option<Arc<dyn ChatProvider>> = match &config.provider {
            _ if injected.is_some() => injected,
            None => None,
            Some(ProviderSettings::Live(endpoint)) => Some(Arc::new(HttpProvider::new(endpoint.clone())?)),
            Some(ProviderSettings::Mock { script }) => Some(Arc::new(ScriptedMock::from_file(script)?)),
        };
        if let Some(dir) = &config.cache_dir {
            if let Some(p) = provider.take() {
                provider = Some(Arc::new(CachedProvider::new(p, ResponseCache::open(dir.clone())?)));
            }
        }
        let recorder = match (&cli.global.record, &provider) {
            (Some(path), Some(p)) => Some((Arc::new(Recorder::new(p.clone())), path.as_path())),
            (Some(_), None) => return Err(Failure::usage("--record needs a provider")),
            _ => None,
        };
        if let Some((r, _)) = &recorder {
            provider = Some(r.clone());
        }
        Ok(Self {
            config,
            prompts,
            provider,
            recorder,
            resume: cli.global.resume,
        })
    }

    fn provider(&self) -> Result<&dyn ChatProvider, Failure> {
        self.provider
            .as_deref()
            .ok_or_else(|| Failure::usage("no provider configured; pass --provider or set [provider] in the config"))
    }

    fn provenance(&self) -> Provenance {
        Provenance::new(&self.config.provenance_view(), self.config.seed, &self.prompts)
    }

    fn protocol(&self, optimize: bool) -> ProtocolConfig {
        ProtocolConfig {
            seed: self.config.seed,
            tasks: self.config.tasks.clone(),
            optimizer: self.config.optimizer.clone(),
            optimize,
        }
    }
}

/// Runs one subcommand. `provider` replaces the configured provider stack
/// (cache and recorder wrapping still apply).
pub fn run(cli: &Cli, config: RunConfig, provider: Option<Arc<dyn ChatProvider>>) -> Result<(), Failure> {
    let workers = config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::usage(format!("cannot start {workers} workers: {e}")))?;
    let ctx = Context::new(cli, config, provider)?;
    let result = pool.install(|| match &cli.command {
        Command::Analyze { data, out } => analyze(&ctx, data, out),
        Command::Tasks { data, reports, out } => tasks(&ctx, data, reports, out),
        Command::Optimize { data, reports, out } => optimize_cmd(&ctx, data, reports, out),
        Command::Eval {
            data,
            reports,
            sources,
            rules,
            lodo,
            skip_optimization,
            out,
        } => {
            if *lodo {
                eval_lodo(&ctx, data, reports, *skip_optimization, out)
            } else {
                let sources = sources.as_deref().expect("clap requires --sources");
                let rules = rules.as_deref().expect("clap requires --rules");
                eval_target(&ctx, data, sources, reports, rules, out)
            }
        }
        Command::Sweep {
            data,
            reports,
            candidates,
            out,
        } => sweep(&ctx, data, reports, candidates, out),
    });
    if let Some((recorder, path)) = &ctx.recorder {
        recorder.save(path)?;
    }
    result
}

fn read_reports(path: &Path) -> Result<Reports, Failure> {
    load_reports(path).map_err(Failure::data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    misinfo_core::io::write_json(path, value).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write_lines<T: Serialize>(path: &Path, lines: &[T]) -> Result<(), Failure> {
    misinfo_core::io::write_jsonl(path, lines).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn analyze(ctx: &Context, data: &Path, out: &Path) -> Result<(), Failure> {
    let dataset = load_dataset(data)?;
    let retriever = Retriever::from_config(&ctx.config.evidence).map_err(|e| Failure::data(e.to_string()))?;
    let analyzer = Analyzer::new(&ctx.prompts, ctx.provider()?, &ctx.config.analysis);
    let existing = if ctx.resume && out.exists() {
        read_reports(out)?
    } else {
        Reports::new()
    };
    let provenance = ctx.provenance();
    let summary = analyze_items(
        &analyzer,
        &retriever,
        dataset.items(),
        existing,
        ctx.config.chunk_size,
        Some((out, &provenance)),
    )?;
    println!(
        "analyzed {} item(s): {} new, {} reused, {} failed -> {}",
        dataset.len(),
        summary.produced,
        summary.reused,
        summary.failures.len(),
        out.display()
    );
    if summary.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::provider(format!(
            "analysis failed for {} item(s): {}",
            summary.failures.len(),
            serde_json::to_string(&summary.failures).expect("failures serialize")
        )))
    }
}

fn capped_parts(ctx: &Context, dataset: &Dataset) -> Result<BTreeMap<String, Dataset>, Failure> {
    Ok(split_by_domain(dataset)?
        .into_iter()
        .map(|(d, ds)| {
            let capped = cap_domain(&ds, ctx.config.tasks.per_domain_cap, ctx.config.seed);
            (d, capped)
        })
        .collect())
}

fn source_tasks(ctx: &Context, data: &Path, reports: &Reports) -> Result<Vec<ValidationTask>, Failure> {
    let dataset = load_dataset(data)?;
    let parts = capped_parts(ctx, &dataset)?;
    Ok(build_tasks(&parts, reports, &ctx.config.tasks, ctx.config.seed)?)
}

fn task_lines(ctx: &Context, tasks: &[ValidationTask]) -> Vec<serde_json::Value> {
    let mut lines = vec![serde_json::json!({ "provenance": ctx.provenance() })];
    lines.extend(
        task_archive(tasks, &ctx.config.tasks, ctx.config.seed)
            .iter()
            .map(|l| serde_json::to_value(l).expect("task line serializes")),
    );
    lines
}

fn tasks(ctx: &Context, data: &Path, reports: &Path, out: &Path) -> Result<(), Failure> {
    let reports = read_reports(reports)?;
    let tasks = source_tasks(ctx, data, &reports)?;
    write_lines(out, &task_lines(ctx, &tasks))?;
    println!("built {} task(s) -> {}", tasks.len(), out.display());
    Ok(())
}

/// The `optimize` output consumed by `eval`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RulesArtifact {
    pub provenance: Provenance,
    pub k: usize,
    pub rules: Vec<RankedRule>,
    pub warnings: Vec<String>,
}

fn optimize_cmd(ctx: &Context, data: &Path, reports: &Path, out: &Path) -> Result<(), Failure> {
    let reports = read_reports(reports)?;
    let tasks = source_tasks(ctx, data, &reports)?;
    let provider = ctx.provider()?;
    std::fs::create_dir_all(out)?;
    write_lines(&out.join("tasks.jsonl"), &task_lines(ctx, &tasks))?;

    let cfg = &ctx.config.optimizer;
    let judge = Judge::new(&ctx.prompts, provider, &ctx.config.judge);
    let scorer = JudgeScorer::new(&judge, &tasks);
    let exemplars = render_exemplars(&select_exemplars(&tasks, cfg.exemplar_count, ctx.config.seed));
    let nonce = Some(format!("seed{}", ctx.config.seed));
    let proposer = LlmProposer::new(&ctx.prompts, provider, cfg, exemplars, nonce);
    let checkpoint = out.join("checkpoint.json");
    let state = if ctx.resume && checkpoint.exists() {
        load_checkpoint(&checkpoint)?
    } else {
        OptimizerState::default()
    };
    let r0 = DecisionRule::manual(ctx.prompts.initial_rule().trim());
    let outcome = optimize(&r0, &scorer, &proposer, cfg, state, Some(&checkpoint))?;

    let log = scorer.take_log();
    let judgements = out.join("judgements.jsonl");
    if ctx.resume {
        misinfo_core::io::append_jsonl(&judgements, &log)?;
    } else {
        write_lines(&judgements, &log)?;
    }
    let ledger = outcome.state.ledger.as_ref().expect("optimize scores the initial rule");
    write_lines(&out.join("ledger.jsonl"), ledger.entries())?;
    write_lines(&out.join("proposals.jsonl"), &outcome.state.proposals)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let artifact = RulesArtifact {
        provenance: ctx.provenance(),
        k: cfg.k,
        rules: outcome.top.iter().cloned().map(RankedRule::from).collect(),
        warnings: outcome.warnings.clone(),
    };
    write_json(&out.join("rules.json"), &artifact)?;

    println!("rule | accuracy");
    for e in ledger.entries() {
        println!("{} | {:.2}", e.rule.text.replace('\n', " "), e.accuracy * 100.0);
    }
    println!(
        "{} iteration(s); top {} rule(s) -> {}",
        outcome.state.n_iter,
        artifact.rules.len(),
        out.join("rules.json").display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TargetArtifact<'a> {
    provenance: Provenance,
    rules_sha256: String,
    metrics: EvalMetrics,
    items: &'a [ItemResult],
}

fn eval_target(ctx: &Context, data: &Path, sources: &Path, reports: &Path, rules: &Path, out: &Path) -> Result<(), Failure> {
    let rules_text = std::fs::read_to_string(rules)
        .map_err(|e| Failure::data(format!("cannot read rules artifact {}: {e}", rules.display())))?;
    let artifact: RulesArtifact = serde_json::from_str(&rules_text)
        .map_err(|e| Failure::data(format!("invalid rules artifact {}: {e}", rules.display())))?;
    let target = load_dataset(data)?;
    let source_parts = capped_parts(ctx, &load_dataset(sources)?)?;
    let reports = read_reports(reports)?;
    let pool: Vec<&NewsItem> = source_parts.values().flat_map(|d| d.items()).collect();
    let rule_list: Vec<DecisionRule> = artifact.rules.iter().map(|r| r.rule.clone()).collect();
    let judge = Judge::new(&ctx.prompts, ctx.provider()?, &ctx.config.judge);
    let evaluation = evaluate_target(
        &judge,
        &target,
        &reports,
        &pool,
        ctx.config.tasks.demos_per_task,
        &rule_list,
        ctx.config.seed,
    )?;
    write_json(
        out,
        &TargetArtifact {
            provenance: ctx.provenance(),
            rules_sha256: sha256_hex(&rules_text),
            metrics: evaluation.metrics,
            items: &evaluation.items,
        },
    )?;
    print_rows(&[("target".to_string(), evaluation.metrics)], None);
    Ok(())
}

#[derive(Debug, Serialize)]
struct ResultRow {
    domain: String,
    accuracy: f64,
    f1_fake: f64,
    f1_macro: f64,
    n: usize,
}

#[derive(Debug, Serialize)]
struct LodoArtifact {
    provenance: Provenance,
    optimized: bool,
    rows: Vec<ResultRow>,
    average: AverageMetrics,
}

fn print_rows(rows: &[(String, EvalMetrics)], average: Option<&AverageMetrics>) {
    println!("domain | acc | f1_fake | f1_macro | n");
    for (d, m) in rows {
        println!(
            "{d} | {:.2} | {:.2} | {:.2} | {}",
            m.accuracy * 100.0,
            m.f1_fake * 100.0,
            m.f1_macro * 100.0,
            m.n
        );
    }
    if let Some(a) = average {
        println!(
            "avg | {:.2} | {:.2} | {:.2} |",
            a.accuracy * 100.0,
            a.f1_fake * 100.0,
            a.f1_macro * 100.0
        );
    }
}

fn engine<'a>(ctx: &'a Context) -> Result<Engine<'a>, Failure> {
    Ok(Engine {
        prompts: &ctx.prompts,
        provider: ctx.provider()?,
        judge: &ctx.config.judge,
    })
}

fn eval_lodo(ctx: &Context, data: &Path, reports: &Path, skip_optimization: bool, out: &Path) -> Result<(), Failure> {
    let corpus = load_dataset(data)?;
    let reports = read_reports(reports)?;
    let protocol = ctx.protocol(ctx.config.optimize && !skip_optimization);
    let storage = FoldStorage {
        dir: out.join("folds"),
        resume: ctx.resume,
    };
    let result = leave_one_domain_out(&engine(ctx)?, &corpus, &reports, &protocol, Some(&storage))?;
    let rows: Vec<(String, EvalMetrics)> = result.folds.iter().map(|f| (f.target.clone(), f.metrics)).collect();
    for f in &result.folds {
        for w in &f.warnings {
            eprintln!("warning: {}: {w}", f.target);
        }
    }
    write_json(
        &out.join("results.json"),
        &LodoArtifact {
            provenance: ctx.provenance(),
            optimized: protocol.optimize,
            rows: rows
                .iter()
                .map(|(d, m)| ResultRow {
                    domain: d.clone(),
                    accuracy: m.accuracy,
                    f1_fake: m.f1_fake,
                    f1_macro: m.f1_macro,
                    n: m.n,
                })
                .collect(),
            average: result.average,
        },
    )?;
    print_rows(&rows, Some(&result.average));
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepArtifact {
    provenance: Provenance,
    rows: Vec<SweepRow>,
    best_n_tasks: usize,
}

fn sweep(ctx: &Context, data: &Path, reports: &Path, candidates: &[usize], out: &Path) -> Result<(), Failure> {
    if candidates.contains(&0) {
        return Err(Failure::usage("--candidates must be positive"));
    }
    let sources = load_dataset(data)?;
    let reports = read_reports(reports)?;
    let result = nvt_sweep(&engine(ctx)?, &sources, &reports, &ctx.protocol(true), candidates)?;
    println!("n_tasks | avg acc");
    for r in &result.rows {
        println!("{} | {:.2}", r.n_tasks, r.average.accuracy * 100.0);
    }
    println!("best n_tasks: {}", result.best_n_tasks);
    write_json(
        out,
        &SweepArtifact {
            provenance: ctx.provenance(),
            rows: result.rows,
            best_n_tasks: result.best_n_tasks,
        },
    )
}
