//! Iterative decision-rule optimization scored on validation tasks.

use std::path::Path;
use std::sync::Mutex;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::{DecisionRule, Judge, JudgeError, RuleOrigin, TaskJudgement};
use crate::prompts::PromptRegistry;
use crate::provider::{ChatProvider, ChatRequest, ProviderError, Role, DEFAULT_MAX_TOKENS};
use crate::seeds::substream;
use crate::tasks::ValidationTask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub n_iter_max: usize,
    pub n_att_max: usize,
    pub k: usize,
    pub trajectory_size: usize,
    pub exemplar_count: usize,
    /// Extra requests after an empty or duplicate proposal before the
    /// iteration is counted as a failed attempt.
    pub proposal_retries: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_iter_max: 500,
            n_att_max: 10,
            k: 3,
            trajectory_size: 10,
            exemplar_count: 3,
            proposal_retries: 3,
            temperature: Role::Optimizer.default_temperature(),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("cannot optimize against an empty task set")]
    EmptyTaskSet,
    #[error("ledger is empty")]
    EmptyLedger,
    #[error("initial rule text is empty")]
    EmptyRule,
    #[error("optimizer returned a blank proposal")]
    EmptyProposal,
    #[error("proposal repeats an existing rule")]
    DuplicateProposal,
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: String, reason: String },
    #[error("checkpoint write failed: {0}")]
    Io(#[from] std::io::Error),
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.k == 0 {
            return Err(OptimizerError::Config("k must be at least 1".into()));
        }
        if self.trajectory_size == 0 {
            return Err(OptimizerError::Config("trajectory_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub rule: DecisionRule,
    pub accuracy: f64,
    /// Iteration that produced the rule; 0 for the initial rule.
    pub iteration: usize,
}

/// Rules that improved on the best accuracy seen so far, in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleLedger {
    entries: Vec<LedgerEntry>,
}

impl RuleLedger {
    pub fn new(initial: DecisionRule, accuracy: f64) -> Self {
        Self {
            entries: vec![LedgerEntry {
                rule: initial,
                accuracy,
                iteration: 0,
            }],
        }
    }

    /// Rebuilds a ledger, checking that accuracies rise strictly after the
    /// first entry.
    pub fn from_entries(entries: Vec<LedgerEntry>) -> Result<Self, String> {
        if entries.is_empty() {
            return Err("ledger has no entries".into());
        }
        if let Some(w) = entries.windows(2).find(|w| w[1].accuracy <= w[0].accuracy) {
            return Err(format!(
                "ledger accuracy does not increase at rule {} ({} after {})",
                w[1].rule.id, w[1].accuracy, w[0].accuracy
            ));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> &LedgerEntry {
        self.entries.last().expect("ledger is never empty")
    }

    pub fn s_max(&self) -> f64 {
        self.best().accuracy
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.entries.iter().any(|e| e.rule.text == text)
    }

    /// Inserts only when `accuracy` strictly beats the current best.
    pub fn offer(&mut self, rule: DecisionRule, accuracy: f64, iteration: usize) -> bool {
        if accuracy > self.s_max() {
            self.entries.push(LedgerEntry {
                rule,
                accuracy,
                iteration,
            });
            true
        } else {
            false
        }
    }

    /// Up to `k` entries by accuracy, highest first.
    pub fn top_k(&self, k: usize) -> Vec<LedgerEntry> {
        let mut ranked: Vec<(usize, &LedgerEntry)> = self.entries.iter().enumerate().collect();
        ranked.sort_by(|(ia, a), (ib, b)| b.accuracy.total_cmp(&a.accuracy).then(ib.cmp(ia)));
        ranked.into_iter().take(k).map(|(_, e)| e.clone()).collect()
    }
}

impl<'de> Deserialize<'de> for RuleLedger {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            entries: Vec<LedgerEntry>,
        }
        let raw = Raw::deserialize(deserializer)?;
        RuleLedger::from_entries(raw.entries).map_err(serde::de::Error::custom)
    }
}

/// The `size` highest-accuracy pairs, emitted lowest first. Among equal
/// accuracies the later insert ranks higher.
pub fn build_trajectory(ledger: &RuleLedger, size: usize) -> Result<Vec<(String, f64)>, OptimizerError> {
    if ledger.is_empty() {
        return Err(OptimizerError::EmptyLedger);
    }
    let mut top = ledger.top_k(size);
    top.reverse();
    Ok(top.into_iter().map(|e| (e.rule.text, e.accuracy)).collect())
}

/// Trajectory block for the optimizer prompt, one `<rule, accuracy>` per line,
/// accuracy shown as a percentage.
pub fn render_trajectory(trajectory: &[(String, f64)]) -> String {
    trajectory
        .iter()
        .map(|(text, acc)| format!("<{}, accuracy {:.2}>", text.trim(), acc * 100.0))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Worked examples for the optimizer prompt, with the rule left as a
/// placeholder and the gold label as output.
pub fn render_exemplars(tasks: &[&ValidationTask]) -> String {
    tasks
        .iter()
        .map(|t| format!("Input: {}\n<DECISION RULE>\nOutput: {}", t.query.content.trim(), t.gold.word()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// `count` tasks chosen once per run from the seed.
pub fn select_exemplars(tasks: &[ValidationTask], count: usize, seed: u64) -> Vec<&ValidationTask> {
    let count = count.min(tasks.len());
    let mut rng = substream(seed, "exemplars");
    let mut picked = index::sample(&mut rng, tasks.len(), count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| &tasks[i]).collect()
}

/// Strips bold markers, wrapping quotes, code fences, and a leading
/// "Decision rule:" label.
pub fn clean_rule_text(raw: &str) -> String {
    let unbolded = raw.replace("**", "");
    let mut s = unbolded.trim();
    if let Some(rest) = s.strip_prefix("```") {
        let rest = rest.split_once('\n').map(|(_, body)| body).unwrap_or("");
        s = rest.strip_suffix("```").unwrap_or(rest).trim();
    }
    for label in ["new decision rule:", "decision rule:", "rule:"] {
        if s.len() >= label.len() && s.is_char_boundary(label.len()) && s[..label.len()].eq_ignore_ascii_case(label) {
            s = s[label.len()..].trim_start();
            break;
        }
    }
    loop {
        let trimmed = s.trim();
        let stripped = [("\"", "\""), ("'", "'"), ("“", "”"), ("<", ">")]
            .iter()
            .find_map(|(open, close)| {
                trimmed
                    .strip_prefix(open)
                    .and_then(|r| r.strip_suffix(close))
                    .filter(|_| trimmed.len() >= open.len() + close.len())
            });
        match stripped {
            Some(inner) => s = inner,
            None => return trimmed.to_string(),
        }
    }
}

/// Turns raw optimizer output into a rule, refusing blanks and repeats.
pub fn accept_proposal(raw: &str, ledger: &RuleLedger, id: u64) -> Result<DecisionRule, OptimizerError> {
    let text = clean_rule_text(raw);
    if text.is_empty() {
        return Err(OptimizerError::EmptyProposal);
    }
    if ledger.contains_text(&text) {
        return Err(OptimizerError::DuplicateProposal);
    }
    Ok(DecisionRule {
        id,
        text,
        origin: RuleOrigin::Optimized,
    })
}

pub trait RuleScorer {
    fn score(&self, rule: &DecisionRule) -> Result<f64, OptimizerError>;
}

/// Identifies one proposal request so retries are distinct but reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProposalSlot {
    pub iteration: usize,
    pub attempt: usize,
}

pub trait RuleProposer {
    /// Raw proposal text; cleaning and duplicate checks happen in the caller.
    fn propose(&self, trajectory: &[(String, f64)], slot: ProposalSlot) -> Result<String, OptimizerError>;
}

/// Scores rules with the judge over a fixed task set and keeps every
/// per-task judgement.
pub struct JudgeScorer<'a> {
    judge: &'a Judge<'a>,
    tasks: &'a [ValidationTask],
    log: Mutex<Vec<TaskJudgement>>,
}

impl<'a> JudgeScorer<'a> {
    pub fn new(judge: &'a Judge<'a>, tasks: &'a [ValidationTask]) -> Self {
        Self {
            judge,
            tasks,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn take_log(&self) -> Vec<TaskJudgement> {
        std::mem::take(&mut *self.log.lock().expect("log lock"))
    }
}

impl RuleScorer for JudgeScorer<'_> {
    fn score(&self, rule: &DecisionRule) -> Result<f64, OptimizerError> {
        let score = self.judge.score_rule(rule, self.tasks)?;
        self.log.lock().expect("log lock").extend(score.log);
        Ok(score.accuracy)
    }
}

/// Asks the optimizer role for a new rule given the trajectory and fixed
/// exemplars.
pub struct LlmProposer<'a> {
    prompts: &'a PromptRegistry,
    provider: &'a dyn ChatProvider,
    config: &'a OptimizerConfig,
    exemplars: String,
    run_nonce: Option<String>,
}

impl<'a> LlmProposer<'a> {
    pub fn new(
        prompts: &'a PromptRegistry,
        provider: &'a dyn ChatProvider,
        config: &'a OptimizerConfig,
        exemplars: String,
        run_nonce: Option<String>,
    ) -> Self {
        Self {
            prompts,
            provider,
            config,
            exemplars,
            run_nonce,
        }
    }

    pub fn request(&self, trajectory: &[(String, f64)], slot: ProposalSlot) -> ChatRequest {
        let system = self.prompts.render_optimizer(&render_trajectory(trajectory), &self.exemplars);
        ChatRequest::new(
            Role::Optimizer,
            system,
            "Reply with the new decision rule only.",
        )
        .with_temperature(self.config.temperature)
        .with_max_tokens(self.config.max_tokens)
        .with_sample_tag(format!("iter{}.try{}", slot.iteration, slot.attempt))
        .with_run_nonce(self.run_nonce.clone())
    }
}

impl RuleProposer for LlmProposer<'_> {
    fn propose(&self, trajectory: &[(String, f64)], slot: ProposalSlot) -> Result<String, OptimizerError> {
        Ok(self.provider.complete(&self.request(trajectory, slot))?.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalOutcome {
    Improved,
    NotImproved,
    /// Every request in the iteration was blank or a duplicate.
    Rejected,
}

/// One line of the per-iteration proposal log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub iteration: usize,
    pub requests: usize,
    pub rule: Option<DecisionRule>,
    pub accuracy: Option<f64>,
    pub outcome: ProposalOutcome,
    pub s_max: f64,
    pub n_att: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub n_iter: usize,
    pub n_att: usize,
    /// Absent until the initial rule has been scored.
    pub ledger: Option<RuleLedger>,
    pub next_rule_id: u64,
    pub proposals: Vec<ProposalRecord>,
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self {
            n_iter: 0,
            n_att: 0,
            ledger: None,
            next_rule_id: 1,
            proposals: Vec::new(),
        }
    }
}

impl OptimizerState {
    /// n_att after each iteration.
    pub fn n_att_trace(&self) -> Vec<usize> {
        self.proposals.iter().map(|p| p.n_att).collect()
    }
}

pub fn save_checkpoint(path: &Path, state: &OptimizerState) -> Result<(), OptimizerError> {
    let mut bytes = serde_json::to_vec_pretty(state).expect("state serializes");
    bytes.push(b'\n');
    crate::io::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<OptimizerState, OptimizerError> {
    let corrupt = |reason: String| OptimizerError::CorruptCheckpoint {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| corrupt(e.to_string()))?;
    let state: OptimizerState = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if state.n_iter != state.proposals.len() {
        return Err(corrupt(format!(
            "n_iter {} disagrees with {} logged proposals",
            state.n_iter,
            state.proposals.len()
        )));
    }
    if state.ledger.is_none() && state.n_iter > 0 {
        return Err(corrupt("iterations recorded without a scored initial rule".into()));
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    /// Highest accuracy first, at most k entries.
    pub top: Vec<LedgerEntry>,
    pub state: OptimizerState,
    pub warnings: Vec<String>,
}

/// Runs the optimization loop from `state` (fresh or resumed). When
/// `checkpoint` is set the state is written after every step.
pub fn optimize(
    r0: &DecisionRule,
    scorer: &dyn RuleScorer,
    proposer: &dyn RuleProposer,
    config: &OptimizerConfig,
    mut state: OptimizerState,
    checkpoint: Option<&Path>,
) -> Result<OptimizeOutcome, OptimizerError> {
    config.validate()?;
    if r0.text.trim().is_empty() {
        return Err(OptimizerError::EmptyRule);
    }
    let save = |s: &OptimizerState| match checkpoint {
        Some(p) => save_checkpoint(p, s),
        None => Ok(()),
    };

    if state.ledger.is_none() {
        let s0 = scorer.score(r0)?;
        state.ledger = Some(RuleLedger::new(r0.clone(), s0));
        state.next_rule_id = state.next_rule_id.max(r0.id + 1);
        save(&state)?;
    }

    while state.n_iter < config.n_iter_max && state.n_att < config.n_att_max {
        let ledger = state.ledger.as_ref().expect("initialized above");
        let trajectory = build_trajectory(ledger, config.trajectory_size)?;
        let iteration = state.n_iter + 1;

        let mut proposal = None;
        let mut requests = 0;
        for attempt in 0..=config.proposal_retries {
            requests += 1;
            let raw = proposer.propose(&trajectory, ProposalSlot { iteration, attempt })?;
            match accept_proposal(&raw, ledger, state.next_rule_id) {
                Ok(rule) => {
                    proposal = Some(rule);
                    break;
                }
                Err(e) => tracing::debug!(iteration, attempt, error = %e, "proposal refused"),
            }
        }

        let (rule, accuracy, outcome) = match proposal {
            Some(rule) => {
                state.next_rule_id += 1;
                let s = scorer.score(&rule)?;
                let ledger = state.ledger.as_mut().expect("initialized above");
                if ledger.offer(rule.clone(), s, iteration) {
                    state.n_att = 0;
                    (Some(rule), Some(s), ProposalOutcome::Improved)
                } else {
                    state.n_att += 1;
                    (Some(rule), Some(s), ProposalOutcome::NotImproved)
                }
            }
            None => {
                tracing::warn!(iteration, "no usable proposal; counting a failed attempt");
                state.n_att += 1;
                (None, None, ProposalOutcome::Rejected)
            }
        };
        state.n_iter = iteration;
        let s_max = state.ledger.as_ref().expect("initialized above").s_max();
        tracing::info!(iteration, ?accuracy, s_max, n_att = state.n_att, "optimizer step");
        state.proposals.push(ProposalRecord {
            iteration,
            requests,
            rule,
            accuracy,
            outcome,
            s_max,
            n_att: state.n_att,
        });
        save(&state)?;
    }

    let ledger = state.ledger.as_ref().expect("initialized above");
    let top = ledger.top_k(config.k);
    let mut warnings = Vec::new();
    if top.len() < config.k {
        let w = format!(
            "ledger holds {} rule(s), fewer than k = {}; returning all",
            top.len(),
            config.k
        );
        tracing::info!("{w}");
        warnings.push(w);
    }
    Ok(OptimizeOutcome { top, state, warnings })
}
