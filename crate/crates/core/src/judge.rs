//! The judge agent: rule-conditioned in-context verdicts, verdict parsing,
//! rule scoring over validation tasks, and majority-vote inference.

use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::MultiDimReport;
use crate::domain::{NewsItem, Verdict};
use crate::prompts::PromptRegistry;
use crate::provider::{ChatProvider, ChatRequest, ProviderError, Role};
use crate::tasks::ValidationTask;

/// Output format line every judge prompt ends with.
pub const OUTPUT_FORMAT: &str = "judgment: <'1' represents fake-news, '0' represents real-news>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleOrigin {
    Manual,
    Optimized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub id: u64,
    pub text: String,
    pub origin: RuleOrigin,
}

impl DecisionRule {
    pub fn manual(text: impl Into<String>) -> Self {
        Self {
            id: 0,
            text: text.into(),
            origin: RuleOrigin::Manual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    Repaired,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub verdict: Option<Verdict>,
    pub raw: String,
    pub parse_status: ParseStatus,
}

impl Judgement {
    pub fn from_raw(raw: impl Into<String>, keywords: &KeywordTable) -> Self {
        let raw = raw.into();
        let (verdict, parse_status) = parse_verdict(&raw, keywords);
        Self {
            verdict,
            raw,
            parse_status,
        }
    }

    fn failed(raw: impl Into<String>) -> Self {
        Self {
            verdict: None,
            raw: raw.into(),
            parse_status: ParseStatus::Failed,
        }
    }
}

/// Words accepted as a verdict when the anchored format is absent. ASCII
/// entries match whole words case-insensitively; others match as substrings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub fake: Vec<String>,
    pub real: Vec<String>,
}

impl Default for KeywordTable {
    fn default() -> Self {
        Self {
            fake: vec!["fake".into(), "虚假".into(), "谣言".into()],
            real: vec!["real".into(), "真实".into()],
        }
    }
}

impl KeywordTable {
    /// Byte offset of the last occurrence of any keyword in `words`.
    fn last_hit(words: &[String], text: &str) -> Option<usize> {
        let lower = text.to_lowercase();
        words
            .iter()
            .filter_map(|w| {
                let w = w.to_lowercase();
                if w.is_ascii() {
                    Regex::new(&format!(r"\b{}\b", regex::escape(&w)))
                        .ok()?
                        .find_iter(&lower)
                        .last()
                        .map(|m| m.start())
                } else {
                    lower.rfind(&w)
                }
            })
            .max()
    }
}

fn anchor_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)(?:judge?ment|判断)\s*\**\s*[:：]\s*\**\s*["'“”‘’]?\s*([01])(?:[^0-9]|$)"#)
            .expect("valid regex")
    })
}

/// Parses a judge response.
///
/// 1. The last `judgment: 0|1` occurrence wins → `Clean`.
/// 2. Otherwise a lone trailing `0`/`1` token, or fake/real keywords when
///    only one kind appears → `Repaired`.
/// 3. Otherwise `Failed`.
pub fn parse_verdict(raw: &str, keywords: &KeywordTable) -> (Option<Verdict>, ParseStatus) {
    if let Some(caps) = anchor_re().captures_iter(raw).last() {
        let v = Verdict::from_code(if &caps[1] == "1" { 1 } else { 0 });
        return (v, ParseStatus::Clean);
    }
    if let Some(last) = raw.split_whitespace().last() {
        let token = last.trim_matches(|c: char| !c.is_alphanumeric());
        if token == "0" || token == "1" {
            let v = Verdict::from_code(if token == "1" { 1 } else { 0 });
            return (v, ParseStatus::Repaired);
        }
    }
    match (
        KeywordTable::last_hit(&keywords.fake, raw),
        KeywordTable::last_hit(&keywords.real, raw),
    ) {
        (Some(_), None) => (Some(Verdict::Fake), ParseStatus::Repaired),
        (None, Some(_)) => (Some(Verdict::Real), ParseStatus::Repaired),
        _ => (None, ParseStatus::Failed),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("cannot score a rule on an empty task set")]
    EmptyTaskSet,
    #[error("no judgement produced a usable verdict")]
    NoUsableVerdicts,
    #[error("at least one decision rule is required")]
    NoRules,
}

/// Modal verdict among parsed judgements; `tie_break` settles even splits.
pub fn majority_vote(judgements: &[Judgement], tie_break: Verdict) -> Result<Verdict, JudgeError> {
    let (fake, real) = judgements
        .iter()
        .filter_map(|j| j.verdict)
        .fold((0usize, 0usize), |(f, r), v| match v {
            Verdict::Fake => (f + 1, r),
            Verdict::Real => (f, r + 1),
        });
    match (fake, real) {
        (0, 0) => Err(JudgeError::NoUsableVerdicts),
        (f, r) if f > r => Ok(Verdict::Fake),
        (f, r) if r > f => Ok(Verdict::Real),
        _ => Ok(tie_break),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    pub tie_break: Verdict,
    pub keywords: KeywordTable,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            temperature: Role::Judge.default_temperature(),
            max_tokens: crate::provider::DEFAULT_MAX_TOKENS,
            tie_break: Verdict::Fake,
            keywords: KeywordTable::default(),
        }
    }
}

/// One line of the per-task judgement log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskJudgement {
    pub task_index: usize,
    pub rule_id: u64,
    pub raw: String,
    pub verdict: Option<Verdict>,
    pub parse_status: ParseStatus,
    pub gold: Verdict,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleScore {
    pub accuracy: f64,
    pub log: Vec<TaskJudgement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub verdict: Verdict,
    pub judgements: Vec<Judgement>,
}

/// Renders the judge's user prompt: demonstrations, then the rule, then the
/// query and its report, then the output format.
pub fn render_judge_prompt(item: &NewsItem, report: &MultiDimReport, demos: &[NewsItem], rule: &DecisionRule) -> String {
    let mut out = String::from("Demonstrations:\n");
    if demos.is_empty() {
        out.push_str("(none)\n");
    }
    for (i, d) in demos.iter().enumerate() {
        out.push_str(&format!(
            "[Example {}]\nNews: {}\njudgment: {}\n\n",
            i + 1,
            d.content,
            d.label.code()
        ));
    }
    out.push_str(&format!(
        "Decision rule:\n{}\n\nQuery news:\n{}\n\nMulti-dimensional analysis report:\n{}\n\nOutput format: {OUTPUT_FORMAT}",
        rule.text.trim(),
        item.content,
        report.composed_text.trim_end()
    ));
    out
}

pub struct Judge<'a> {
    prompts: &'a PromptRegistry,
    provider: &'a dyn ChatProvider,
    config: &'a JudgeConfig,
}

impl<'a> Judge<'a> {
    pub fn new(prompts: &'a PromptRegistry, provider: &'a dyn ChatProvider, config: &'a JudgeConfig) -> Self {
        Self {
            prompts,
            provider,
            config,
        }
    }

    pub fn config(&self) -> &JudgeConfig {
        self.config
    }

    pub fn judge_one(
        &self,
        item: &NewsItem,
        report: &MultiDimReport,
        demos: &[NewsItem],
        rule: &DecisionRule,
    ) -> Result<Judgement, ProviderError> {
        debug_assert_eq!(report.item_id, item.id);
        let request = ChatRequest::new(
            Role::Judge,
            self.prompts.get(Role::Judge),
            render_judge_prompt(item, report, demos, rule),
        )
        .with_temperature(self.config.temperature)
        .with_max_tokens(self.config.max_tokens);
        let response = self.provider.complete(&request)?;
        Ok(Judgement::from_raw(response.text, &self.config.keywords))
    }

    /// Accuracy of `rule` over `tasks`; unparseable verdicts count as wrong.
    /// Judge calls fan out over the current rayon pool.
    pub fn score_rule(&self, rule: &DecisionRule, tasks: &[ValidationTask]) -> Result<RuleScore, JudgeError> {
        if tasks.is_empty() {
            return Err(JudgeError::EmptyTaskSet);
        }
        let log = tasks
            .par_iter()
            .enumerate()
            .map(|(task_index, task)| {
                let j = self.judge_one(&task.query, &task.query_report, &task.demonstrations, rule)?;
                Ok(TaskJudgement {
                    task_index,
                    rule_id: rule.id,
                    correct: j.verdict == Some(task.gold),
                    raw: j.raw,
                    verdict: j.verdict,
                    parse_status: j.parse_status,
                    gold: task.gold,
                })
            })
            .collect::<Result<Vec<_>, ProviderError>>()?;
        let correct = log.iter().filter(|t| t.correct).count();
        Ok(RuleScore {
            accuracy: correct as f64 / tasks.len() as f64,
            log,
        })
    }

    /// Judges `item` once per rule and takes the majority. A rule whose call
    /// fails upstream contributes no vote.
    pub fn infer(
        &self,
        item: &NewsItem,
        report: &MultiDimReport,
        demos: &[NewsItem],
        rules: &[DecisionRule],
    ) -> Result<Inference, JudgeError> {
        if rules.is_empty() {
            return Err(JudgeError::NoRules);
        }
        let judgements: Vec<Judgement> = rules
            .par_iter()
            .map(|rule| match self.judge_one(item, report, demos, rule) {
                Ok(j) => j,
                Err(e) => {
                    tracing::warn!(item = %item.id, rule = rule.id, error = %e, "judge call failed");
                    Judgement::failed("")
                }
            })
            .collect();
        let verdict = majority_vote(&judgements, self.config.tie_break)?;
        Ok(Inference { verdict, judgements })
    }
}
