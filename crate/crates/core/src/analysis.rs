//! Multi-dimensional news analysis: linguistic, comment, and fact-checking
//! agents, a question-reflection round, and composition of the unified report.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::NewsItem;
use crate::evidence::{EvidenceSet, Retriever};
use crate::prompts::PromptRegistry;
use crate::provider::{ChatProvider, ChatRequest, ProviderError, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Linguistic,
    Comment,
    Fact,
}

impl ReportKind {
    pub const ALL: [ReportKind; 3] = [ReportKind::Linguistic, ReportKind::Comment, ReportKind::Fact];

    /// The agent that wrote the report and answers its reflection questions.
    pub fn role(self) -> Role {
        match self {
            ReportKind::Linguistic => Role::Linguistic,
            ReportKind::Comment => Role::Comment,
            ReportKind::Fact => Role::FactCheck,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ReportKind::Linguistic => "Linguistic feature analysis report",
            ReportKind::Comment => "Comment analysis report",
            ReportKind::Fact => "Fact-checking analysis report",
        }
    }

    fn header(self) -> String {
        format!("==== {} ====", self.title())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub kind: ReportKind,
    pub body: String,
    #[serde(default)]
    pub reflection_questions: Vec<String>,
    #[serde(default)]
    pub reflection_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AnalysisReport {
    fn new(kind: ReportKind, body: String) -> Self {
        let mut warnings = Vec::new();
        if body.trim().is_empty() {
            warnings.push(format!("{} is empty", kind.title()));
        }
        Self {
            kind,
            body,
            reflection_questions: Vec::new(),
            reflection_answers: Vec::new(),
            warnings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiDimReport {
    pub item_id: String,
    pub sections: Vec<AnalysisReport>,
    pub composed_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MultiDimReport {
    pub fn section(&self, kind: ReportKind) -> Option<&AnalysisReport> {
        self.sections.iter().find(|s| s.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub max_comments: usize,
    pub max_fact_questions: usize,
    pub max_reflection_questions: usize,
    /// 1 runs the question-reflection round; 0 disables it.
    pub reflection_rounds: u32,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            max_comments: 50,
            max_fact_questions: 5,
            max_reflection_questions: 3,
            reflection_rounds: 1,
            temperature: 0.0,
            max_tokens: crate::provider::DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("item {0} has no comments")]
    NoComments(String),
    #[error("no questions could be extracted from a non-empty response")]
    UnparsableQuestions,
    #[error("cannot compose a report without sections")]
    NoSections,
    #[error("every analysis section failed for item {0}")]
    AllSectionsFailed(String),
}

/// Extra material a report was written from, shown again to the questioning
/// agent and to the original agent when it answers.
#[derive(Debug, Clone, Copy)]
pub enum ReflectionContext<'a> {
    None,
    Comments,
    Evidence(&'a EvidenceSet),
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:\*\*)?(?:[-*•·]+\s*|\(?\d{1,2}\s*[.)、:：]\s*|[Qq]\d{1,2}\s*[.:)：]?\s*)(?:\*\*)?\s*")
            .expect("valid regex")
    })
}

/// Splits a response into one question per line, stripping list markers and
/// dropping blank and heading lines. Keeps at most `cap`.
pub fn parse_question_list(text: &str, cap: usize) -> Result<Vec<String>, AnalysisError> {
    let questions: Vec<String> = text
        .lines()
        .map(|line| marker_re().replace(line, "").trim().trim_matches('*').trim().to_string())
        .filter(|q| !q.is_empty() && !q.ends_with(':') && !q.ends_with('：'))
        .take(cap)
        .collect();
    if questions.is_empty() && !text.trim().is_empty() && cap > 0 {
        return Err(AnalysisError::UnparsableQuestions);
    }
    Ok(questions)
}

fn answer_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:\*\*)?(?:(?:A|Answer|答)\s*)?(\d{1,2})\s*[.)、:：](?:\*\*)?\s*(.*)$").expect("valid regex")
    })
}

/// Splits a numbered blob (`1. ...`, `A2: ...`) into exactly `n` answers.
/// Returns `None` unless markers `1..=n` appear in order.
pub fn parse_numbered_answers(text: &str, n: usize) -> Option<Vec<String>> {
    if n == 1 && answer_marker_re().captures(text.lines().next().unwrap_or("")).is_none() {
        let t = text.trim();
        return (!t.is_empty()).then(|| vec![t.to_string()]);
    }
    let mut answers: Vec<String> = Vec::new();
    for line in text.lines() {
        if let Some(caps) = answer_marker_re().captures(line) {
            let num: usize = caps[1].parse().ok()?;
            if num == answers.len() + 1 && num <= n {
                answers.push(caps[2].trim().to_string());
                continue;
            }
        }
        if let Some(last) = answers.last_mut() {
            if !line.trim().is_empty() {
                if !last.is_empty() {
                    last.push('\n');
                }
                last.push_str(line.trim());
            }
        }
    }
    (answers.len() == n).then_some(answers)
}

/// Runs the analysis agents against one provider.
pub struct Analyzer<'a> {
    prompts: &'a PromptRegistry,
    provider: &'a dyn ChatProvider,
    config: &'a AnalysisConfig,
}

impl<'a> Analyzer<'a> {
    pub fn new(prompts: &'a PromptRegistry, provider: &'a dyn ChatProvider, config: &'a AnalysisConfig) -> Self {
        Self {
            prompts,
            provider,
            config,
        }
    }

    fn call(&self, role: Role, user_content: String) -> Result<String, ProviderError> {
        let request = ChatRequest::new(role, self.prompts.get(role), user_content)
            .with_temperature(self.config.temperature)
            .with_max_tokens(self.config.max_tokens);
        Ok(self.provider.complete(&request)?.text)
    }

    fn comments_block(&self, item: &NewsItem) -> String {
        let shown = item.comments.len().min(self.config.max_comments);
        let mut out = String::from("Comments:\n");
        for (i, c) in item.comments.iter().take(shown).enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, c.trim()));
        }
        if shown < item.comments.len() {
            out.push_str(&format!(
                "(truncated: showing the first {shown} of {} comments)\n",
                item.comments.len()
            ));
        }
        out.trim_end().to_string()
    }

    fn comment_input(&self, item: &NewsItem) -> String {
        format!("News:\n{}\n\n{}", item.content, self.comments_block(item))
    }

    fn fact_input(&self, item: &NewsItem, evidence: &EvidenceSet) -> String {
        format!("News:\n{}\n\nEvidence:\n{}", item.content, evidence.render())
    }

    /// What the originating agent originally saw.
    fn original_input(&self, item: &NewsItem, kind: ReportKind, context: ReflectionContext<'_>) -> String {
        match (kind, context) {
            (ReportKind::Linguistic, _) => item.content.clone(),
            (ReportKind::Comment, _) => self.comment_input(item),
            (ReportKind::Fact, ReflectionContext::Evidence(e)) => self.fact_input(item, e),
            (ReportKind::Fact, _) => self.fact_input(item, &EvidenceSet::default()),
        }
    }

    pub fn analyze_linguistic(&self, item: &NewsItem) -> Result<AnalysisReport, AnalysisError> {
        let body = self.call(Role::Linguistic, item.content.clone())?;
        Ok(AnalysisReport::new(ReportKind::Linguistic, body))
    }

    pub fn analyze_comments(&self, item: &NewsItem) -> Result<AnalysisReport, AnalysisError> {
        if !item.has_comments() {
            return Err(AnalysisError::NoComments(item.id.clone()));
        }
        let body = self.call(Role::Comment, self.comment_input(item))?;
        Ok(AnalysisReport::new(ReportKind::Comment, body))
    }

    pub fn generate_fact_questions(&self, item: &NewsItem) -> Result<Vec<String>, AnalysisError> {
        let text = self.call(Role::FactQuestion, item.content.clone())?;
        parse_question_list(&text, self.config.max_fact_questions)
    }

    pub fn check_facts(&self, item: &NewsItem, evidence: &EvidenceSet) -> Result<AnalysisReport, AnalysisError> {
        let body = self.call(Role::FactCheck, self.fact_input(item, evidence))?;
        Ok(AnalysisReport::new(ReportKind::Fact, body))
    }

    /// Asks the questioning agent what the report overlooked.
    pub fn reflect(
        &self,
        item: &NewsItem,
        report: &AnalysisReport,
        context: ReflectionContext<'_>,
    ) -> Result<Vec<String>, AnalysisError> {
        let mut input = format!("News:\n{}\n\n", item.content);
        match (report.kind, context) {
            (ReportKind::Comment, _) => {
                input.push_str(&self.comments_block(item));
                input.push_str("\n\n");
            }
            (ReportKind::Fact, ReflectionContext::Evidence(e)) => {
                input.push_str(&format!("Evidence:\n{}\n\n", e.render()));
            }
            _ => {}
        }
        input.push_str(&format!(
            "{}:\n{}\n\nPose at most {} targeted questions about aspects this report overlooked, one per line.",
            report.kind.title(),
            report.body,
            self.config.max_reflection_questions
        ));
        let text = self.call(Role::Questioning, input)?;
        parse_question_list(&text, self.config.max_reflection_questions)
    }

    /// Re-invokes the originating agent to answer its reflection questions.
    /// Returns one answer per question plus any parse warning.
    pub fn respond_to_reflection(
        &self,
        item: &NewsItem,
        report: &AnalysisReport,
        questions: &[String],
        context: ReflectionContext<'_>,
    ) -> Result<(Vec<String>, Option<String>), AnalysisError> {
        if questions.is_empty() {
            return Ok((Vec::new(), None));
        }
        let numbered: String = questions
            .iter()
            .enumerate()
            .map(|(i, q)| format!("{}. {q}\n", i + 1))
            .collect();
        let input = format!(
            "{}\n\nYour previous report:\n{}\n\nAnswer each of the following questions, numbering your answers to match:\n{}",
            self.original_input(item, report.kind, context),
            report.body,
            numbered.trim_end()
        );
        let blob = self.call(report.kind.role(), input)?;
        match parse_numbered_answers(&blob, questions.len()) {
            Some(answers) => Ok((answers, None)),
            None => {
                let mut answers = vec![String::new(); questions.len()];
                answers[0] = blob.trim().to_string();
                Ok((
                    answers,
                    Some(format!(
                        "{}: could not split reflection answers; stored the whole response as answer 1",
                        report.kind.title()
                    )),
                ))
            }
        }
    }

    /// Full analysis of one item. A failing section is dropped with a
    /// warning; at least one section must survive.
    pub fn analyze_full(&self, item: &NewsItem, retriever: &Retriever) -> Result<MultiDimReport, AnalysisError> {
        let mut warnings = Vec::new();
        let mut sections = Vec::new();

        match self.analyze_linguistic(item) {
            Ok(r) => sections.push(r),
            Err(e) => warnings.push(format!("linguistic analysis failed: {e}")),
        }
        if item.has_comments() {
            match self.analyze_comments(item) {
                Ok(r) => sections.push(r),
                Err(e) => warnings.push(format!("comment analysis failed: {e}")),
            }
        }
        let questions = match self.generate_fact_questions(item) {
            Ok(q) => q,
            Err(e) => {
                warnings.push(format!("fact questions unavailable: {e}"));
                Vec::new()
            }
        };
        let (evidence, evidence_warnings) = retriever.gather(item, &questions);
        warnings.extend(evidence_warnings);
        match self.check_facts(item, &evidence) {
            Ok(r) => sections.push(r),
            Err(e) => warnings.push(format!("fact checking failed: {e}")),
        }
        if sections.is_empty() {
            return Err(AnalysisError::AllSectionsFailed(item.id.clone()));
        }

        if self.config.reflection_rounds > 0 {
            for section in &mut sections {
                if section.body.trim().is_empty() {
                    continue;
                }
                let context = match section.kind {
                    ReportKind::Linguistic => ReflectionContext::None,
                    ReportKind::Comment => ReflectionContext::Comments,
                    ReportKind::Fact => ReflectionContext::Evidence(&evidence),
                };
                let qs = match self.reflect(item, section, context) {
                    Ok(q) => q,
                    Err(e) => {
                        warnings.push(format!("{}: reflection failed: {e}", section.kind.title()));
                        continue;
                    }
                };
                if qs.is_empty() {
                    continue;
                }
                match self.respond_to_reflection(item, section, &qs, context) {
                    Ok((answers, warning)) => {
                        section.warnings.extend(warning);
                        section.reflection_questions = qs;
                        section.reflection_answers = answers;
                    }
                    Err(e) => warnings.push(format!("{}: reflection answers failed: {e}", section.kind.title())),
                }
            }
        }

        for w in &warnings {
            tracing::warn!(item = %item.id, "{w}");
        }
        let mut report = compose(item, sections)?;
        report.warnings = warnings;
        Ok(report)
    }
}

const REFLECTION_HEADER: &str = "---- reflection ----";

/// Deterministic composition: sections in Linguistic, Comment, Fact order,
/// each as a header, the body, then numbered Q/A pairs.
pub fn compose(item: &NewsItem, sections: Vec<AnalysisReport>) -> Result<MultiDimReport, AnalysisError> {
    if sections.is_empty() {
        return Err(AnalysisError::NoSections);
    }
    let mut sections = sections;
    sections.sort_by_key(|s| s.kind);
    let mut text = String::new();
    for s in &sections {
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&s.kind.header());
        text.push('\n');
        text.push_str(s.body.trim());
        text.push('\n');
        if !s.reflection_questions.is_empty() {
            text.push_str(REFLECTION_HEADER);
            text.push('\n');
            for (i, (q, a)) in s
                .reflection_questions
                .iter()
                .zip(&s.reflection_answers)
                .enumerate()
            {
                text.push_str(&format!("Q{}: {}\nA{}: {}\n", i + 1, q.trim(), i + 1, a.trim()));
            }
        }
    }
    Ok(MultiDimReport {
        item_id: item.id.clone(),
        sections,
        composed_text: text,
        warnings: Vec::new(),
    })
}

/// Recovers `(kind, body)` pairs from composed text.
pub fn parse_composed(text: &str) -> Vec<(ReportKind, String)> {
    let mut out: Vec<(ReportKind, String)> = Vec::new();
    let mut in_body = false;
    for line in text.lines() {
        if let Some(kind) = ReportKind::ALL.into_iter().find(|k| line == k.header()) {
            out.push((kind, String::new()));
            in_body = true;
            continue;
        }
        if line == REFLECTION_HEADER {
            in_body = false;
            continue;
        }
        if in_body {
            if let Some((_, body)) = out.last_mut() {
                if !body.is_empty() {
                    body.push('\n');
                }
                body.push_str(line);
            }
        }
    }
    for (_, body) in &mut out {
        *body = body.trim().to_string();
    }
    out
}
