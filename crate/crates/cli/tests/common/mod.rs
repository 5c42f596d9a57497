#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use misinfo_core::prompts::sha256_hex;
use misinfo_core::provider::{ChatProvider, ChatRequest, ChatResponse, ProviderError, Recorder, Role, Usage};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

fn h(parts: &[&str]) -> u64 {
    let digest = sha256_hex(&parts.join("\u{1f}"));
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let after = text.split_once(start).map(|(_, r)| r).unwrap_or("");
    after.split_once(end).map(|(l, _)| l).unwrap_or(after)
}

/// A deterministic stand-in for a hosted model. Items whose content says
/// "secretly" are fake; each rule mislabels a rule-specific share of items,
/// so optimization has something to improve.
pub struct SimulatedProvider;

impl SimulatedProvider {
    fn reflection_answers(content: &str) -> String {
        let list = content.rsplit_once("numbering your answers to match:\n").map(|(_, r)| r).unwrap_or("");
        let n = list.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count();
        (1..=n.max(1))
            .map(|i| format!("{i}. On reflection, point {i} does not change the assessment."))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn judge(content: &str) -> String {
        let rule = between(content, "Decision rule:\n", "\n\nQuery news:");
        let query = between(content, "Query news:\n", "\n\nMulti-dimensional analysis report:");
        let signal = if query.contains("secretly") { 1 } else { 0 };
        let error_rate = 5 + h(&[rule]) % 40;
        let roll = h(&[rule, query]) % 100;
        if roll == 99 {
            return "The evidence is mixed and I cannot decide.".into();
        }
        let verdict = if roll < error_rate { 1 - signal } else { signal };
        format!("The report and demonstrations point one way.\njudgment: {verdict}")
    }

    fn propose(request: &ChatRequest) -> String {
        const ASPECTS: [&str; 6] = [
            "source attribution",
            "emotional urgency",
            "consistency with the retrieved evidence",
            "commenter skepticism",
            "specificity of names and dates",
            "calls to share or act quickly",
        ];
        let tag = request.sample_tag.as_deref().unwrap_or("");
        let seed = h(&[&request.system_prompt, tag]);
        format!(
            "Weigh {} before anything else, then decide (variant {:04x}). Output format: judgment: 1 for fake, 0 for real.",
            ASPECTS[(seed % ASPECTS.len() as u64) as usize],
            seed >> 48
        )
    }
}

impl ChatProvider for SimulatedProvider {
    fn endpoint_id(&self) -> &str {
        "simulated"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let c = request.user_content.as_str();
        let suspicious = c.contains("secretly");
        let text = if c.contains("Answer each of the following questions") {
            Self::reflection_answers(c)
        } else {
            match request.role {
                Role::Linguistic if suspicious => "Sensational tone, an urgent call to share, and anonymous sourcing.".into(),
                Role::Linguistic => "Neutral wording with an attributed official source.".into(),
                Role::Comment if suspicious => "Commenters ask for sources and sound doubtful.".into(),
                Role::Comment => "Commenters accept the report and point to the official site.".into(),
                Role::FactQuestion => {
                    let clause = c.split_once(',').map(|(l, _)| l).unwrap_or(c);
                    format!("1. Is it documented that {clause}?")
                }
                Role::FactCheck if c.contains("debunked") => "The retrieved evidence contradicts the claim.".into(),
                Role::FactCheck if c.contains("confirm") => "The retrieved evidence supports the claim.".into(),
                Role::FactCheck => "No usable evidence was retrieved.".into(),
                Role::Questioning => {
                    "1. Does the wording alone establish the conclusion?\n2. Which detail can be verified independently?".into()
                }
                Role::Judge => Self::judge(c),
                Role::Optimizer => Self::propose(request),
            }
        };
        let usage = Usage {
            prompt_tokens: (request.system_prompt.len() + c.len()) as u64 / 4,
            completion_tokens: text.len() as u64 / 4,
        };
        Ok(ChatResponse::fresh(text, usage))
    }
}

/// Counts calls, in total and per role, before delegating.
pub struct Counting<P> {
    inner: P,
    pub total: AtomicUsize,
    by_role: Mutex<BTreeMap<Role, usize>>,
}

impl<P> Counting<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            total: AtomicUsize::new(0),
            by_role: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn role(&self, role: Role) -> usize {
        self.by_role.lock().unwrap().get(&role).copied().unwrap_or(0)
    }
}

impl<P: ChatProvider> ChatProvider for Counting<P> {
    fn endpoint_id(&self) -> &str {
        self.inner.endpoint_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.total.fetch_add(1, Ordering::SeqCst);
        *self.by_role.lock().unwrap().entry(request.role).or_default() += 1;
        self.inner.complete(request)
    }
}

/// The staged pipeline over the bundled fixture, writing into `work`.
pub fn stage_args(work: &Path, workers: usize) -> Vec<Vec<String>> {
    let fx = fixture_dir();
    let s = |p: PathBuf| p.display().to_string();
    let corpus = s(fx.join("corpus.jsonl"));
    let reports = s(work.join("reports.jsonl"));
    let common = vec![
        "misinfo".to_string(),
        "--config".into(),
        s(fx.join("run.toml")),
        "--workers".into(),
        workers.to_string(),
    ];
    let stage = |rest: &[&str]| {
        let mut v = common.clone();
        v.extend(rest.iter().map(|x| x.to_string()));
        v
    };
    vec![
        stage(&["analyze", "--data", &corpus, "--out", &reports]),
        stage(&["tasks", "--data", &corpus, "--reports", &reports, "--out", &s(work.join("tasks.jsonl"))]),
        stage(&["optimize", "--data", &corpus, "--reports", &reports, "--out", &s(work.join("optimize"))]),
        stage(&["eval", "--lodo", "--data", &corpus, "--reports", &reports, "--out", &s(work.join("lodo"))]),
    ]
}

/// Runs every stage in-process against the simulator and returns the
/// recorded transcript.
pub fn simulate_pipeline(work: &Path, workers: usize) -> String {
    let recorder = Arc::new(Recorder::new(SimulatedProvider));
    for args in stage_args(work, workers) {
        let provider: Arc<dyn ChatProvider> = recorder.clone();
        misinfo_cli::run_args(&args, Some(provider))
            .unwrap_or_else(|f| panic!("stage {:?} failed: {}", args.get(5), f.to_json()));
    }
    recorder.to_jsonl()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
