//! External evidence for fact checking: search clues, encyclopedia facts,
//! and their assembly into a budgeted evidence set.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::NewsItem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClueSource {
    Search,
    Encyclopedia,
    Fixture,
}

impl ClueSource {
    fn tag(self) -> &'static str {
        match self {
            ClueSource::Search => "search",
            ClueSource::Encyclopedia => "encyclopedia",
            ClueSource::Fixture => "fixture",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clue {
    pub source: ClueSource,
    pub query: String,
    pub title: String,
    pub snippet: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl Clue {
    /// Characters charged against the evidence budget.
    pub fn char_len(&self) -> usize {
        self.title.chars().count() + self.snippet.chars().count()
    }

    fn dedup_key(&self) -> (String, String) {
        (self.title.clone(), self.snippet.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub item_id: String,
    pub clues: Vec<Clue>,
    pub total_chars: usize,
}

pub const NO_EVIDENCE_MARKER: &str = "no external evidence found";

impl EvidenceSet {
    pub fn is_empty(&self) -> bool {
        self.clues.is_empty()
    }

    /// Prompt rendering; every line carries its source tag.
    pub fn render(&self) -> String {
        if self.clues.is_empty() {
            return format!("({NO_EVIDENCE_MARKER})");
        }
        self.clues
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut line = format!("{}. [{}] {}: {}", i + 1, c.source.tag(), c.title, c.snippet);
                if let Some(url) = &c.url {
                    line.push_str(&format!(" ({url})"));
                }
                line
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("search backend error: {0}")]
    Backend(String),
    #[error("every search query failed")]
    AllQueriesFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
    #[serde(default)]
    pub url: Option<String>,
}

pub trait SearchBackend: Send + Sync {
    fn source(&self) -> ClueSource;
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, EvidenceError>;
}

pub trait EncyclopediaBackend: Send + Sync {
    /// Returns `(title, summary, url)` for a title, or `None` on a miss.
    fn lookup(&self, title: &str) -> Result<Option<SearchHit>, EvidenceError>;
}

/// Lower-cases and replaces every run of non-alphanumeric characters with a
/// single `_`. Used to name fixture files.
pub fn normalize_query(query: &str) -> String {
    let mut out = String::new();
    let mut pending_sep = false;
    for ch in query.trim().chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(ch);
        } else {
            pending_sep = true;
        }
    }
    out.chars().take(100).collect()
}

/// Search fixtures: `<dir>/<normalized query>.json` holding an array of
/// `{title, snippet, url}`. A missing file is a backend error for that query.
pub struct FixtureSearch {
    dir: PathBuf,
}

impl FixtureSearch {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, query: &str) -> PathBuf {
        self.dir.join(format!("{}.json", normalize_query(query)))
    }
}

impl SearchBackend for FixtureSearch {
    fn source(&self) -> ClueSource {
        ClueSource::Fixture
    }

    fn search(&self, query: &str) -> Result<Vec<SearchHit>, EvidenceError> {
        let path = self.path_for(query);
        let text = fs::read_to_string(&path)
            .map_err(|e| EvidenceError::Backend(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| EvidenceError::Backend(format!("{}: {e}", path.display())))
    }
}

/// Encyclopedia fixtures: `<dir>/<normalized title>.txt` holding the summary.
pub struct FixtureEncyclopedia {
    dir: PathBuf,
}

impl FixtureEncyclopedia {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl EncyclopediaBackend for FixtureEncyclopedia {
    fn lookup(&self, title: &str) -> Result<Option<SearchHit>, EvidenceError> {
        let norm = normalize_query(title);
        if norm.is_empty() {
            return Ok(None);
        }
        match fs::read_to_string(self.dir.join(format!("{norm}.txt"))) {
            Ok(summary) if !summary.trim().is_empty() => Ok(Some(SearchHit {
                title: title.to_string(),
                snippet: summary.trim().to_string(),
                url: None,
            })),
            Ok(_) => Ok(None),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(EvidenceError::Backend(e.to_string())),
        }
    }
}

/// A JSON search API returning `{"items": [{"title", "snippet", "link"}]}`
/// for `GET <endpoint>?q=<query>&key=<key>`.
pub struct HttpSearch {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpSearch {
    pub fn new(endpoint: impl Into<String>, api_key_env: Option<&str>) -> Result<Self, EvidenceError> {
        let api_key = match api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                EvidenceError::Backend(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(Self {
            endpoint: endpoint.into(),
            api_key,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        })
    }
}

impl SearchBackend for HttpSearch {
    fn source(&self) -> ClueSource {
        ClueSource::Search
    }

    fn search(&self, query: &str) -> Result<Vec<SearchHit>, EvidenceError> {
        let mut req = self.agent.get(&self.endpoint).query("q", query);
        if let Some(key) = &self.api_key {
            req = req.query("key", key);
        }
        let value: serde_json::Value = req
            .call()
            .map_err(|e| EvidenceError::Backend(e.to_string()))?
            .into_json()
            .map_err(|e| EvidenceError::Backend(e.to_string()))?;
        Ok(value
            .get("items")
            .and_then(|v| v.as_array())
            .map(|items| {
                items
                    .iter()
                    .filter_map(|it| {
                        let snippet = it.get("snippet")?.as_str()?.trim().to_string();
                        (!snippet.is_empty()).then(|| SearchHit {
                            title: it.get("title").and_then(|t| t.as_str()).unwrap_or("").to_string(),
                            snippet,
                            url: it.get("link").and_then(|t| t.as_str()).map(str::to_string),
                        })
                    })
                    .collect()
            })
            .unwrap_or_default())
    }
}

/// The public wiki REST summary endpoint (`/api/rest_v1/page/summary/<title>`).
pub struct WikiSummary {
    base_url: String,
    agent: ureq::Agent,
}

impl WikiSummary {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }
}

impl EncyclopediaBackend for WikiSummary {
    fn lookup(&self, title: &str) -> Result<Option<SearchHit>, EvidenceError> {
        let url = format!(
            "{}/api/rest_v1/page/summary/{}",
            self.base_url.trim_end_matches('/'),
            title.trim().replace(' ', "_")
        );
        let value: serde_json::Value = match self.agent.get(&url).call() {
            Ok(resp) => resp
                .into_json()
                .map_err(|e| EvidenceError::Backend(e.to_string()))?,
            Err(ureq::Error::Status(404, _)) => return Ok(None),
            Err(e) => return Err(EvidenceError::Backend(e.to_string())),
        };
        let extract = value.get("extract").and_then(|v| v.as_str()).unwrap_or("").trim();
        if extract.is_empty() {
            return Ok(None);
        }
        Ok(Some(SearchHit {
            title: value
                .get("title")
                .and_then(|v| v.as_str())
                .unwrap_or(title)
                .to_string(),
            snippet: extract.to_string(),
            url: value
                .pointer("/content_urls/desktop/page")
                .and_then(|v| v.as_str())
                .map(str::to_string),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchConfig {
    None,
    Fixture { dir: PathBuf },
    Http { endpoint: String, api_key_env: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncyclopediaConfig {
    None,
    Fixture { dir: PathBuf },
    Wiki { base_url: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvidenceConfig {
    pub search: SearchConfig,
    pub encyclopedia: EncyclopediaConfig,
    /// Results kept per search query.
    pub per_query_k: usize,
    /// Encyclopedia articles kept per item.
    pub per_item_m: usize,
    pub char_budget: usize,
    /// Lookup titles considered per item.
    pub max_lookup_titles: usize,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self {
            search: SearchConfig::None,
            encyclopedia: EncyclopediaConfig::None,
            per_query_k: 3,
            per_item_m: 2,
            char_budget: 6000,
            max_lookup_titles: 5,
        }
    }
}

impl EvidenceConfig {
    /// Resolves relative fixture directories against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let SearchConfig::Fixture { dir } = &mut self.search {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        if let EncyclopediaConfig::Fixture { dir } = &mut self.encyclopedia {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
    }
}

/// Search and encyclopedia backends plus their limits.
pub struct Retriever {
    search: Option<Box<dyn SearchBackend>>,
    encyclopedia: Option<Box<dyn EncyclopediaBackend>>,
    config: EvidenceConfig,
}

impl Retriever {
    pub fn new(
        search: Option<Box<dyn SearchBackend>>,
        encyclopedia: Option<Box<dyn EncyclopediaBackend>>,
        config: EvidenceConfig,
    ) -> Self {
        Self {
            search,
            encyclopedia,
            config,
        }
    }

    /// A retriever with no backends; fact checking sees empty evidence.
    pub fn disabled() -> Self {
        Self::new(None, None, EvidenceConfig::default())
    }

    pub fn from_config(config: &EvidenceConfig) -> Result<Self, EvidenceError> {
        let search: Option<Box<dyn SearchBackend>> = match &config.search {
            SearchConfig::None => None,
            SearchConfig::Fixture { dir } => Some(Box::new(FixtureSearch::new(dir.clone()))),
            SearchConfig::Http {
                endpoint,
                api_key_env,
            } => Some(Box::new(HttpSearch::new(endpoint.clone(), api_key_env.as_deref())?)),
        };
        let encyclopedia: Option<Box<dyn EncyclopediaBackend>> = match &config.encyclopedia {
            EncyclopediaConfig::None => None,
            EncyclopediaConfig::Fixture { dir } => Some(Box::new(FixtureEncyclopedia::new(dir.clone()))),
            EncyclopediaConfig::Wiki { base_url } => Some(Box::new(WikiSummary::new(base_url.clone()))),
        };
        Ok(Self::new(search, encyclopedia, config.clone()))
    }

    pub fn config(&self) -> &EvidenceConfig {
        &self.config
    }

    /// Runs each query, keeping at most `per_query_k` hits per query.
    /// Failed queries are logged and contribute nothing; only a total failure
    /// is an error.
    pub fn search(&self, queries: &[String]) -> Result<Vec<Clue>, EvidenceError> {
        let Some(backend) = &self.search else {
            return Ok(Vec::new());
        };
        let mut clues = Vec::new();
        let mut seen = HashSet::new();
        let mut failures = 0;
        for query in queries {
            match backend.search(query) {
                Ok(hits) => {
                    for hit in hits.into_iter().take(self.config.per_query_k) {
                        if hit.snippet.trim().is_empty() {
                            continue;
                        }
                        let clue = Clue {
                            source: backend.source(),
                            query: query.clone(),
                            title: hit.title,
                            snippet: hit.snippet,
                            url: hit.url,
                        };
                        if seen.insert(clue.dedup_key()) {
                            clues.push(clue);
                        }
                    }
                }
                Err(e) => {
                    failures += 1;
                    tracing::warn!(query = %query, error = %e, "search query failed");
                }
            }
        }
        if !queries.is_empty() && failures == queries.len() {
            return Err(EvidenceError::AllQueriesFailed);
        }
        Ok(clues)
    }

    /// Looks up article summaries for titles taken from the fact questions,
    /// falling back to capitalized spans of the content.
    pub fn encyclopedia_lookup(&self, item: &NewsItem, questions: &[String]) -> Vec<Clue> {
        let Some(backend) = &self.encyclopedia else {
            return Vec::new();
        };
        let mut titles = question_titles(questions);
        if titles.is_empty() {
            titles = content_titles(&item.content);
        }
        titles.truncate(self.config.max_lookup_titles);
        let mut clues = Vec::new();
        for title in titles {
            if clues.len() >= self.config.per_item_m {
                break;
            }
            match backend.lookup(&title) {
                Ok(Some(hit)) => clues.push(Clue {
                    source: ClueSource::Encyclopedia,
                    query: title,
                    title: hit.title,
                    snippet: hit.snippet,
                    url: hit.url,
                }),
                Ok(None) => {}
                Err(e) => tracing::warn!(title = %title, error = %e, "encyclopedia lookup failed"),
            }
        }
        clues
    }

    /// Search plus encyclopedia lookup, assembled under the budget. A failed
    /// search degrades to encyclopedia-only evidence.
    pub fn gather(&self, item: &NewsItem, questions: &[String]) -> (EvidenceSet, Vec<String>) {
        let mut warnings = Vec::new();
        let search = match self.search(questions) {
            Ok(c) => c,
            Err(e) => {
                warnings.push(format!("search unavailable: {e}"));
                Vec::new()
            }
        };
        let ency = self.encyclopedia_lookup(item, questions);
        let mut set = assemble(search, ency, self.config.char_budget);
        set.item_id = item.id.clone();
        (set, warnings)
    }
}

const QUESTION_WORDS: &[&str] = &[
    "did", "does", "do", "is", "are", "was", "were", "has", "have", "had", "will", "would", "can",
    "could", "should", "shall", "may", "might", "must",
];

const ARTICLES: &[&str] = &["the", "a", "an"];

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

fn clean_token(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric() && c != '-' && c != '\'')
}

/// Maximal runs of capitalized tokens with at least `min_words` words.
fn capitalized_spans(text: &str, min_words: usize, skip_leading_question_word: bool) -> Vec<String> {
    let mut spans = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, spans: &mut Vec<String>| {
        if current.len() >= min_words {
            spans.push(current.join(" "));
        }
        current.clear();
    };
    for (idx, raw) in text.split_whitespace().enumerate() {
        let token = clean_token(raw);
        let lower = token.to_lowercase();
        let skip = (idx == 0 && skip_leading_question_word && QUESTION_WORDS.contains(&lower.as_str()))
            || (current.is_empty() && ARTICLES.contains(&lower.as_str()));
        if skip {
            flush(&mut current, &mut spans);
        } else if !token.is_empty() && is_capitalized(token) {
            current.push(token);
        } else {
            flush(&mut current, &mut spans);
        }
        // A span never crosses a sentence or clause boundary.
        if raw.ends_with([',', '.', ';', ':', '?', '!']) {
            flush(&mut current, &mut spans);
        }
    }
    flush(&mut current, &mut spans);
    spans
}

fn dedup(titles: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    titles.into_iter().filter(|t| seen.insert(t.clone())).collect()
}

/// Capitalized phrases in the fact questions, question words excluded.
pub fn question_titles(questions: &[String]) -> Vec<String> {
    dedup(
        questions
            .iter()
            .flat_map(|q| capitalized_spans(q, 1, true))
            .collect(),
    )
}

/// Capitalized multi-word spans in the content, first five.
pub fn content_titles(content: &str) -> Vec<String> {
    let mut titles = dedup(capitalized_spans(content, 2, false));
    titles.truncate(5);
    titles
}

/// Deduplicates by (title, snippet), orders encyclopedia facts before search
/// clues, and keeps the longest prefix that fits within `budget` characters.
pub fn assemble(search: Vec<Clue>, encyclopedia: Vec<Clue>, budget: usize) -> EvidenceSet {
    let mut seen = HashSet::new();
    let mut clues = Vec::new();
    let mut total = 0;
    for clue in encyclopedia.into_iter().chain(search) {
        if !seen.insert(clue.dedup_key()) {
            continue;
        }
        let len = clue.char_len();
        if total + len > budget {
            break;
        }
        total += len;
        clues.push(clue);
    }
    EvidenceSet {
        item_id: String::new(),
        clues,
        total_chars: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Verdict;

    fn clue(source: ClueSource, title: &str, snippet: &str) -> Clue {
        Clue {
            source,
            query: "q".into(),
            title: title.into(),
            snippet: snippet.into(),
            url: None,
        }
    }

    fn item(content: &str) -> NewsItem {
        NewsItem {
            id: "n1".into(),
            content: content.into(),
            comments: vec![],
            label: Verdict::Fake,
            domain: "d".into(),
        }
    }

    fn write_search_fixture(dir: &Path, query: &str, hits: &[(&str, &str)]) {
        let hits: Vec<SearchHit> = hits
            .iter()
            .map(|(t, s)| SearchHit {
                title: t.to_string(),
                snippet: s.to_string(),
                url: Some(format!("https://example.org/{t}")),
            })
            .collect();
        fs::write(
            FixtureSearch::new(dir).path_for(query),
            serde_json::to_string(&hits).unwrap(),
        )
        .unwrap();
    }

    fn fixture_retriever(dir: &Path) -> Retriever {
        Retriever::from_config(&EvidenceConfig {
            search: SearchConfig::Fixture { dir: dir.join("search") },
            encyclopedia: EncyclopediaConfig::Fixture { dir: dir.join("wiki") },
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn normalize_query_is_stable() {
        assert_eq!(normalize_query("Did X happen?"), "did_x_happen");
        assert_eq!(normalize_query("  Eiffel   Tower "), "eiffel_tower");
        assert_eq!(normalize_query("???"), "");
        assert_eq!(normalize_query("北京 下雨了吗？"), "北京_下雨了吗");
    }

    #[test]
    fn fixture_hit_yields_fixture_clues() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("search")).unwrap();
        write_search_fixture(&dir.path().join("search"), "Did X happen?", &[("a", "one"), ("b", "two")]);
        let r = fixture_retriever(dir.path());
        let clues = r.search(&["Did X happen?".to_string()]).unwrap();
        assert_eq!(clues.len(), 2);
        assert!(clues.iter().all(|c| c.source == ClueSource::Fixture));
    }

    #[test]
    fn miss_degrades_and_duplicates_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let sdir = dir.path().join("search");
        fs::create_dir_all(&sdir).unwrap();
        write_search_fixture(&sdir, "q1", &[("a", "one"), ("shared", "same")]);
        write_search_fixture(&sdir, "q2", &[("shared", "same"), ("c", "three")]);
        let r = fixture_retriever(dir.path());

        let clues = r.search(&["q1".into(), "missing".into()]).unwrap();
        assert_eq!(clues.len(), 2);

        let clues = r.search(&["q1".into(), "q2".into()]).unwrap();
        let titles: Vec<_> = clues.iter().map(|c| c.title.as_str()).collect();
        assert_eq!(titles, vec!["a", "shared", "c"]);

        assert!(matches!(
            r.search(&["nope".into(), "nada".into()]),
            Err(EvidenceError::AllQueriesFailed)
        ));
        // All-empty results are not failures.
        write_search_fixture(&sdir, "empty", &[]);
        assert!(r.search(&["empty".into()]).unwrap().is_empty());
    }

    #[test]
    fn per_query_cap_applies() {
        let dir = tempfile::tempdir().unwrap();
        let sdir = dir.path().join("search");
        fs::create_dir_all(&sdir).unwrap();
        write_search_fixture(&sdir, "q", &[("1", "a"), ("2", "b"), ("3", "c"), ("4", "d")]);
        let r = fixture_retriever(dir.path());
        assert_eq!(r.search(&["q".into()]).unwrap().len(), 3);
    }

    #[test]
    fn encyclopedia_fixture_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let wdir = dir.path().join("wiki");
        fs::create_dir_all(&wdir).unwrap();
        fs::write(wdir.join("eiffel_tower.txt"), "Wrought-iron lattice tower in Paris.").unwrap();
        let r = fixture_retriever(dir.path());

        let news = item("Tourists say the Eiffel Tower was painted pink overnight.");
        let clues = r.encyclopedia_lookup(&news, &[]);
        assert_eq!(clues.len(), 1);
        assert_eq!(clues[0].source, ClueSource::Encyclopedia);
        assert_eq!(clues[0].title, "Eiffel Tower");

        assert!(r.encyclopedia_lookup(&item("nothing capitalized here at all"), &[]).is_empty());

        let questions = vec!["Was the Eiffel Tower repainted by Acme Paints?".to_string()];
        assert_eq!(question_titles(&questions), vec!["Eiffel Tower", "Acme Paints"]);
        assert_eq!(r.encyclopedia_lookup(&news, &questions).len(), 1);
    }

    #[test]
    fn assemble_orders_encyclopedia_first() {
        let set = assemble(
            vec![clue(ClueSource::Search, "s1", "x"), clue(ClueSource::Search, "s2", "y")],
            vec![clue(ClueSource::Encyclopedia, "e1", "z")],
            6000,
        );
        assert_eq!(set.clues.len(), 3);
        assert_eq!(set.clues[0].source, ClueSource::Encyclopedia);
        assert_eq!(set.total_chars, 9);
    }

    #[test]
    fn assemble_truncates_on_clue_boundary() {
        // Three clues of 3000 characters each (title "tNN" + 2997-char snippet).
        let clues: Vec<Clue> = (0..3)
            .map(|i| clue(ClueSource::Search, &format!("t{i:02}"), &"x".repeat(2997)))
            .collect();
        assert_eq!(clues.iter().map(Clue::char_len).sum::<usize>(), 9000);
        let set = assemble(clues.clone(), vec![], 6000);
        assert_eq!(set.clues, clues[..2].to_vec());
        assert_eq!(set.total_chars, 6000);

        let set = assemble(clues.clone(), vec![], 5999);
        assert_eq!(set.clues.len(), 1);
        assert_eq!(set.total_chars, 3000);
    }

    #[test]
    fn empty_evidence_renders_marker() {
        let set = assemble(vec![], vec![], 6000);
        assert!(set.is_empty());
        assert!(set.render().contains(NO_EVIDENCE_MARKER));
    }

    #[test]
    fn rendering_attributes_every_clue() {
        let set = assemble(
            vec![clue(ClueSource::Search, "s", "a"), clue(ClueSource::Fixture, "f", "b")],
            vec![clue(ClueSource::Encyclopedia, "e", "c")],
            100,
        );
        let text = set.render();
        assert!(text.contains("[encyclopedia] e: c"));
        assert!(text.contains("[search] s: a"));
        assert!(text.contains("[fixture] f: b"));
    }

    #[test]
    fn gather_falls_back_to_encyclopedia_when_search_is_down() {
        let dir = tempfile::tempdir().unwrap();
        let wdir = dir.path().join("wiki");
        fs::create_dir_all(&wdir).unwrap();
        fs::write(wdir.join("eiffel_tower.txt"), "Tower in Paris.").unwrap();
        // search dir does not exist: every query fails
        let r = fixture_retriever(dir.path());
        let news = item("The Eiffel Tower closed.");
        let (set, warnings) = r.gather(&news, &["Did the Eiffel Tower close?".into()]);
        assert_eq!(set.clues.len(), 1);
        assert_eq!(set.item_id, "n1");
        assert_eq!(warnings.len(), 1);
    }

    proptest::proptest! {
        #[test]
        fn budget_is_never_exceeded(
            lens in proptest::collection::vec(1usize..500, 0..30),
            budget in 0usize..4000,
        ) {
            let clues: Vec<Clue> = lens
                .iter()
                .enumerate()
                .map(|(i, &n)| clue(ClueSource::Search, &i.to_string(), &"y".repeat(n)))
                .collect();
            let set = assemble(clues, vec![], budget);
            proptest::prop_assert!(set.total_chars <= budget);
            proptest::prop_assert_eq!(
                set.total_chars,
                set.clues.iter().map(Clue::char_len).sum::<usize>()
            );
        }
    }
}
