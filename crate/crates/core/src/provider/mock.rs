use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::transcript::TranscriptRecord;
use super::{preview, CacheKey, ChatProvider, ChatRequest, ChatResponse, ProviderError, Role, Usage};

/// How a script entry selects requests. Matching is against `user_content`,
/// except [`Matcher::Key`], which compares the full request digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Any,
    Exact(String),
    Contains(String),
    Key(CacheKey),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Text(String),
    /// Simulated upstream failure with an HTTP status.
    Status(u16),
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// `None` matches any role.
    #[serde(default)]
    pub role: Option<Role>,
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub reply: Reply,
    #[serde(default)]
    pub usage: Usage,
}

impl ScriptEntry {
    pub fn text(role: Role, matcher: Matcher, text: impl Into<String>) -> Self {
        Self {
            role: Some(role),
            matcher,
            reply: Reply::Text(text.into()),
            usage: Usage::default(),
        }
    }

    pub fn failure(role: Role, matcher: Matcher, status: u16) -> Self {
        Self {
            role: Some(role),
            matcher,
            reply: Reply::Status(status),
            usage: Usage::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptLine {
    Recorded(TranscriptRecord),
    Entry(ScriptEntry),
}

/// Deterministic scripted backend. Entries are tried in declaration order and
/// the first match wins. Every request is captured for inspection.
#[derive(Debug)]
pub struct ScriptedMock {
    endpoint: String,
    entries: Vec<ScriptEntry>,
    calls: AtomicUsize,
    captured: Mutex<Vec<ChatRequest>>,
}

impl ScriptedMock {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self::with_endpoint("mock", entries)
    }

    pub fn with_endpoint(endpoint: impl Into<String>, entries: Vec<ScriptEntry>) -> Self {
        Self {
            endpoint: endpoint.into(),
            entries,
            calls: AtomicUsize::new(0),
            captured: Mutex::new(Vec::new()),
        }
    }

    /// Replays transcript records by exact request digest.
    pub fn from_transcript(records: &[TranscriptRecord]) -> Self {
        let endpoint = records
            .first()
            .map(|r| r.endpoint.clone())
            .unwrap_or_else(|| "mock".to_string());
        let entries = records
            .iter()
            .map(|r| ScriptEntry {
                role: Some(r.request.role),
                matcher: Matcher::Key(r.key.clone()),
                reply: Reply::Text(r.text.clone()),
                usage: r.usage,
            })
            .collect();
        Self::with_endpoint(endpoint, entries)
    }

    /// Loads a line-delimited script file. Each line is either a script entry
    /// (`{"role":..,"match":..,"reply":..}`) or a transcript record; a file
    /// made only of transcript records replays under the recorded endpoint.
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(line).map_err(|e| {
                ProviderError::InvalidRequest(format!("{}:{}: {e}", path.display(), idx + 1))
            })?;
            match parsed {
                ScriptLine::Recorded(r) => records.push(r),
                ScriptLine::Entry(e) => entries.push(e),
            }
        }
        if entries.is_empty() {
            return Ok(Self::from_transcript(&records));
        }
        let mut mock = Self::from_transcript(&records);
        mock.entries.extend(entries);
        Ok(mock)
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn captured(&self) -> Vec<ChatRequest> {
        self.captured.lock().expect("capture lock").clone()
    }

    pub fn captured_for(&self, role: Role) -> Vec<ChatRequest> {
        self.captured()
            .into_iter()
            .filter(|r| r.role == role)
            .collect()
    }

    fn matches(entry: &ScriptEntry, request: &ChatRequest, key: &CacheKey) -> bool {
        if entry.role.is_some_and(|r| r != request.role) {
            return false;
        }
        match &entry.matcher {
            Matcher::Any => true,
            Matcher::Exact(s) => request.user_content == *s,
            Matcher::Contains(s) => request.user_content.contains(s.as_str()),
            Matcher::Key(k) => k == key,
        }
    }
}

impl ChatProvider for ScriptedMock {
    fn endpoint_id(&self) -> &str {
        &self.endpoint
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.captured
            .lock()
            .expect("capture lock")
            .push(request.clone());
        let key = CacheKey::for_request(&self.endpoint, request);
        let entry = self
            .entries
            .iter()
            .find(|e| Self::matches(e, request, &key))
            .ok_or_else(|| ProviderError::NotScripted {
                role: request.role,
                preview: preview(&request.user_content),
            })?;
        match &entry.reply {
            Reply::Text(t) => Ok(ChatResponse::fresh(t.clone(), entry.usage)),
            Reply::Status(status) if *status >= 500 => Err(ProviderError::Upstream5xx {
                status: *status,
                body: "scripted failure".into(),
            }),
            Reply::Status(status) => Err(ProviderError::Upstream4xx {
                status: *status,
                body: "scripted failure".into(),
            }),
            Reply::Timeout => Err(ProviderError::Timeout),
        }
    }
}
